#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "rmfn/model.hpp"
#include "rmfn/optimizer.hpp"
#include "rmfn/rng.hpp"
#include "rmfn/spectral.hpp"
#include "rmfn/tensor.hpp"

using namespace rmfn;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Straight-line transcription of the recurrence, sharing no code with the
// library path: z0 = g0, z_i = g_i * (z_{i-1} W^T + b), heads + residual.
struct OracleOut {
  std::vector<std::vector<std::vector<double>>> z;  // [i][n][j]
  std::vector<std::vector<std::vector<double>>> y;  // [scale-1][n][c]
};

OracleOut oracle_forward(const RMFNModel& m, const Tensor& x) {
  const auto& cfg = m.cfg;
  const int64_t n = x.dim(0);
  OracleOut out;
  auto filt = [&](int i, int64_t row, int j) {
    double acc = m.params.at(RMFNModel::filter_key(i, "phi")).value[j];
    const Tensor& omega = m.params.at(RMFNModel::filter_key(i, "omega")).value;
    for (int k = 0; k < cfg.d_in; ++k)
      acc += kTwoPi * omega.at(j, k) * x.at(row, k);
    return std::sin(acc);
  };
  out.z.resize(static_cast<size_t>(cfg.layers) + 1);
  for (int64_t r = 0; r < n; ++r) {
    std::vector<double> z0(static_cast<size_t>(cfg.d_h));
    for (int j = 0; j < cfg.d_h; ++j) z0[static_cast<size_t>(j)] = filt(0, r, j);
    out.z[0].push_back(z0);
  }
  for (int i = 1; i <= cfg.layers; ++i) {
    const Tensor& w = m.params.at(RMFNModel::linear_key(i, "w")).value;
    for (int64_t r = 0; r < n; ++r) {
      std::vector<double> zi(static_cast<size_t>(cfg.d_h));
      for (int j = 0; j < cfg.d_h; ++j) {
        double lin = cfg.bias_free ? 0.0
                                   : m.params.at(RMFNModel::linear_key(i, "b")).value[j];
        for (int k = 0; k < cfg.d_h; ++k)
          lin += w.at(j, k) * out.z[static_cast<size_t>(i - 1)][static_cast<size_t>(r)]
                                   [static_cast<size_t>(k)];
        zi[static_cast<size_t>(j)] = filt(i, r, j) * lin;
      }
      out.z[static_cast<size_t>(i)].push_back(zi);
    }
  }
  out.y.resize(static_cast<size_t>(cfg.layers));
  for (int i = 1; i <= cfg.layers; ++i) {
    const Tensor& w = m.params.at(RMFNModel::head_key(i, "w")).value;
    for (int64_t r = 0; r < n; ++r) {
      std::vector<double> yi(static_cast<size_t>(cfg.d_out));
      for (int c = 0; c < cfg.d_out; ++c) {
        double head = cfg.bias_free ? 0.0
                                    : m.params.at(RMFNModel::head_key(i, "b")).value[c];
        for (int k = 0; k < cfg.d_h; ++k)
          head += w.at(c, k) * out.z[static_cast<size_t>(i)][static_cast<size_t>(r)]
                                    [static_cast<size_t>(k)];
        if (cfg.residual && i > 1)
          head += out.y[static_cast<size_t>(i - 2)][static_cast<size_t>(r)]
                       [static_cast<size_t>(c)];
        yi[static_cast<size_t>(c)] = head;
      }
      out.y[static_cast<size_t>(i - 1)].push_back(yi);
    }
  }
  return out;
}

void zero_param(RMFNModel& m, const std::string& key) {
  Tensor& t = m.params.at(key).value;
  for (int64_t i = 0; i < t.size(); ++i) t[i] = 0.0;
}

}  // namespace

TEST_CASE("single-unit model at the origin gives z1 = 0") {
  ModelConfig cfg;
  cfg.d_in = 1;
  cfg.d_h = 1;
  cfg.d_out = 1;
  cfg.layers = 1;
  cfg.b_max = 1.0;
  Rng rng(1);
  RMFNModel m = create_model(cfg, rng);
  m.params.at("filter0.omega").value[0] = 1.0;
  m.params.at("filter0.phi").value[0] = 0.0;
  m.params.at("filter1.omega").value[0] = 1.0;
  m.params.at("filter1.phi").value[0] = 0.0;
  m.params.at("linear1.w").value[0] = 1.0;
  m.params.at("linear1.b").value[0] = 0.0;
  Tensor x({1, 1}, {0.0});
  auto z = forward_hidden(m, x);
  CHECK(z[1][0] == doctest::Approx(0.0));  // sin(0) * (1 * sin(0)) = 0
}

TEST_CASE("zero linear weights kill every hidden layer above the base") {
  ModelConfig cfg;
  cfg.d_h = 4;
  cfg.layers = 3;
  cfg.b_max = 16.0;
  cfg.bias_free = true;
  Rng rng(2);
  RMFNModel m = create_model(cfg, rng);
  for (int i = 1; i <= 3; ++i) zero_param(m, RMFNModel::linear_key(i, "w"));
  Rng xr(3);
  Tensor x({6, 2});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = xr.uniform(-0.5, 0.5);
  auto z = forward_hidden(m, x);
  for (int i = 1; i <= 3; ++i)
    for (int64_t k = 0; k < z[static_cast<size_t>(i)].size(); ++k)
      CHECK(z[static_cast<size_t>(i)][k] == 0.0);
}

TEST_CASE("forward matches the straight-line oracle on a random 2-layer model") {
  ModelConfig cfg;
  cfg.d_in = 2;
  cfg.d_h = 5;
  cfg.d_out = 3;
  cfg.layers = 2;
  cfg.b_max = 8.0;
  Rng rng(42);
  RMFNModel m = create_model(cfg, rng);
  Rng xr(43);
  Tensor x({10, 2});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = xr.uniform(-0.5, 0.5);

  auto z = forward_hidden(m, x);
  auto y = forward_outputs(m, x);
  auto ref = oracle_forward(m, x);
  for (int i = 0; i <= 2; ++i)
    for (int64_t r = 0; r < 10; ++r)
      for (int j = 0; j < 5; ++j)
        CHECK(z[static_cast<size_t>(i)].at(r, j) ==
              doctest::Approx(ref.z[static_cast<size_t>(i)][static_cast<size_t>(r)]
                                   [static_cast<size_t>(j)])
                  .epsilon(1e-12));
  for (int s = 0; s < 2; ++s)
    for (int64_t r = 0; r < 10; ++r)
      for (int c = 0; c < 3; ++c)
        CHECK(y[static_cast<size_t>(s)].at(r, c) ==
              doctest::Approx(ref.y[static_cast<size_t>(s)][static_cast<size_t>(r)]
                                   [static_cast<size_t>(c)])
                  .epsilon(1e-12));
}

TEST_CASE("filter magnitudes never exceed one") {
  ModelConfig cfg;
  cfg.d_h = 8;
  cfg.layers = 3;
  cfg.b_max = 12.0;
  Rng rng(5);
  RMFNModel m = create_model(cfg, rng);
  Rng xr(6);
  Tensor x({50, 2});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = xr.uniform(-0.5, 0.5);
  auto g = filters_numeric(m, x);
  for (const auto& gi : g)
    for (int64_t k = 0; k < gi.size(); ++k) CHECK(std::abs(gi[k]) <= 1.0 + 1e-12);
}

TEST_CASE("all heads zero means all outputs zero") {
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.d_h = 4;
  cfg.b_max = 16.0;
  Rng rng(7);
  RMFNModel m = create_model(cfg, rng);
  for (int i = 1; i <= 3; ++i) {
    zero_param(m, RMFNModel::head_key(i, "w"));
    zero_param(m, RMFNModel::head_key(i, "b"));
  }
  Tensor x({4, 2}, {0.1, 0.2, -0.3, 0.4, 0.0, 0.0, 0.25, -0.25});
  auto y = forward_outputs(m, x);
  for (const auto& ys : y)
    for (int64_t k = 0; k < ys.size(); ++k) CHECK(ys[k] == 0.0);
}

TEST_CASE("residual pass-through: zero upper heads leave y1 everywhere") {
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.d_h = 4;
  cfg.b_max = 16.0;
  Rng rng(8);
  RMFNModel m = create_model(cfg, rng);
  for (int i = 2; i <= 3; ++i) {
    zero_param(m, RMFNModel::head_key(i, "w"));
    zero_param(m, RMFNModel::head_key(i, "b"));
  }
  Rng xr(9);
  Tensor x({12, 2});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = xr.uniform(-0.5, 0.5);
  auto y = forward_outputs(m, x);
  for (int s = 1; s < 3; ++s)
    for (int64_t k = 0; k < y[0].size(); ++k)
      CHECK(y[static_cast<size_t>(s)][k] == doctest::Approx(y[0][k]).epsilon(1e-14));
}

TEST_CASE("y3 equals y1 plus independently recomputed head deltas") {
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.d_h = 6;
  cfg.b_max = 16.0;
  Rng rng(10);
  RMFNModel m = create_model(cfg, rng);
  Rng xr(11);
  Tensor x({8, 2});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = xr.uniform(-0.5, 0.5);
  auto y = forward_outputs(m, x);
  auto z = forward_hidden(m, x);
  // Delta_i = W_out^(i) z^(i) + b_out^(i), evaluated by hand from z.
  auto delta = [&](int i, int64_t r, int c) {
    const Tensor& w = m.params.at(RMFNModel::head_key(i, "w")).value;
    double acc = m.params.at(RMFNModel::head_key(i, "b")).value[c];
    for (int k = 0; k < cfg.d_h; ++k)
      acc += w.at(c, k) * z[static_cast<size_t>(i)].at(r, k);
    return acc;
  };
  for (int64_t r = 0; r < 8; ++r) {
    CHECK(y[2].at(r, 0) ==
          doctest::Approx(y[0].at(r, 0) + delta(2, r, 0) + delta(3, r, 0))
              .epsilon(1e-12));
    // And the exact per-scale decomposition property.
    CHECK(y[2].at(r, 0) - y[1].at(r, 0) == doctest::Approx(delta(3, r, 0)).epsilon(1e-12));
  }
}

TEST_CASE("constant model fills the grid with its head bias") {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.d_h = 3;
  cfg.b_max = 4.0;
  Rng rng(12);
  RMFNModel m = create_model(cfg, rng);
  for (int i = 1; i <= 2; ++i) {
    zero_param(m, RMFNModel::head_key(i, "w"));
    zero_param(m, RMFNModel::head_key(i, "b"));
  }
  m.params.at("head1.b").value[0] = 2.5;
  Tensor grid = eval_on_grid(m, 2, {4, 4});
  REQUIRE(grid.size() == 16);
  for (int64_t i = 0; i < grid.size(); ++i)
    CHECK(grid[i] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("eval_on_grid rejects out-of-range scales") {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.d_h = 2;
  cfg.b_max = 4.0;
  Rng rng(13);
  RMFNModel m = create_model(cfg, rng);
  CHECK_THROWS_AS(eval_on_grid(m, 0, {4, 4}), std::invalid_argument);
  CHECK_THROWS_AS(eval_on_grid(m, 3, {4, 4}), std::invalid_argument);
}

TEST_CASE("a single 2-cycle sine shows up at DFT bin 2") {
  ModelConfig cfg;
  cfg.d_in = 1;
  cfg.d_h = 1;
  cfg.d_out = 1;
  cfg.layers = 1;
  cfg.b_max = 4.0;
  Rng rng(14);
  RMFNModel m = create_model(cfg, rng);
  // Collapse the model to y = sin(2pi * 2x): base filter at 2 cycles/unit,
  // layer filter at 0 with phase pi/2 (constant 1), unit weights.
  m.params.at("filter0.omega").value[0] = 2.0;
  m.params.at("filter0.phi").value[0] = 0.0;
  m.params.at("filter1.omega").value[0] = 0.0;
  m.params.at("filter1.phi").value[0] = 1.5707963267948966;
  m.params.at("linear1.w").value[0] = 1.0;
  m.params.at("linear1.b").value[0] = 0.0;
  m.params.at("head1.w").value[0] = 1.0;
  m.params.at("head1.b").value[0] = 0.0;

  Tensor y = eval_on_grid(m, 1, {256});
  Tensor mag = dft_magnitude(y, 1);  // centered, bins -128..127
  int64_t best = 0;
  double best_v = -1.0;
  for (int64_t k = 0; k < 256; ++k)
    if (mag[k] > best_v) {
      best_v = mag[k];
      best = k;
    }
  // Centered spectrum: bin index 128 + f.
  CHECK((best == 128 + 2 || best == 128 - 2));
  CHECK(mag[128 + 2] == doctest::Approx(std::sqrt(256.0) / 2.0).epsilon(1e-9));
  CHECK(mag[128 - 2] == doctest::Approx(std::sqrt(256.0) / 2.0).epsilon(1e-9));
}

TEST_CASE("band limits are strictly increasing and end at b_max") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    ModelConfig cfg;
    cfg.layers = 4;
    cfg.d_h = 3;
    cfg.b_max = 37.0;
    Rng rng(seed);
    RMFNModel m = create_model(cfg, rng);
    REQUIRE(m.band_limits.size() == 5);
    for (size_t i = 1; i < m.band_limits.size(); ++i)
      CHECK(m.band_limits[i] > m.band_limits[i - 1]);
    CHECK(m.band_limits.back() == doctest::Approx(37.0).epsilon(1e-9));
  }
}

TEST_CASE("training leaves filters bit-identical") {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.d_h = 4;
  cfg.b_max = 8.0;
  Rng rng(15);
  RMFNModel m = create_model(cfg, rng);
  std::vector<Tensor> before;
  for (int i = 0; i <= 2; ++i) {
    before.push_back(m.params.at(RMFNModel::filter_key(i, "omega")).value);
    before.push_back(m.params.at(RMFNModel::filter_key(i, "phi")).value);
  }

  // A few Adam steps on a random regression loss.
  Rng xr(16);
  Tensor x({32, 2}), target({32, 1});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = xr.uniform(-0.5, 0.5);
  for (int64_t i = 0; i < target.size(); ++i) target[i] = xr.normal();
  ad::Program f = [&](ad::Tape& t, const std::map<std::string, ad::Value>& leaves) {
    auto prog = build_model_program(t, leaves, cfg, t.constant(x));
    return t.mean(t.square(t.sub(prog.y.back(), t.constant(target))));
  };
  Adam opt(AdamConfig{.lr = 1e-2});
  for (int it = 0; it < 20; ++it) {
    auto res = ad::evaluate_with_gradients(f, m.params);
    opt.step(m.params, res.grads);
  }

  size_t idx = 0;
  for (int i = 0; i <= 2; ++i) {
    const Tensor& om = m.params.at(RMFNModel::filter_key(i, "omega")).value;
    const Tensor& ph = m.params.at(RMFNModel::filter_key(i, "phi")).value;
    for (int64_t k = 0; k < om.size(); ++k) CHECK(om[k] == before[idx][k]);
    ++idx;
    for (int64_t k = 0; k < ph.size(); ++k) CHECK(ph[k] == before[idx][k]);
    ++idx;
  }
  // And the linears did move, so the invariant is not vacuous.
  bool moved = false;
  const Tensor& w1 = m.params.at("linear1.w").value;
  Rng rng2(15);
  RMFNModel fresh = create_model(cfg, rng2);
  const Tensor& w1f = fresh.params.at("linear1.w").value;
  for (int64_t k = 0; k < w1.size(); ++k)
    if (w1[k] != w1f[k]) moved = true;
  CHECK(moved);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.d_h = 5;
  cfg.d_out = 2;
  cfg.b_max = 12.0;
  cfg.lambda1 = 0.25;
  Rng rng(18);
  RMFNModel m = create_model(cfg, rng);
  const std::string path = "/tmp/rmfn_test_ckpt.json";
  save_checkpoint(m, path);
  RMFNModel r = load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(r.cfg.d_in == cfg.d_in);
  CHECK(r.cfg.d_h == cfg.d_h);
  CHECK(r.cfg.layers == cfg.layers);
  CHECK(r.cfg.b_max == cfg.b_max);
  CHECK(r.cfg.lambda1 == cfg.lambda1);
  REQUIRE(r.band_limits.size() == m.band_limits.size());
  for (size_t i = 0; i < m.band_limits.size(); ++i)
    CHECK(r.band_limits[i] == m.band_limits[i]);
  REQUIRE(r.params.items().size() == m.params.items().size());
  for (const auto& [name, p] : m.params.items()) {
    const auto& q = r.params.at(name);
    CHECK(q.trainable == p.trainable);
    REQUIRE(q.value.size() == p.value.size());
    for (int64_t k = 0; k < p.value.size(); ++k) CHECK(q.value[k] == p.value[k]);
  }
}

TEST_CASE("per-scale MSE losses pass gradient checks") {
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.d_h = 3;
  cfg.b_max = 12.0;
  Rng rng(19);
  RMFNModel m = create_model(cfg, rng);
  Rng xr(20);
  Tensor x({9, 2}), target({9, 1});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = xr.uniform(-0.5, 0.5);
  for (int64_t i = 0; i < target.size(); ++i) target[i] = xr.normal();
  for (int scale = 1; scale <= 3; ++scale) {
    ad::Program f = [&, scale](ad::Tape& t,
                               const std::map<std::string, ad::Value>& leaves) {
      auto prog = build_model_program(t, leaves, cfg, t.constant(x), scale);
      return t.mean(t.square(t.sub(prog.y.back(), t.constant(target))));
    };
    auto rep = ad::grad_check(f, m.params, 1e-4);
    INFO("scale ", scale, " worst ", rep.worst_key);
    CHECK(rep.pass);
  }
}
