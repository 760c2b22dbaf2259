#include "rmfn/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace rmfn {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

std::string idx_key(const char* group, int i, const char* leaf) {
  return std::string(group) + std::to_string(i) + "." + leaf;
}
}  // namespace

std::string RMFNModel::filter_key(int i, const char* leaf) { return idx_key("filter", i, leaf); }
std::string RMFNModel::linear_key(int i, const char* leaf) { return idx_key("linear", i, leaf); }
std::string RMFNModel::head_key(int i, const char* leaf) { return idx_key("head", i, leaf); }

RMFNModel create_model(const ModelConfig& cfg, Rng& rng) {
  if (cfg.d_in < 1 || cfg.d_in > 3) throw std::invalid_argument("d_in must be in {1,2,3}");
  if (cfg.d_h < 1 || cfg.d_out < 1) throw std::invalid_argument("d_h and d_out must be >= 1");
  if (cfg.layers < 1 || cfg.layers > 9) throw std::invalid_argument("layers must be in [1,9]");

  const BandSchedule sched = compute_band_schedule(cfg.b_max, cfg.layers, cfg.lambda1, cfg.lambda2);

  RMFNModel m;
  m.cfg = cfg;
  m.band_limits.reserve(static_cast<size_t>(cfg.layers) + 1);
  m.band_limits.push_back(sched.bands.front() / sched.ratio());
  for (double b : sched.bands) m.band_limits.push_back(b);

  // Filters first, then linear layers, then heads; a fixed draw order keeps
  // seeded construction reproducible.
  for (int i = 0; i <= cfg.layers; ++i) {
    std::pair<Tensor, Tensor> f;
    if (i == 0) {
      f = sample_base_frequencies(cfg.d_in, cfg.d_h, m.band_limits[0], rng);
    } else if (cfg.init == ModelConfig::Init::kShifted) {
      f = sample_layer_frequencies(cfg.d_in, cfg.d_h, m.band_limits[static_cast<size_t>(i - 1)],
                                   cfg.lambda1, cfg.lambda2, rng);
    } else {
      f = sample_uniform_increment(cfg.d_in, cfg.d_h, m.band_limits[static_cast<size_t>(i - 1)],
                                   cfg.lambda1, cfg.lambda2, rng);
    }
    m.params.add(RMFNModel::filter_key(i, "omega"), std::move(f.first), /*trainable=*/false);
    m.params.add(RMFNModel::filter_key(i, "phi"), std::move(f.second), /*trainable=*/false);
  }

  const double w_bound = std::sqrt(6.0 / cfg.d_h) * 0.5;
  const double head_bound = std::sqrt(1.0 / cfg.d_h);
  for (int i = 1; i <= cfg.layers; ++i) {
    Tensor w({cfg.d_h, cfg.d_h});
    for (int64_t k = 0; k < w.size(); ++k) w[k] = rng.uniform(-w_bound, w_bound);
    m.params.add(RMFNModel::linear_key(i, "w"), std::move(w));
    if (!cfg.bias_free)
      m.params.add(RMFNModel::linear_key(i, "b"), Tensor::zeros({cfg.d_h}));
  }
  for (int i = 1; i <= cfg.layers; ++i) {
    Tensor w({cfg.d_out, cfg.d_h});
    for (int64_t k = 0; k < w.size(); ++k) w[k] = rng.uniform(-head_bound, head_bound);
    m.params.add(RMFNModel::head_key(i, "w"), std::move(w));
    if (!cfg.bias_free)
      m.params.add(RMFNModel::head_key(i, "b"), Tensor::zeros({cfg.d_out}));
  }
  return m;
}

std::map<std::string, ad::Value> bind_params(ad::Tape& tape, const ad::ParamSet& params,
                                             bool with_grads) {
  std::map<std::string, ad::Value> leaves;
  for (const auto& [name, p] : params.items())
    leaves[name] = tape.input(p.value, with_grads && p.trainable);
  return leaves;
}

std::vector<ad::Value> build_filters(ad::Tape& tape,
                                     const std::map<std::string, ad::Value>& leaves,
                                     const ModelConfig& cfg, ad::Value x) {
  std::vector<ad::Value> g;
  g.reserve(static_cast<size_t>(cfg.layers) + 1);
  ad::Value x2p = tape.scale(x, kTwoPi);
  for (int i = 0; i <= cfg.layers; ++i) {
    const ad::Value omega = leaves.at(RMFNModel::filter_key(i, "omega"));
    const ad::Value phi = leaves.at(RMFNModel::filter_key(i, "phi"));
    g.push_back(tape.sin(tape.linear(x2p, omega, phi)));
  }
  return g;
}

std::vector<Tensor> filters_numeric(const RMFNModel& model, const Tensor& x) {
  ad::Tape tape;
  auto leaves = bind_params(tape, model.params, /*with_grads=*/false);
  auto g = build_filters(tape, leaves, model.cfg, tape.constant(x));
  std::vector<Tensor> out;
  out.reserve(g.size());
  for (auto v : g) out.push_back(tape.value(v));
  return out;
}

ModelProgram build_model_program(ad::Tape& tape,
                                 const std::map<std::string, ad::Value>& leaves,
                                 const ModelConfig& cfg, const std::vector<ad::Value>& g,
                                 int max_scale) {
  if (g.size() != static_cast<size_t>(cfg.layers) + 1)
    throw std::invalid_argument("expected one filter bank per layer plus the base");
  const int top = (max_scale >= 1 && max_scale <= cfg.layers) ? max_scale : cfg.layers;

  ModelProgram p;
  p.z.reserve(g.size());
  p.y.reserve(static_cast<size_t>(top));
  const ad::Value zero_h = tape.constant(Tensor::zeros({cfg.d_h}));
  const ad::Value zero_out = tape.constant(Tensor::zeros({cfg.d_out}));

  p.z.push_back(g[0]);
  for (int i = 1; i <= top; ++i) {
    const ad::Value w = leaves.at(RMFNModel::linear_key(i, "w"));
    const ad::Value b = cfg.bias_free ? zero_h : leaves.at(RMFNModel::linear_key(i, "b"));
    p.z.push_back(tape.mul(g[static_cast<size_t>(i)],
                           tape.linear(p.z.back(), w, b)));
  }
  for (int i = 1; i <= top; ++i) {
    const ad::Value w = leaves.at(RMFNModel::head_key(i, "w"));
    const ad::Value b = cfg.bias_free ? zero_out : leaves.at(RMFNModel::head_key(i, "b"));
    const ad::Value head = tape.linear(p.z[static_cast<size_t>(i)], w, b);
    if (cfg.residual && i > 1)
      p.y.push_back(tape.add(p.y.back(), head));
    else
      p.y.push_back(head);
  }
  return p;
}

ModelProgram build_model_program(ad::Tape& tape,
                                 const std::map<std::string, ad::Value>& leaves,
                                 const ModelConfig& cfg, ad::Value x, int max_scale) {
  return build_model_program(tape, leaves, cfg, build_filters(tape, leaves, cfg, x),
                             max_scale);
}

namespace {

void warn_if_outside_domain(const Tensor& x) {
  int64_t bad = 0;
  for (int64_t i = 0; i < x.size(); ++i)
    if (std::abs(x[i]) > 0.5 + 1e-9) ++bad;
  if (bad > 0)
    std::fprintf(stderr, "warning: %lld coordinate components outside [-0.5,0.5]\n",
                 static_cast<long long>(bad));
}

}  // namespace

std::vector<Tensor> forward_hidden(const RMFNModel& model, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != model.cfg.d_in)
    throw std::invalid_argument("expected coordinates of shape [n," +
                                std::to_string(model.cfg.d_in) + "]");
  warn_if_outside_domain(x);
  ad::Tape tape;
  auto leaves = bind_params(tape, model.params, /*with_grads=*/false);
  auto prog = build_model_program(tape, leaves, model.cfg, tape.constant(x));
  std::vector<Tensor> out;
  for (auto v : prog.z) out.push_back(tape.value(v));
  return out;
}

std::vector<Tensor> forward_outputs(const RMFNModel& model, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != model.cfg.d_in)
    throw std::invalid_argument("expected coordinates of shape [n," +
                                std::to_string(model.cfg.d_in) + "]");
  warn_if_outside_domain(x);
  ad::Tape tape;
  auto leaves = bind_params(tape, model.params, /*with_grads=*/false);
  auto prog = build_model_program(tape, leaves, model.cfg, tape.constant(x));
  std::vector<Tensor> out;
  for (auto v : prog.y) out.push_back(tape.value(v));
  return out;
}

Tensor make_grid_coords(const std::vector<int64_t>& dims) {
  const int d = static_cast<int>(dims.size());
  const int64_t n = Tensor::shape_size(dims);
  Tensor coords({n, d});
  std::vector<int64_t> idx(dims.size(), 0);
  for (int64_t i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k)
      coords.at(i, k) = (static_cast<double>(idx[static_cast<size_t>(k)]) + 0.5) /
                            static_cast<double>(dims[static_cast<size_t>(k)]) -
                        0.5;
    for (int k = d - 1; k >= 0; --k) {
      if (++idx[static_cast<size_t>(k)] < dims[static_cast<size_t>(k)]) break;
      idx[static_cast<size_t>(k)] = 0;
    }
  }
  return coords;
}

Tensor eval_on_grid(const RMFNModel& model, int scale, const std::vector<int64_t>& dims) {
  if (scale < 1 || scale > model.cfg.layers)
    throw std::invalid_argument("scale must be in [1," + std::to_string(model.cfg.layers) + "]");
  if (static_cast<int>(dims.size()) != model.cfg.d_in)
    throw std::invalid_argument("grid rank must equal d_in");

  const int64_t n = Tensor::shape_size(dims);
  const int d = model.cfg.d_in;
  std::vector<int64_t> out_shape = dims;
  out_shape.push_back(model.cfg.d_out);
  Tensor out(out_shape);

  const int64_t chunk = 16384;
  std::vector<int64_t> idx(dims.size(), 0);
  int64_t written = 0;
  while (written < n) {
    const int64_t m = std::min(chunk, n - written);
    Tensor coords({m, d});
    for (int64_t i = 0; i < m; ++i) {
      for (int k = 0; k < d; ++k)
        coords.at(i, k) = (static_cast<double>(idx[static_cast<size_t>(k)]) + 0.5) /
                              static_cast<double>(dims[static_cast<size_t>(k)]) -
                          0.5;
      for (int k = d - 1; k >= 0; --k) {
        if (++idx[static_cast<size_t>(k)] < dims[static_cast<size_t>(k)]) break;
        idx[static_cast<size_t>(k)] = 0;
      }
    }
    ad::Tape tape;
    auto leaves = bind_params(tape, model.params, /*with_grads=*/false);
    auto prog = build_model_program(tape, leaves, model.cfg, tape.constant(coords));
    const Tensor& y = tape.value(prog.y[static_cast<size_t>(scale - 1)]);
    for (int64_t i = 0; i < y.size(); ++i) out[written * model.cfg.d_out + i] = y[i];
    written += m;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
  json j;
  j["shape"] = t.shape();
  std::vector<double> data(t.data(), t.data() + t.size());
  j["data"] = data;
  return j;
}

Tensor tensor_from_json(const json& j) {
  std::vector<int64_t> shape = j.at("shape").get<std::vector<int64_t>>();
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

void save_checkpoint(const RMFNModel& model, const std::string& path) {
  json j;
  j["format"] = "rmfn-checkpoint-v1";
  json cfg;
  cfg["d_in"] = model.cfg.d_in;
  cfg["d_h"] = model.cfg.d_h;
  cfg["d_out"] = model.cfg.d_out;
  cfg["layers"] = model.cfg.layers;
  cfg["b_max"] = model.cfg.b_max;
  cfg["lambda1"] = model.cfg.lambda1;
  cfg["lambda2"] = model.cfg.lambda2;
  cfg["bias_free"] = model.cfg.bias_free;
  cfg["residual"] = model.cfg.residual;
  cfg["init"] = model.cfg.init == ModelConfig::Init::kShifted ? "shifted" : "uniform";
  j["config"] = cfg;
  j["band_limits"] = model.band_limits;
  json params = json::object();
  for (const auto& [name, p] : model.params.items()) {
    json pj = tensor_to_json(p.value);
    pj["trainable"] = p.trainable;
    params[name] = pj;
  }
  j["params"] = params;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os << j.dump();
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

RMFNModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  json j;
  is >> j;
  if (j.value("format", "") != "rmfn-checkpoint-v1")
    throw std::runtime_error("unrecognized checkpoint format in " + path);

  RMFNModel m;
  const json& cfg = j.at("config");
  m.cfg.d_in = cfg.at("d_in").get<int>();
  m.cfg.d_h = cfg.at("d_h").get<int>();
  m.cfg.d_out = cfg.at("d_out").get<int>();
  m.cfg.layers = cfg.at("layers").get<int>();
  m.cfg.b_max = cfg.at("b_max").get<double>();
  m.cfg.lambda1 = cfg.at("lambda1").get<double>();
  m.cfg.lambda2 = cfg.at("lambda2").get<double>();
  m.cfg.bias_free = cfg.at("bias_free").get<bool>();
  m.cfg.residual = cfg.at("residual").get<bool>();
  m.cfg.init = cfg.at("init").get<std::string>() == "uniform" ? ModelConfig::Init::kUniform
                                                              : ModelConfig::Init::kShifted;
  m.band_limits = j.at("band_limits").get<std::vector<double>>();
  for (const auto& [name, pj] : j.at("params").items())
    m.params.add(name, tensor_from_json(pj), pj.at("trainable").get<bool>());
  return m;
}

}  // namespace rmfn
