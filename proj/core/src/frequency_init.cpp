#include "rmfn/frequency_init.hpp"

#include <cmath>
#include <stdexcept>

namespace rmfn {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kEps = 1e-9;
}  // namespace

BandSchedule compute_band_schedule(double b_max, int layers, double lambda1, double lambda2) {
  if (layers < 1) throw std::invalid_argument("band schedule needs at least one layer");
  if (b_max <= 0.0) throw std::invalid_argument("b_max must be positive");
  if (lambda1 < 0.0 || lambda2 <= 0.0)
    throw std::invalid_argument("lambda1 must be >= 0 and lambda2 > 0");

  BandSchedule s;
  s.b_max = b_max;
  s.lambda1 = lambda1;
  s.lambda2 = lambda2;
  const double r = s.ratio();
  s.bands.resize(static_cast<size_t>(layers));
  s.bands.back() = b_max;
  for (int i = layers - 2; i >= 0; --i)
    s.bands[static_cast<size_t>(i)] = s.bands[static_cast<size_t>(i + 1)] / r;
  if (s.bands.front() < 0.5)
    throw std::invalid_argument("band limit too small to represent DC+fundamental: "
                                "coarsest band " + std::to_string(s.bands.front()) +
                                " < 0.5 cycles/unit");
  return s;
}

std::vector<std::vector<int>> direction_set(int d_in) {
  if (d_in < 1 || d_in > 3)
    throw std::invalid_argument("direction_set supports d_in in {1,2,3}");
  std::vector<std::vector<int>> dirs;
  std::vector<int> v(static_cast<size_t>(d_in));
  const int n = 1;
  // Enumerate {-1,0,1}^d and keep vectors whose first nonzero entry is +1.
  const int total = static_cast<int>(std::pow(3, d_in));
  for (int code = 0; code < total; ++code) {
    int c = code;
    bool nonzero = false, canonical = false, decided = false;
    for (int k = 0; k < d_in; ++k) {
      v[static_cast<size_t>(k)] = (c % 3) - n;
      c /= 3;
      if (!decided && v[static_cast<size_t>(k)] != 0) {
        canonical = v[static_cast<size_t>(k)] > 0;
        decided = true;
      }
      nonzero |= v[static_cast<size_t>(k)] != 0;
    }
    if (nonzero && canonical) dirs.push_back(v);
  }
  return dirs;
}

LayerRadii layer_radii(double b_prev, double lambda1, double lambda2) {
  if (b_prev <= 0.0) throw std::invalid_argument("b_prev must be positive");
  const auto f_prev = static_cast<int64_t>(std::floor(b_prev + kEps));
  const auto f_next =
      static_cast<int64_t>(std::floor((1.0 + lambda1 + lambda2) * b_prev + kEps));
  const bool gap_mode = lambda2 + 1e-12 >= 2.0 + lambda1;

  int64_t shift = static_cast<int64_t>(std::llround(lambda2 * b_prev));
  if (gap_mode) {
    // Keep shift - jitter - f_prev >= b_prev so no product term falls back
    // inside the previous band.
    const auto floor_gap = static_cast<int64_t>(std::ceil(b_prev + static_cast<double>(f_prev) - kEps));
    shift = std::max(shift, floor_gap);
  }
  shift = std::min(shift, f_next - f_prev);
  shift = std::max<int64_t>(shift, 0);

  int64_t jitter = static_cast<int64_t>(std::floor(lambda1 * b_prev + kEps));
  jitter = std::min(jitter, f_next - f_prev - shift);
  if (gap_mode)
    jitter = std::min(jitter, static_cast<int64_t>(std::floor(
                                  static_cast<double>(shift) - b_prev -
                                  static_cast<double>(f_prev) + kEps)));
  jitter = std::max<int64_t>(jitter, 0);
  return LayerRadii{shift, jitter};
}

std::pair<Tensor, Tensor> sample_base_frequencies(int d_in, int d_h, double b0, Rng& rng) {
  if (d_h < 1) throw std::invalid_argument("d_h must be >= 1");
  if (b0 <= 0.0) throw std::invalid_argument("b0 must be positive");
  const auto f0 = static_cast<int64_t>(std::floor(b0 + kEps));
  Tensor omega({d_h, d_in});
  Tensor phi({d_h});
  for (int j = 0; j < d_h; ++j)
    for (int k = 0; k < d_in; ++k)
      omega.at(j, k) = static_cast<double>(rng.uniform_int(-f0, f0));
  for (int j = 0; j < d_h; ++j) phi[j] = rng.uniform(-kPi, kPi);
  return {std::move(omega), std::move(phi)};
}

std::pair<Tensor, Tensor> sample_layer_frequencies(int d_in, int d_h, double b_prev,
                                                   double lambda1, double lambda2, Rng& rng) {
  const auto dirs = direction_set(d_in);
  const LayerRadii radii = layer_radii(b_prev, lambda1, lambda2);
  Tensor omega({d_h, d_in});
  Tensor phi({d_h});
  for (int j = 0; j < d_h; ++j) {
    const auto& r = dirs[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(dirs.size()) - 1))];
    for (int k = 0; k < d_in; ++k) {
      const int64_t v = radii.jitter > 0 ? rng.uniform_int(-radii.jitter, radii.jitter) : 0;
      omega.at(j, k) = static_cast<double>(radii.shift * r[static_cast<size_t>(k)] + v);
    }
  }
  for (int j = 0; j < d_h; ++j) phi[j] = rng.uniform(-kPi, kPi);
  return {std::move(omega), std::move(phi)};
}

std::pair<Tensor, Tensor> sample_uniform_increment(int d_in, int d_h, double b_prev,
                                                   double lambda1, double lambda2, Rng& rng) {
  const auto f_prev = static_cast<int64_t>(std::floor(b_prev + kEps));
  const auto f_next =
      static_cast<int64_t>(std::floor((1.0 + lambda1 + lambda2) * b_prev + kEps));
  const int64_t radius = std::max<int64_t>(f_next - f_prev, 0);
  Tensor omega({d_h, d_in});
  Tensor phi({d_h});
  for (int j = 0; j < d_h; ++j)
    for (int k = 0; k < d_in; ++k)
      omega.at(j, k) = static_cast<double>(radius > 0 ? rng.uniform_int(-radius, radius) : 0);
  for (int j = 0; j < d_h; ++j) phi[j] = rng.uniform(-kPi, kPi);
  return {std::move(omega), std::move(phi)};
}

}  // namespace rmfn
