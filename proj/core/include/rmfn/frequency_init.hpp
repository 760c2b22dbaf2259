#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rmfn/rng.hpp"
#include "rmfn/tensor.hpp"

namespace rmfn {

inline constexpr double kDefaultLambda1 = 0.3;
inline constexpr double kDefaultLambda2 = 2.0;

// Per-scale band limits in cycles per unit domain. bands[k] is the limit of
// output scale k+1; consecutive entries grow by (1 + lambda1 + lambda2) and
// the last equals b_max.
struct BandSchedule {
  double b_max = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::vector<double> bands;

  double ratio() const { return 1.0 + lambda1 + lambda2; }
};

// Errors if the coarsest band falls below 0.5 cycles/unit ("band limit too
// small to represent DC+fundamental").
BandSchedule compute_band_schedule(double b_max, int layers,
                                   double lambda1 = kDefaultLambda1,
                                   double lambda2 = kDefaultLambda2);

// Canonical half-space representatives of the nonzero sign vectors in
// {-1,0,1}^d: 1 direction for d=1, 4 for d=2, 13 for d=3.
std::vector<std::vector<int>> direction_set(int d_in);

// Integer shift magnitude and jitter radius for a layer whose input is
// band-limited to b_prev. Frequencies are quantized to whole cycles so every
// reachable output frequency lands on the integer lattice and sampled grids
// see exactly periodic signals; the rounding never exceeds the nominal band
// (1 + lambda1 + lambda2) * b_prev, and for lambda2 >= 2 + lambda1 it
// preserves the spectral gap at b_prev whenever the schedule is integral.
struct LayerRadii {
  int64_t shift = 0;
  int64_t jitter = 0;
};
LayerRadii layer_radii(double b_prev, double lambda1, double lambda2);

// Base filter bank: frequencies uniform on the integer lattice in
// [-floor(b0), floor(b0)]^d_in, phases uniform in [-pi, pi].
// Returns (omega [d_h x d_in], phi [d_h]).
std::pair<Tensor, Tensor> sample_base_frequencies(int d_in, int d_h, double b0, Rng& rng);

// Layer filter bank: omega_j = shift * r_j + v_j with r_j drawn uniformly
// from direction_set(d_in) (not normalized) and v_j integer-uniform in
// [-jitter, jitter]^d_in.
std::pair<Tensor, Tensor> sample_layer_frequencies(int d_in, int d_h, double b_prev,
                                                   double lambda1, double lambda2, Rng& rng);

// Baseline scheme: layer increments drawn from the full integer cube so the
// per-layer band limits match the shifted scheme without its directional gap.
std::pair<Tensor, Tensor> sample_uniform_increment(int d_in, int d_h, double b_prev,
                                                   double lambda1, double lambda2, Rng& rng);

}  // namespace rmfn
