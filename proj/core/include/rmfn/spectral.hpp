#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "rmfn/model.hpp"
#include "rmfn/tensor.hpp"

namespace rmfn {

// One sinusoid of the closed-form expansion of a hidden unit:
// amplitude * sin(2*pi * dot(freq, x) + phase).
struct SpectrumTerm {
  double amplitude = 0.0;
  std::vector<double> freq;  // cycles/unit, length d_in
  double phase = 0.0;
  std::vector<int> n_path;   // unit indices n_0..n_i
  std::vector<int> s_path;   // signs s_1..s_i in {-1,+1}
};

// Exact expansion of z^(layer)[unit] for a bias-free model. The term count
// is d_h^layer * 2^layer; exceeding max_terms raises an error.
std::vector<SpectrumTerm> enumerate_spectrum(const RMFNModel& model, int layer, int unit,
                                             int64_t max_terms = 10'000'000);

// Sum of the terms at each coordinate row of x ([n, d_in]) -> [n].
Tensor reconstruct_from_terms(const std::vector<SpectrumTerm>& terms, const Tensor& x);

// Unnormalized, unshifted c2c DFT of a real array with the given spatial
// dims (row-major). sign=-1 forward, +1 inverse.
std::vector<std::complex<double>> dft_complex(const double* data,
                                              const std::vector<int64_t>& dims, int sign);
std::vector<std::complex<double>> dft_complex(const std::complex<double>* data,
                                              const std::vector<int64_t>& dims, int sign);

// Centered unitary DFT magnitude. Input [dims...] or [dims..., C]
// (spatial_rank distinguishes them); channels are averaged after the
// magnitude. Output has shape [dims...], bin at index i along an axis of
// size N holds frequency i - floor(N/2) cycles/unit.
Tensor dft_magnitude(const Tensor& x, int spatial_rank);

// Frequency of a (multi-)index into a centered spectrum, per axis.
int64_t centered_bin_freq(int64_t index, int64_t n);

// Mean absolute difference between two equal-shaped magnitude spectra.
double spectrum_mad(const Tensor& a, const Tensor& b);

// Fraction of spectral energy strictly outside the cube [-B, B]^d.
// Errors if any axis Nyquist floor(N/2) < B.
double band_energy_outside(const Tensor& magnitude, double band);

// Fraction of spectral energy strictly inside the open cube (-B, B)^d,
// optionally ignoring the DC bin.
double band_energy_inside_open(const Tensor& magnitude, double band, bool exclude_dc);

// 10*log10(peak^2 / MSE); +infinity when the arrays match exactly.
double psnr(const Tensor& pred, const Tensor& target, double peak = 1.0);

// Contiguous channel slice of an array shaped [dims..., C].
Tensor extract_channel(const Tensor& x, int spatial_rank, int channel);

}  // namespace rmfn
