#pragma once

#include "rmfn/tensor.hpp"

namespace rmfn {

// Fourier-domain Gaussian low-pass with sigma_f = b_target / 2 cycles/unit:
// transfer exp(-|f|^2 / (2 sigma_f^2)), so a tone at b_target keeps e^{-2}
// of its amplitude and DC passes exactly. Input [dims...] or [dims..., C].
Tensor gaussian_lowpass(const Tensor& x, int spatial_rank, double b_target);

// Gaussian anti-alias at the new Nyquist/2 followed by stride subsampling.
// Every spatial dim must be divisible by factor.
Tensor downsample(const Tensor& x, int spatial_rank, int factor);

// Normalized spatial Gaussian kernel, radius ceil(3*sigma), odd side.
Tensor make_gaussian_kernel(double sigma_px);

// Numeric zero-padded true convolution, identical semantics to the tape op
// (kernel flipped, odd dims, kernel no larger than the image).
Tensor convolve2d_zero(const Tensor& image, const Tensor& kernel);

// Band-limited resampling of a [N, N] (or [N, N, C]) image to [G, G] by
// centered Fourier cropping/padding; Nyquist bins are zeroed so the result
// stays real. Values are interpolated, not rescaled: a constant image stays
// that constant. N and G must be even.
Tensor fourier_resample_2d(const Tensor& image, int64_t g);

}  // namespace rmfn
