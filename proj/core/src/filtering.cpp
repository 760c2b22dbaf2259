#include "rmfn/filtering.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

#include "rmfn/autodiff.hpp"
#include "rmfn/spectral.hpp"

namespace rmfn {

namespace {

void split_shape(const Tensor& x, int spatial_rank, std::vector<int64_t>& dims,
                 int64_t& channels) {
  if (x.rank() == spatial_rank) {
    dims.assign(x.shape().begin(), x.shape().end());
    channels = 1;
  } else if (x.rank() == spatial_rank + 1) {
    dims.assign(x.shape().begin(), x.shape().end() - 1);
    channels = x.shape().back();
  } else {
    throw std::invalid_argument("array rank does not match spatial rank");
  }
}

}  // namespace

Tensor gaussian_lowpass(const Tensor& x, int spatial_rank, double b_target) {
  if (b_target <= 0.0) throw std::invalid_argument("b_target must be positive");
  std::vector<int64_t> dims;
  int64_t channels = 0;
  split_shape(x, spatial_rank, dims, channels);
  const int64_t n = Tensor::shape_size(dims);
  const double sigma_f = b_target * 0.5;
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma_f * sigma_f);

  Tensor out(x.shape());
  std::vector<double> plane(static_cast<size_t>(n));
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t i = 0; i < n; ++i) plane[static_cast<size_t>(i)] = x[i * channels + c];
    auto spec = dft_complex(plane.data(), dims, -1);
    std::vector<int64_t> idx(dims.size(), 0);
    for (int64_t i = 0; i < n; ++i) {
      double f2 = 0.0;
      for (size_t k = 0; k < dims.size(); ++k) {
        // Unshifted layout: frequency folds to i or i - N past the Nyquist.
        int64_t f = idx[k];
        if (f > dims[k] / 2) f -= dims[k];
        f2 += static_cast<double>(f) * static_cast<double>(f);
      }
      spec[static_cast<size_t>(i)] *= std::exp(-f2 * inv_two_sigma2);
      for (int k = static_cast<int>(dims.size()) - 1; k >= 0; --k) {
        if (++idx[static_cast<size_t>(k)] < dims[static_cast<size_t>(k)]) break;
        idx[static_cast<size_t>(k)] = 0;
      }
    }
    auto back = dft_complex(spec.data(), dims, +1);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i)
      out[i * channels + c] = back[static_cast<size_t>(i)].real() * inv_n;
  }
  return out;
}

Tensor downsample(const Tensor& x, int spatial_rank, int factor) {
  if (factor < 1) throw std::invalid_argument("factor must be >= 1");
  std::vector<int64_t> dims;
  int64_t channels = 0;
  split_shape(x, spatial_rank, dims, channels);
  for (int64_t d : dims)
    if (d % factor != 0)
      throw std::invalid_argument("spatial dims must be divisible by the downsample factor");
  if (factor == 1) return x.clone();

  // New Nyquist in cycles/unit is (N/factor)/2; anti-alias at half of it.
  const double new_nyquist = static_cast<double>(dims[0] / factor) / 2.0;
  Tensor smooth = gaussian_lowpass(x, spatial_rank, new_nyquist);

  std::vector<int64_t> odims;
  for (int64_t d : dims) odims.push_back(d / factor);
  std::vector<int64_t> oshape = odims;
  if (x.rank() == spatial_rank + 1) oshape.push_back(channels);
  Tensor out(oshape);

  const int64_t on = Tensor::shape_size(odims);
  std::vector<int64_t> idx(odims.size(), 0);
  for (int64_t i = 0; i < on; ++i) {
    int64_t src = 0;
    for (size_t k = 0; k < odims.size(); ++k) src = src * dims[k] + idx[k] * factor;
    for (int64_t c = 0; c < channels; ++c) out[i * channels + c] = smooth[src * channels + c];
    for (int k = static_cast<int>(odims.size()) - 1; k >= 0; --k) {
      if (++idx[static_cast<size_t>(k)] < odims[static_cast<size_t>(k)]) break;
      idx[static_cast<size_t>(k)] = 0;
    }
  }
  return out;
}

Tensor make_gaussian_kernel(double sigma_px) {
  if (sigma_px <= 0.0) throw std::invalid_argument("sigma must be positive");
  const auto r = static_cast<int64_t>(std::ceil(3.0 * sigma_px));
  const int64_t side = 2 * r + 1;
  Tensor k({side, side});
  double sum = 0.0;
  for (int64_t y = -r; y <= r; ++y)
    for (int64_t x = -r; x <= r; ++x) {
      const double v = std::exp(-(static_cast<double>(x * x + y * y)) /
                                (2.0 * sigma_px * sigma_px));
      k[(y + r) * side + (x + r)] = v;
      sum += v;
    }
  for (int64_t i = 0; i < k.size(); ++i) k[i] /= sum;
  return k;
}

Tensor convolve2d_zero(const Tensor& image, const Tensor& kernel) {
  ad::Tape tape;
  return tape.value(tape.conv2d(tape.constant(image), tape.constant(kernel)));
}

Tensor fourier_resample_2d(const Tensor& image, int64_t g) {
  std::vector<int64_t> dims;
  int64_t channels = 0;
  split_shape(image, 2, dims, channels);
  const int64_t n = dims[0];
  if (dims[1] != n) throw std::invalid_argument("resample expects a square image");
  if (n % 2 != 0 || g % 2 != 0 || g < 2)
    throw std::invalid_argument("resample sizes must be even");
  if (g == n) return image.clone();

  std::vector<int64_t> oshape = {g, g};
  if (image.rank() == 3) oshape.push_back(channels);
  Tensor out(oshape);

  const int64_t half = std::min(n, g) / 2;  // bins -half+1 .. half-1 survive
  std::vector<double> plane(static_cast<size_t>(n * n));
  std::vector<std::complex<double>> cropped(static_cast<size_t>(g * g));
  const double inv_nn = 1.0 / static_cast<double>(n * n);
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t i = 0; i < n * n; ++i)
      plane[static_cast<size_t>(i)] = image[i * channels + c];
    auto spec = dft_complex(plane.data(), {n, n}, -1);
    std::fill(cropped.begin(), cropped.end(), std::complex<double>(0.0, 0.0));
    for (int64_t fy = -half + 1; fy < half; ++fy)
      for (int64_t fx = -half + 1; fx < half; ++fx) {
        const int64_t sy = (fy + n) % n, sx = (fx + n) % n;
        const int64_t dy = (fy + g) % g, dx = (fx + g) % g;
        cropped[static_cast<size_t>(dy * g + dx)] = spec[static_cast<size_t>(sy * n + sx)];
      }
    auto back = dft_complex(cropped.data(), {g, g}, +1);
    for (int64_t i = 0; i < g * g; ++i)
      out[i * channels + c] = back[static_cast<size_t>(i)].real() * inv_nn;
  }
  return out;
}

}  // namespace rmfn
