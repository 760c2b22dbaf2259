#include "rmfn/spectral.hpp"

#include <fftw3.h>

#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>

namespace rmfn {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kHalfPi = 1.5707963267948966192313216916398;

// FFTW planning is not thread-safe; execution of distinct plans is.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

std::vector<SpectrumTerm> enumerate_spectrum(const RMFNModel& model, int layer, int unit,
                                             int64_t max_terms) {
  const ModelConfig& cfg = model.cfg;
  if (!cfg.bias_free)
    throw std::invalid_argument("spectrum enumeration is defined for bias-free models only");
  if (layer < 0 || layer > cfg.layers)
    throw std::invalid_argument("layer out of range");
  if (unit < 0 || unit >= cfg.d_h) throw std::invalid_argument("unit out of range");

  // d_h^layer * 2^layer terms for the requested unit.
  double budget = 1.0;
  for (int l = 0; l < layer; ++l) budget *= 2.0 * cfg.d_h;
  if (budget > static_cast<double>(max_terms))
    throw std::invalid_argument("spectrum term budget exceeded: " +
                                std::to_string(static_cast<int64_t>(budget)) + " > " +
                                std::to_string(max_terms));

  // Level 0: z^(0)[n] is a single sine.
  std::vector<std::vector<SpectrumTerm>> level(static_cast<size_t>(cfg.d_h));
  for (int n = 0; n < cfg.d_h; ++n) {
    SpectrumTerm t;
    t.amplitude = 1.0;
    t.freq.resize(static_cast<size_t>(cfg.d_in));
    for (int k = 0; k < cfg.d_in; ++k) t.freq[static_cast<size_t>(k)] = model.omega(0).at(n, k);
    t.phase = model.phi(0)[n];
    t.n_path = {n};
    level[static_cast<size_t>(n)].push_back(std::move(t));
  }

  // sin(b)*sin(a) = 0.5*(sin(a+b-pi/2) + sin(a-b+pi/2)): each product with a
  // layer filter splits every accumulated term into a +/- pair.
  for (int l = 1; l <= layer; ++l) {
    const Tensor& w = model.params.at(RMFNModel::linear_key(l, "w")).value;
    const Tensor& om = model.omega(l);
    const Tensor& ph = model.phi(l);
    const int last = (l == layer) ? unit : -1;
    std::vector<std::vector<SpectrumTerm>> next(
        static_cast<size_t>(l == layer ? 1 : cfg.d_h));
    for (int n = 0; n < cfg.d_h; ++n) {
      if (last >= 0 && n != last) continue;
      auto& dst = next[static_cast<size_t>(last >= 0 ? 0 : n)];
      for (int m = 0; m < cfg.d_h; ++m) {
        const double wnm = w.at(n, m);
        for (const SpectrumTerm& t : level[static_cast<size_t>(m)]) {
          for (int s = +1; s >= -1; s -= 2) {
            SpectrumTerm u;
            u.amplitude = t.amplitude * wnm * 0.5;
            u.freq = t.freq;
            for (int k = 0; k < cfg.d_in; ++k)
              u.freq[static_cast<size_t>(k)] += s * om.at(n, k);
            u.phase = t.phase + s * (ph[n] - kHalfPi);
            u.n_path = t.n_path;
            u.n_path.push_back(n);
            u.s_path = t.s_path;
            u.s_path.push_back(s);
            dst.push_back(std::move(u));
          }
        }
      }
    }
    level = std::move(next);
  }
  return layer == 0 ? level[static_cast<size_t>(unit)] : level[0];
}

Tensor reconstruct_from_terms(const std::vector<SpectrumTerm>& terms, const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("expected coordinates [n,d]");
  const int64_t n = x.dim(0);
  const int64_t d = x.dim(1);
  Tensor out({n});
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (const SpectrumTerm& t : terms) {
      double arg = t.phase;
      for (int64_t k = 0; k < d; ++k)
        arg += kTwoPi * t.freq[static_cast<size_t>(k)] * x.at(i, k);
      acc += t.amplitude * std::sin(arg);
    }
    out[i] = acc;
  }
  return out;
}

std::vector<std::complex<double>> dft_complex(const double* data,
                                              const std::vector<int64_t>& dims, int sign) {
  const int64_t n = Tensor::shape_size(dims);
  std::vector<std::complex<double>> in(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) in[static_cast<size_t>(i)] = data[i];
  return dft_complex(in.data(), dims, sign);
}

std::vector<std::complex<double>> dft_complex(const std::complex<double>* data,
                                              const std::vector<int64_t>& dims, int sign) {
  if (dims.empty() || dims.size() > 3)
    throw std::invalid_argument("dft_complex supports rank 1..3");
  const int64_t n = Tensor::shape_size(dims);
  std::vector<std::complex<double>> in(data, data + n), out(static_cast<size_t>(n));

  std::vector<int> nd(dims.begin(), dims.end());
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    // FFTW_UNALIGNED keeps the planner from specializing on the (heap-varying)
    // buffer alignment; the transform must be a pure function of the values or
    // repeated runs stop being bit-identical.
    plan = fftw_plan_dft(static_cast<int>(nd.size()), nd.data(),
                         reinterpret_cast<fftw_complex*>(in.data()),
                         reinterpret_cast<fftw_complex*>(out.data()),
                         sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD,
                         FFTW_ESTIMATE | FFTW_PRESERVE_INPUT | FFTW_UNALIGNED);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

int64_t centered_bin_freq(int64_t index, int64_t n) { return index - n / 2; }

namespace {

// Splits [dims..., C] vs [dims...] based on the declared spatial rank.
void split_shape(const Tensor& x, int spatial_rank, std::vector<int64_t>& dims,
                 int64_t& channels) {
  if (x.rank() == spatial_rank) {
    dims.assign(x.shape().begin(), x.shape().end());
    channels = 1;
  } else if (x.rank() == spatial_rank + 1) {
    dims.assign(x.shape().begin(), x.shape().end() - 1);
    channels = x.shape().back();
  } else {
    throw std::invalid_argument("array rank " + std::to_string(x.rank()) +
                                " does not match spatial rank " + std::to_string(spatial_rank));
  }
}

}  // namespace

Tensor dft_magnitude(const Tensor& x, int spatial_rank) {
  std::vector<int64_t> dims;
  int64_t channels = 0;
  split_shape(x, spatial_rank, dims, channels);
  const int64_t n = Tensor::shape_size(dims);
  const double unitary = 1.0 / std::sqrt(static_cast<double>(n));

  Tensor mag(dims);
  std::vector<double> plane(static_cast<size_t>(n));
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t i = 0; i < n; ++i) plane[static_cast<size_t>(i)] = x[i * channels + c];
    auto spec = dft_complex(plane.data(), dims, -1);
    // fftshift: destination index (i + floor(N/2)) mod N per axis.
    std::vector<int64_t> idx(dims.size(), 0);
    for (int64_t i = 0; i < n; ++i) {
      int64_t dst = 0;
      for (size_t k = 0; k < dims.size(); ++k) {
        const int64_t nk = dims[k];
        dst = dst * nk + (idx[k] + nk / 2) % nk;
      }
      mag[dst] += std::abs(spec[static_cast<size_t>(i)]) * unitary;
      for (int k = static_cast<int>(dims.size()) - 1; k >= 0; --k) {
        if (++idx[static_cast<size_t>(k)] < dims[static_cast<size_t>(k)]) break;
        idx[static_cast<size_t>(k)] = 0;
      }
    }
  }
  if (channels > 1)
    for (int64_t i = 0; i < mag.size(); ++i) mag[i] /= static_cast<double>(channels);
  return mag;
}

double spectrum_mad(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("spectrum_mad requires equal shapes, got " + a.shape_str() +
                                " vs " + b.shape_str());
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

namespace {

template <typename Pred>
double energy_fraction(const Tensor& mag, Pred in_region) {
  const auto& dims = mag.shape();
  std::vector<int64_t> idx(dims.size(), 0);
  std::vector<int64_t> freq(dims.size(), 0);
  double total = 0.0, region = 0.0;
  for (int64_t i = 0; i < mag.size(); ++i) {
    for (size_t k = 0; k < dims.size(); ++k) freq[k] = centered_bin_freq(idx[k], dims[k]);
    const double e = mag[i] * mag[i];
    total += e;
    if (in_region(freq)) region += e;
    for (int k = static_cast<int>(dims.size()) - 1; k >= 0; --k) {
      if (++idx[static_cast<size_t>(k)] < dims[static_cast<size_t>(k)]) break;
      idx[static_cast<size_t>(k)] = 0;
    }
  }
  if (total == 0.0) return 0.0;
  return region / total;
}

}  // namespace

double band_energy_outside(const Tensor& magnitude, double band) {
  for (int64_t nk : magnitude.shape())
    if (static_cast<double>(nk / 2) < band)
      throw std::invalid_argument("grid Nyquist " + std::to_string(nk / 2) +
                                  " is below the requested band " + std::to_string(band));
  return energy_fraction(magnitude, [band](const std::vector<int64_t>& f) {
    for (int64_t v : f)
      if (std::abs(static_cast<double>(v)) > band) return true;
    return false;
  });
}

double band_energy_inside_open(const Tensor& magnitude, double band, bool exclude_dc) {
  return energy_fraction(magnitude, [band, exclude_dc](const std::vector<int64_t>& f) {
    bool dc = true;
    for (int64_t v : f) {
      if (std::abs(static_cast<double>(v)) >= band) return false;
      dc &= v == 0;
    }
    return !(dc && exclude_dc);
  });
}

double psnr(const Tensor& pred, const Tensor& target, double peak) {
  if (!pred.same_shape(target))
    throw std::invalid_argument("psnr requires equal shapes, got " + pred.shape_str() + " vs " +
                                target.shape_str());
  if (pred.size() == 0) throw std::invalid_argument("psnr of empty arrays");
  double mse = 0.0;
  for (int64_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

Tensor extract_channel(const Tensor& x, int spatial_rank, int channel) {
  std::vector<int64_t> dims;
  int64_t channels = 0;
  split_shape(x, spatial_rank, dims, channels);
  if (channel < 0 || channel >= channels) throw std::invalid_argument("channel out of range");
  Tensor out(dims);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = x[i * channels + channel];
  return out;
}

}  // namespace rmfn
