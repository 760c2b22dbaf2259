#include "rmfn/cryo_sim.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "rmfn/filtering.hpp"
#include "rmfn/mrc.hpp"
#include "rmfn/so3.hpp"

namespace rmfn {

void validate_volume(const VolumeGrid& vol) {
  if (vol.values.rank() != 3 || vol.values.dim(0) != vol.values.dim(1) ||
      vol.values.dim(1) != vol.values.dim(2))
    throw std::invalid_argument("volume must be cubic, got " + vol.values.shape_str());
  if (vol.n() % 2 != 0) throw std::invalid_argument("volume side must be even");
  if (vol.voxel_size <= 0.0) throw std::invalid_argument("voxel size must be positive");
  for (int64_t i = 0; i < vol.values.size(); ++i)
    if (!(vol.values[i] >= 0.0) || !std::isfinite(vol.values[i]))
      throw std::invalid_argument("volume densities must be finite and non-negative");
}

namespace {

// Trilinear sample in voxel-index space, zero outside [0, N-1]^3 support.
double sample_trilinear(const Tensor& v, int64_t n, double x, double y, double z) {
  const int64_t x0 = static_cast<int64_t>(std::floor(x));
  const int64_t y0 = static_cast<int64_t>(std::floor(y));
  const int64_t z0 = static_cast<int64_t>(std::floor(z));
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double fz = z - static_cast<double>(z0);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const int64_t xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
        if (xi < 0 || xi >= n || yi < 0 || yi >= n || zi < 0 || zi >= n) continue;
        const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
        acc += w * v[(zi * n + yi) * n + xi];
      }
  return acc;
}

}  // namespace

Tensor rotate_and_project(const VolumeGrid& vol, const Eigen::Matrix3d& r) {
  validate_volume(vol);
  const int64_t n = vol.n();
  const Eigen::Matrix3d rt = r.transpose();
  Tensor img({n, n});
  for (int64_t py = 0; py < n; ++py) {
    const double uy = (static_cast<double>(py) + 0.5) / static_cast<double>(n) - 0.5;
    for (int64_t px = 0; px < n; ++px) {
      const double ux = (static_cast<double>(px) + 0.5) / static_cast<double>(n) - 0.5;
      double acc = 0.0;
      for (int64_t pz = 0; pz < n; ++pz) {
        const double uz = (static_cast<double>(pz) + 0.5) / static_cast<double>(n) - 0.5;
        const Eigen::Vector3d q = rt * Eigen::Vector3d(ux, uy, uz);
        // Back to voxel-index space; voxel centers sit at integer indices.
        acc += sample_trilinear(vol.values, n,
                                (q.x() + 0.5) * static_cast<double>(n) - 0.5,
                                (q.y() + 0.5) * static_cast<double>(n) - 0.5,
                                (q.z() + 0.5) * static_cast<double>(n) - 0.5);
      }
      img[py * n + px] = acc * vol.voxel_size;
    }
  }
  return img;
}

Tensor apply_psf(const Tensor& image, const PSFParams& psf, double pixel_size) {
  if (psf.kind == PSFParams::Kind::kNone) return image.clone();
  if (psf.sigma <= 0.0) throw std::invalid_argument("gaussian PSF needs sigma > 0");
  if (pixel_size <= 0.0) throw std::invalid_argument("pixel size must be positive");
  const Tensor kernel = make_gaussian_kernel(psf.sigma / pixel_size);
  return convolve2d_zero(image, kernel);
}

double add_noise_for_snr(Tensor& images, double snr, const Rng& rng_base) {
  if (snr <= 0.0) throw std::invalid_argument("snr must be positive");
  if (images.rank() != 3) throw std::invalid_argument("expected an image stack [n, N, N]");
  const int64_t count = images.dim(0);
  const int64_t per = images.dim(1) * images.dim(2);

  double mean = 0.0;
  for (int64_t i = 0; i < images.size(); ++i) mean += images[i];
  mean /= static_cast<double>(images.size());
  double var = 0.0;
  for (int64_t i = 0; i < images.size(); ++i) {
    const double d = images[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(images.size());
  if (var <= 0.0) throw std::invalid_argument("clean stack has zero variance");

  const double sigma = std::sqrt(var / snr);
  for (int64_t i = 0; i < count; ++i) {
    Rng r = rng_base.fork(static_cast<uint64_t>(i), 1);
    for (int64_t p = 0; p < per; ++p) images[i * per + p] += sigma * r.normal();
  }
  return sigma;
}

ParticleStack generate_dataset(const VolumeGrid& vol, int64_t n, const PSFParams& psf,
                               double snr, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("need at least one image");
  validate_volume(vol);

  ParticleStack stack;
  stack.psf = psf;
  stack.pixel_size = vol.voxel_size;
  stack.seed = seed;

  Rng pose_rng = Rng(seed).fork(0, 0);
  stack.poses.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) stack.poses.push_back(sample_uniform_rotation(pose_rng));

  const int64_t side = vol.n();
  stack.images = Tensor({n, side, side});
  const int64_t per = side * side;
  for (int64_t i = 0; i < n; ++i) {
    Tensor img = apply_psf(rotate_and_project(vol, stack.poses[static_cast<size_t>(i)]),
                           psf, vol.voxel_size);
    for (int64_t p = 0; p < per; ++p) stack.images[i * per + p] = img[p];
  }
  stack.noise_sigma = add_noise_for_snr(stack.images, snr, Rng(seed));
  return stack;
}

VolumeGrid make_blob_phantom(int64_t n, double voxel_size) {
  struct Blob {
    double cx, cy, cz, amp, sigma;
  };
  // Unit-cube coordinates; distinct weights/widths and non-coplanar centers
  // kill every symmetry including mirror.
  const Blob blobs[] = {
      {0.20, 0.02, -0.03, 1.00, 0.085},
      {-0.14, 0.18, 0.02, 0.80, 0.075},
      {-0.02, -0.16, 0.14, 0.90, 0.070},
      {0.10, 0.12, -0.18, 0.65, 0.060},
  };
  VolumeGrid vol;
  vol.voxel_size = voxel_size;
  vol.values = Tensor({n, n, n});
  for (int64_t iz = 0; iz < n; ++iz) {
    const double z = (static_cast<double>(iz) + 0.5) / static_cast<double>(n) - 0.5;
    for (int64_t iy = 0; iy < n; ++iy) {
      const double y = (static_cast<double>(iy) + 0.5) / static_cast<double>(n) - 0.5;
      for (int64_t ix = 0; ix < n; ++ix) {
        const double x = (static_cast<double>(ix) + 0.5) / static_cast<double>(n) - 0.5;
        double v = 0.0;
        for (const Blob& b : blobs) {
          const double d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy) +
                            (z - b.cz) * (z - b.cz);
          v += b.amp * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
        }
        vol.values[(iz * n + iy) * n + ix] = v;
      }
    }
  }
  double peak = 0.0;
  for (int64_t i = 0; i < vol.values.size(); ++i) peak = std::max(peak, vol.values[i]);
  for (int64_t i = 0; i < vol.values.size(); ++i) vol.values[i] /= peak;
  return vol;
}

VolumeGrid make_sphere_phantom(int64_t n, double voxel_size) {
  VolumeGrid vol;
  vol.voxel_size = voxel_size;
  vol.values = Tensor({n, n, n});
  for (int64_t iz = 0; iz < n; ++iz) {
    const double z = (static_cast<double>(iz) + 0.5) / static_cast<double>(n) - 0.5;
    for (int64_t iy = 0; iy < n; ++iy) {
      const double y = (static_cast<double>(iy) + 0.5) / static_cast<double>(n) - 0.5;
      for (int64_t ix = 0; ix < n; ++ix) {
        const double x = (static_cast<double>(ix) + 0.5) / static_cast<double>(n) - 0.5;
        const double r2 = x * x + y * y + z * z;
        vol.values[(iz * n + iy) * n + ix] = std::exp(-r2 / (2.0 * 0.13 * 0.13));
      }
    }
  }
  return vol;
}

void save_stack(const ParticleStack& stack, const std::string& mrc_path) {
  if (stack.images.rank() != 3) throw std::invalid_argument("stack images must be [n, N, N]");
  mrc_write(mrc_path, stack.images, stack.pixel_size, /*is_volume=*/false);

  nlohmann::json j;
  j["format"] = "rmfn-stack-v1";
  j["count"] = stack.count();
  j["side"] = stack.side();
  j["pixel_size"] = stack.pixel_size;
  j["noise_sigma"] = stack.noise_sigma;
  j["seed"] = stack.seed;
  j["psf"]["kind"] = stack.psf.kind == PSFParams::Kind::kGaussian ? "gaussian" : "none";
  j["psf"]["sigma"] = stack.psf.sigma;
  auto& poses = j["poses"] = nlohmann::json::array();
  for (const auto& r : stack.poses) {
    const Eigen::Vector4d q = matrix_to_quat(r);
    poses.push_back({q[0], q[1], q[2], q[3]});
  }
  std::ofstream f(mrc_path + ".json");
  if (!f) throw std::runtime_error("cannot write stack sidecar for '" + mrc_path + "'");
  f << j.dump(2) << "\n";
}

ParticleStack load_stack(const std::string& mrc_path) {
  MrcData data = mrc_read(mrc_path);
  ParticleStack stack;
  stack.images = data.values;
  stack.pixel_size = data.voxel_size;

  const std::string sidecar = mrc_path + ".json";
  if (!std::filesystem::exists(sidecar)) {
    std::fprintf(stderr, "warning: no sidecar '%s'; poses and PSF unknown\n",
                 sidecar.c_str());
    return stack;
  }
  std::ifstream f(sidecar);
  nlohmann::json j;
  f >> j;
  stack.pixel_size = j.value("pixel_size", stack.pixel_size);
  stack.noise_sigma = j.value("noise_sigma", 0.0);
  stack.seed = j.value("seed", uint64_t{0});
  if (j.contains("psf")) {
    stack.psf.kind = j["psf"].value("kind", "none") == std::string("gaussian")
                         ? PSFParams::Kind::kGaussian
                         : PSFParams::Kind::kNone;
    stack.psf.sigma = j["psf"].value("sigma", 2.0);
  }
  if (j.contains("poses")) {
    for (const auto& q : j["poses"])
      stack.poses.push_back(quat_to_matrix(q[0].get<double>(), q[1].get<double>(),
                                           q[2].get<double>(), q[3].get<double>()));
    if (static_cast<int64_t>(stack.poses.size()) != stack.count())
      throw std::runtime_error("sidecar pose count does not match the stack");
  }
  return stack;
}

}  // namespace rmfn
