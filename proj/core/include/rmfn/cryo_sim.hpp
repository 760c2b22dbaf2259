#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rmfn/rng.hpp"
#include "rmfn/tensor.hpp"

namespace rmfn {

// Cubic density map, stored [z][y][x], voxel edge in Angstrom. Voxel
// (ix, iy, iz) is centered at ((i + 0.5)/N - 0.5) in unit-cube coordinates,
// the same domain the coordinate network sees.
struct VolumeGrid {
  Tensor values;  // [N, N, N]
  double voxel_size = 1.0;

  int64_t n() const { return values.dim(0); }
  double extent() const { return voxel_size * static_cast<double>(n()); }
};

// Throws unless cubic with even N and non-negative finite values.
void validate_volume(const VolumeGrid& vol);

struct PSFParams {
  enum class Kind { kNone, kGaussian };
  Kind kind = Kind::kNone;
  double sigma = 2.0;  // Angstrom; > 0 when gaussian
};

struct ParticleStack {
  Tensor images;  // [n, N, N]
  std::vector<Eigen::Matrix3d> poses;  // ground truth; may be empty on read
  PSFParams psf;
  double noise_sigma = 0.0;
  double pixel_size = 1.0;  // Angstrom
  uint64_t seed = 0;

  int64_t count() const { return images.dim(0); }
  int64_t side() const { return images.dim(1); }
};

// Orthogonal projection of the rotated map: trilinear samples of V(R^T x)
// on the original grid (zero outside the cube), Riemann-summed along z and
// scaled by voxel_size. Output pixel (x, y) spans the same unit square as
// the volume's x/y axes.
Tensor rotate_and_project(const VolumeGrid& vol, const Eigen::Matrix3d& r);

// Zero-padded convolution with the discretized PSF. pixel_size converts the
// Gaussian sigma from Angstrom to pixels. kind none is the identity.
Tensor apply_psf(const Tensor& image, const PSFParams& psf, double pixel_size);

// Adds i.i.d. zero-mean Gaussian noise with sigma^2 = var(stack)/snr to every
// image in place; noise for image i comes from rng_base.fork(i, 1) so the
// result is order-independent. Returns sigma. Errors on a constant stack.
double add_noise_for_snr(Tensor& images, double snr, const Rng& rng_base);

// n Haar-uniform poses -> project -> PSF -> shared-sigma noise.
ParticleStack generate_dataset(const VolumeGrid& vol, int64_t n, const PSFParams& psf,
                               double snr, uint64_t seed);

// Four separated Gaussian blobs with distinct weights and widths at
// non-coplanar centers: no symmetry, mirror-distinguishable, so a pose is
// uniquely identifiable.
VolumeGrid make_blob_phantom(int64_t n, double voxel_size);

// Isotropic radial bump; projections are rotation-invariant up to
// interpolation error.
VolumeGrid make_sphere_phantom(int64_t n, double voxel_size);

// Stack <-> MRC (mode 2) plus a JSON sidecar at <path>.json holding poses
// (unit quaternions, w >= 0), PSF, noise sigma, pixel size, and seed. A
// missing sidecar loads images alone with a warning.
void save_stack(const ParticleStack& stack, const std::string& mrc_path);
ParticleStack load_stack(const std::string& mrc_path);

}  // namespace rmfn
