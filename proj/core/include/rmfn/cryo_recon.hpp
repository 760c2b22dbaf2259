#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rmfn/autodiff.hpp"
#include "rmfn/cryo_sim.hpp"
#include "rmfn/model.hpp"
#include "rmfn/optimizer.hpp"
#include "rmfn/rng.hpp"
#include "rmfn/tensor.hpp"

namespace rmfn {

// Pose estimate kept as a frozen base rotation times a small trainable
// axis-angle delta. The delta is folded into the base after every
// alternation block, so theta stays near zero and the parameterization
// never approaches the |theta| = pi boundary.
struct PoseEstimate {
  Eigen::Matrix3d base = Eigen::Matrix3d::Identity();
  double theta = 0.0;
  Eigen::Vector3d u = Eigen::Vector3d::UnitZ();

  // rodrigues(project(theta, u)) * base; exactly base while theta == 0.
  Eigen::Matrix3d effective() const;
  // base <- effective(); delta re-seeded (theta = 1e-3, fresh random axis)
  // so both delta coordinates keep a usable gradient.
  void fold(Rng& rng);
};

// Geometry and targets for one frequency-marching stage. Targets are
// low-passed at the stage band and resampled onto a grid just wide enough
// for it, so early stages run at a fraction of full-resolution cost.
struct StageSetup {
  int scale = 1;
  double band = 0.0;       // cycles per unit cube edge
  int64_t grid = 0;        // G: render/target side
  int64_t depth = 0;       // D: integration samples along the ray
  double dz = 0.0;         // Angstrom per depth sample
  double pixel_size = 0.0; // Angstrom per render pixel
  Tensor coords;           // [G*G*D, 3] canonical (unrotated) sample points
  Tensor psf_kernel;       // discretized at pixel_size; empty when none
  Tensor images;           // [n, G, G] stage targets
};

StageSetup make_stage_setup(const ParticleStack& stack, int scale, double band,
                            int64_t grid, int64_t depth);

struct ReconConfig {
  ModelConfig model;            // d_in is forced to 3, d_out to 1
  std::vector<int64_t> epochs;  // per stage; length model.layers
  int64_t batch_size = 50;
  int64_t struct_iters = 5;
  int64_t pose_iters = 20;
  double lr_net = 1e-3;
  double lr_pose = 1e-2;
  bool optimize_poses = true;
  // Per-stage render grid / depth overrides; empty (or a 0 entry) means the
  // stack side for the grid and the grid for the depth.
  std::vector<int64_t> stage_grid;
  std::vector<int64_t> stage_depth;
  uint64_t seed = 1;
};

struct ReconEpochStats {
  int stage = 0;
  int64_t epoch = 0;      // global, 0-based
  double mean_loss = 0.0; // batch-mean projection loss, averaged over batches
  double median_pose_err_deg = -1.0;  // -1 when no ground truth is supplied
  double frac_within_5deg = -1.0;
};

struct ReconResult {
  RMFNModel model;
  std::vector<PoseEstimate> poses;
  std::vector<ReconEpochStats> history;
};

// One alternation block on one mini-batch: struct_iters Adam steps on the
// network with poses frozen, then pose_iters Adam steps on each image's
// delta with the network frozen (fresh pose moments every block), then the
// deltas are folded. Returns the batch-mean loss of the first network step.
double alternate_batch_step(RMFNModel& model, std::vector<PoseEstimate>& poses,
                            const StageSetup& setup,
                            const std::vector<int64_t>& batch, Adam& net_opt,
                            const ReconConfig& cfg, Rng& rng);

// Coarse-to-fine reconstruction over the model's band schedule. init_poses
// seeds the estimates; gt_poses, when given, only feeds the error columns
// of the history.
ReconResult frequency_marching_reconstruct(
    const ParticleStack& stack, const ReconConfig& cfg,
    const std::vector<Eigen::Matrix3d>& init_poses,
    const std::vector<Eigen::Matrix3d>* gt_poses = nullptr);

// Non-differentiable render of the model with the training-loss geometry:
// grid x grid orthogonal projection of scale `scale` over `depth` samples
// spanning a cube of edge `extent` Angstrom, then the PSF.
Tensor render_model_projection(const RMFNModel& model, int scale,
                               const Eigen::Matrix3d& pose, int64_t grid,
                               int64_t depth, double extent,
                               const PSFParams& psf);

// Single-image render loss as a differentiable program over the model
// parameters plus "pose.theta" [1] and "pose.u" [3] (the delta around
// `base`). The caller's ParamSet must carry those two extra leaves.
ad::Program make_render_loss_program(const ModelConfig& cfg, int scale,
                                     const Eigen::Matrix3d& base,
                                     const StageSetup& setup,
                                     int64_t image_index);

// Fourier shell correlation over integer shells 0..N/2.
struct FscCurve {
  std::vector<double> corr;  // indexed by shell radius
  int64_t n = 0;
  double voxel_size = 1.0;

  // Resolution in Angstrom at the first crossing below `threshold`, with
  // linear interpolation between shells; 2*voxel_size when the curve never
  // drops that far (the curve is trustworthy out to Nyquist).
  double resolution_at(double threshold) const;
  // Mean correlation over shells 1..N/2; DC is excluded.
  double auc() const;
};

FscCurve fsc_curve(const VolumeGrid& a, const VolumeGrid& b);

struct PoseErrorStats {
  std::vector<double> errors_deg;  // per image geodesic error
  std::vector<int64_t> histogram;  // 45 bins of 4 degrees covering [0, 180]
  double median_deg = 0.0;
  double frac_within_5deg = 0.0;
};

PoseErrorStats pose_error_stats(const std::vector<Eigen::Matrix3d>& est,
                                const std::vector<Eigen::Matrix3d>& gt);

// Samples output scale `scale` on an n^3 voxel-center grid into [z][y][x]
// storage. clamp_negative zeroes negative densities for export.
VolumeGrid bake_volume(const RMFNModel& model, int scale, int64_t n,
                       double voxel_size, bool clamp_negative = true);

}  // namespace rmfn
