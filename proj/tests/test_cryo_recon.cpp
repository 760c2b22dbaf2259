#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "rmfn/cryo_recon.hpp"
#include "rmfn/cryo_sim.hpp"
#include "rmfn/filtering.hpp"
#include "rmfn/model.hpp"
#include "rmfn/mrc.hpp"
#include "rmfn/optimizer.hpp"
#include "rmfn/rng.hpp"
#include "rmfn/so3.hpp"
#include "rmfn/spectral.hpp"
#include "rmfn/tensor.hpp"

using namespace rmfn;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string tmp_path(const std::string& name) { return "/tmp/rmfn_recon_" + name; }

double rel_l2(const Tensor& a, const Tensor& b) {
  REQUIRE(a.size() == b.size());
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    num += d * d;
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::sqrt(den);
}

double max_abs_diff(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

Eigen::Vector3d unit_axis(Rng& rng) {
  for (;;) {
    Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    if (v.norm() > 1e-12) return v.normalized();
  }
}

// Sets every head to zero and head1's bias to `c`, making every output
// scale identically c while the hidden chain stays live.
void make_constant_model(RMFNModel& model, double c) {
  for (int s = 1; s <= model.cfg.layers; ++s) {
    for (const char* leaf : {"w", "b"}) {
      Tensor& v = model.params.at(RMFNModel::head_key(s, leaf)).value;
      v = Tensor(v.shape());
    }
  }
  model.params.at(RMFNModel::head_key(1, "b")).value[0] = c;
}

// Adam-fits the model's final output scale to the volume's voxel values on
// the voxel-center grid (coordinates are fixed, so the filter banks are
// precomputed once and entered as constants). Returns the relative l2
// error of the fit at the end.
double fit_model_to_volume(RMFNModel& model, const VolumeGrid& vol, int iters,
                           double lr) {
  const int64_t n = vol.n();
  const Tensor coords = make_grid_coords({n, n, n});
  // make_grid_coords rows run (ix, iy, iz) row-major with axis 0 = x, while
  // the volume stores [z][y][x]; transpose into the coordinate order.
  Tensor target({n * n * n, 1});
  for (int64_t ix = 0; ix < n; ++ix)
    for (int64_t iy = 0; iy < n; ++iy)
      for (int64_t iz = 0; iz < n; ++iz)
        target[(ix * n + iy) * n + iz] = vol.values[(iz * n + iy) * n + ix];

  const std::vector<Tensor> banks = filters_numeric(model, coords);
  AdamConfig acfg;
  acfg.lr = lr;
  Adam opt(acfg);
  const int scale = model.cfg.layers;
  for (int it = 0; it < iters; ++it) {
    ad::Tape tape;
    auto leaves = bind_params(tape, model.params, /*with_grads=*/true);
    std::vector<ad::Value> g;
    g.reserve(banks.size());
    for (const Tensor& t : banks) g.push_back(tape.constant(t));
    ModelProgram prog = build_model_program(tape, leaves, model.cfg, g, scale);
    ad::Value loss = tape.mean(
        tape.square(tape.sub(prog.y[static_cast<size_t>(scale - 1)], tape.constant(target))));
    tape.backward(loss);
    std::map<std::string, Tensor> grads;
    for (const auto& [name, par] : model.params.items()) {
      if (!par.trainable) continue;
      const ad::Value leaf = leaves.at(name);
      if (tape.has_grad(leaf)) grads.emplace(name, tape.grad(leaf));
    }
    opt.step(model.params, grads);
  }
  const Tensor out = forward_outputs(model, coords)[static_cast<size_t>(scale - 1)];
  return rel_l2(out, target);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t m = v.size();
  return (m % 2 == 1) ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

}  // namespace

TEST_CASE("pose estimate: effective pose and delta folding") {
  Rng rng(3);
  PoseEstimate pe;
  pe.base = sample_uniform_rotation(rng);

  SUBCASE("zero delta returns the base verbatim") {
    CHECK(max_abs_diff(pe.effective(), pe.base) == 0.0);
  }

  SUBCASE("nonzero delta left-multiplies a Rodrigues rotation") {
    pe.theta = 0.2;
    pe.u = Eigen::Vector3d(0.0, 0.0, 1.0);
    const Eigen::Matrix3d expect = rodrigues({0.2, Eigen::Vector3d::UnitZ()}) * pe.base;
    CHECK(max_abs_diff(pe.effective(), expect) <= 1e-14);
    CHECK(is_rotation(pe.effective()));
  }

  SUBCASE("fold moves the delta into the base and reseeds it") {
    pe.theta = 0.37;
    pe.u = unit_axis(rng);
    const Eigen::Matrix3d eff = pe.effective();
    pe.fold(rng);
    CHECK(max_abs_diff(pe.base, eff) == 0.0);
    CHECK(pe.theta == 1e-3);
    CHECK(pe.u.norm() == doctest::Approx(1.0).epsilon(1e-12));
    // The reseeded delta is a 1e-3 rad nudge, not a real move.
    CHECK(geodesic_distance(pe.effective(), pe.base) == doctest::Approx(1e-3).epsilon(1e-6));
  }
}

TEST_CASE("render_model_projection: constant model integrates to c * extent") {
  ModelConfig cfg;
  cfg.d_in = 3;
  cfg.d_h = 6;
  cfg.d_out = 1;
  cfg.layers = 2;
  cfg.b_max = 4.0;
  Rng rng(11);
  RMFNModel model = create_model(cfg, rng);
  const double c = 0.7;
  make_constant_model(model, c);

  const double extent = 3.2;
  const Eigen::Matrix3d pose = sample_uniform_rotation(rng);
  for (int scale = 1; scale <= 2; ++scale) {
    const Tensor img = render_model_projection(model, scale, pose, 8, 5, extent, PSFParams{});
    REQUIRE(img.rank() == 2);
    REQUIRE(img.dim(0) == 8);
    REQUIRE(img.dim(1) == 8);
    for (int64_t i = 0; i < img.size(); ++i)
      CHECK(img[i] == doctest::Approx(c * extent).epsilon(1e-12));
  }

  SUBCASE("argument validation") {
    CHECK_THROWS_AS(render_model_projection(model, 0, pose, 8, 5, extent, PSFParams{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(render_model_projection(model, 3, pose, 8, 5, extent, PSFParams{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(render_model_projection(model, 1, pose, 0, 5, extent, PSFParams{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(render_model_projection(model, 1, pose, 8, 0, extent, PSFParams{}),
                    std::invalid_argument);
  }
}

TEST_CASE("fitted sphere model: projection symmetry and simulator consistency") {
  const VolumeGrid vol = make_sphere_phantom(16, 1.0);
  ModelConfig cfg;
  cfg.d_in = 3;
  cfg.d_h = 32;
  cfg.d_out = 1;
  cfg.layers = 2;
  cfg.b_max = 5.0;
  Rng rng(7);
  RMFNModel model = create_model(cfg, rng);
  const double fit_err = fit_model_to_volume(model, vol, 600, 1e-2);
  // Guard: the claims below are about a *well-fitted* model.
  REQUIRE(fit_err <= 0.03);

  Rng pose_rng(19);
  const Eigen::Matrix3d ra = sample_uniform_rotation(pose_rng);
  const Eigen::Matrix3d rb = sample_uniform_rotation(pose_rng);
  const double extent = vol.extent();

  SUBCASE("projections of the spherically symmetric fit agree across poses") {
    const Tensor pa = render_model_projection(model, 2, ra, 16, 16, extent, PSFParams{});
    const Tensor pb = render_model_projection(model, 2, rb, 16, 16, extent, PSFParams{});
    const Tensor pi =
        render_model_projection(model, 2, Eigen::Matrix3d::Identity(), 16, 16, extent, PSFParams{});
    CHECK(rel_l2(pa, pb) <= 0.02);
    CHECK(rel_l2(pa, pi) <= 0.02);
  }

  SUBCASE("render agrees with rotate-and-project of the baked volume") {
    // Bake on a finer grid so trilinear interpolation error stays small;
    // same physical cube, so the quadratures line up sample for sample.
    const VolumeGrid baked = bake_volume(model, 2, 32, extent / 32.0);
    for (const Eigen::Matrix3d& pose : {Eigen::Matrix3d(Eigen::Matrix3d::Identity()), ra}) {
      const Tensor direct = render_model_projection(model, 2, pose, 32, 32, extent, PSFParams{});
      const Tensor interp = rotate_and_project(baked, pose);
      CHECK(rel_l2(direct, interp) <= 0.02);
    }
  }
}

TEST_CASE("make_stage_setup: geometry, target filtering, and validation") {
  const VolumeGrid vol = make_blob_phantom(8, 1.0);
  ParticleStack stack = generate_dataset(vol, 3, PSFParams{}, 1e12, 5);

  SUBCASE("geometry fields and coordinate layout") {
    const StageSetup setup = make_stage_setup(stack, 1, 2.0, 4, 6);
    CHECK(setup.scale == 1);
    CHECK(setup.band == 2.0);
    CHECK(setup.grid == 4);
    CHECK(setup.depth == 6);
    CHECK(setup.pixel_size == doctest::Approx(8.0 / 4.0).epsilon(1e-15));
    CHECK(setup.dz == doctest::Approx(8.0 / 6.0).epsilon(1e-15));
    REQUIRE(setup.coords.rank() == 2);
    CHECK(setup.coords.dim(0) == 4 * 4 * 6);
    CHECK(setup.coords.dim(1) == 3);
    // Row (py*G + px)*D + d carries ((px+.5)/G-.5, (py+.5)/G-.5, (d+.5)/D-.5).
    CHECK(setup.coords[0] == doctest::Approx(-0.375).epsilon(1e-15));
    CHECK(setup.coords[1] == doctest::Approx(-0.375).epsilon(1e-15));
    CHECK(setup.coords[2] == doctest::Approx(0.5 / 6.0 - 0.5).epsilon(1e-15));
    const int64_t row = (1 * 4 + 2) * 6 + 3;  // py=1, px=2, d=3
    CHECK(setup.coords[row * 3 + 0] == doctest::Approx(2.5 / 4.0 - 0.5).epsilon(1e-15));
    CHECK(setup.coords[row * 3 + 1] == doctest::Approx(1.5 / 4.0 - 0.5).epsilon(1e-15));
    CHECK(setup.coords[row * 3 + 2] == doctest::Approx(3.5 / 6.0 - 0.5).epsilon(1e-15));
    CHECK(setup.psf_kernel.size() == 0);
    REQUIRE(setup.images.rank() == 3);
    CHECK(setup.images.dim(0) == 3);
    CHECK(setup.images.dim(1) == 4);
  }

  SUBCASE("low-pass and resampling preserve each image's mean") {
    const StageSetup setup = make_stage_setup(stack, 1, 2.0, 4, 4);
    for (int64_t i = 0; i < 3; ++i) {
      double orig = 0.0, small = 0.0;
      for (int64_t p = 0; p < 64; ++p) orig += stack.images[i * 64 + p];
      for (int64_t p = 0; p < 16; ++p) small += setup.images[i * 16 + p];
      CHECK(small / 16.0 == doctest::Approx(orig / 64.0).epsilon(1e-9));
    }
  }

  SUBCASE("PSF kernel is discretized at the stage pixel size") {
    ParticleStack blurred = stack;
    blurred.psf.kind = PSFParams::Kind::kGaussian;
    blurred.psf.sigma = 0.6;  // Angstrom; 0.6 px at the full-resolution grid
    const StageSetup setup = make_stage_setup(blurred, 1, 2.0, 8, 8);
    REQUIRE(setup.psf_kernel.size() > 0);
    double sum = 0.0;
    for (int64_t i = 0; i < setup.psf_kernel.size(); ++i) sum += setup.psf_kernel[i];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

    blurred.psf.sigma = 3.0;  // kernel side 19 cannot fit an 8-pixel stage
    CHECK_THROWS_WITH_AS(make_stage_setup(blurred, 1, 2.0, 8, 8),
                         doctest::Contains("does not fit"), std::invalid_argument);
  }

  SUBCASE("validation") {
    CHECK_THROWS_WITH_AS(make_stage_setup(stack, 1, 2.0, 3, 4),
                         doctest::Contains("even"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(make_stage_setup(stack, 1, 2.0, 16, 4),
                         doctest::Contains("larger than the stack side"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(make_stage_setup(stack, 1, 2.0, 4, 0),
                         doctest::Contains("depth"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(make_stage_setup(stack, 1, 0.0, 4, 4),
                         doctest::Contains("band"), std::invalid_argument);
  }
}

TEST_CASE("render loss program: gradients pass the finite-difference check") {
  const VolumeGrid vol = make_blob_phantom(8, 1.0);
  ParticleStack stack = generate_dataset(vol, 2, PSFParams{}, 1e9, 3);
  stack.psf.kind = PSFParams::Kind::kGaussian;
  stack.psf.sigma = 0.8;  // exercises the PSF branch of the program

  ModelConfig cfg;
  cfg.d_in = 3;
  cfg.d_h = 4;
  cfg.d_out = 1;
  cfg.layers = 2;
  cfg.b_max = 4.0;
  Rng rng(13);
  RMFNModel model = create_model(cfg, rng);

  const StageSetup setup = make_stage_setup(stack, 2, 3.0, 8, 4);
  const Eigen::Matrix3d base = sample_uniform_rotation(rng);
  const ad::Program program = make_render_loss_program(cfg, 2, base, setup, 0);

  ad::ParamSet params;
  for (const auto& [name, par] : model.params.items())
    params.add(name, par.value.clone(), par.trainable);
  params.add("pose.theta", Tensor::scalar(0.3));
  params.add("pose.u", Tensor({3}, {0.48, -0.6, 0.64}));

  const ad::GradCheckReport rep = grad_check(program, params, 1e-4, 1e-5);
  INFO("worst leaf: ", rep.worst_key, "[", rep.worst_index, "] analytic=", rep.analytic,
       " numeric=", rep.numeric);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err <= 1e-4);

  SUBCASE("image index is range-checked") {
    CHECK_THROWS_WITH_AS(make_render_loss_program(cfg, 2, base, setup, 5),
                         doctest::Contains("image index"), std::invalid_argument);
  }
}

TEST_CASE("alternate_batch_step: fixed-pose regression is non-increasing") {
  SUBCASE("configuration defaults") {
    const ReconConfig d;
    CHECK(d.struct_iters == 5);
    CHECK(d.pose_iters == 20);
    CHECK(d.lr_net == 1e-3);
    CHECK(d.lr_pose == 1e-2);
    CHECK(d.batch_size == 50);
    CHECK(d.optimize_poses);
  }

  const VolumeGrid vol = make_blob_phantom(8, 1.0);
  const ParticleStack stack = generate_dataset(vol, 4, PSFParams{}, 1e12, 5);

  ModelConfig mcfg;
  mcfg.d_in = 3;
  mcfg.d_h = 8;
  mcfg.d_out = 1;
  mcfg.layers = 2;
  mcfg.b_max = 4.0;
  Rng rng(29);
  RMFNModel model = create_model(mcfg, rng);

  const StageSetup setup =
      make_stage_setup(stack, 2, model.band_limits[2], 8, 8);

  std::vector<PoseEstimate> poses(4);
  for (size_t i = 0; i < 4; ++i) poses[i].base = stack.poses[i];

  ReconConfig cfg;
  cfg.model = mcfg;
  cfg.struct_iters = 1;
  cfg.pose_iters = 0;  // degenerate schedule: pure fixed-pose regression
  cfg.optimize_poses = false;

  AdamConfig net_adam;
  net_adam.lr = cfg.lr_net;
  Adam opt(net_adam);
  const std::vector<int64_t> batch = {0, 1, 2, 3};

  std::vector<double> losses;
  for (int step = 0; step < 50; ++step)
    losses.push_back(alternate_batch_step(model, poses, setup, batch, opt, cfg, rng));
  for (size_t i = 0; i + 1 < losses.size(); ++i) {
    INFO("step ", i, ": ", losses[i], " -> ", losses[i + 1]);
    CHECK(losses[i + 1] <= losses[i]);
  }
  CHECK(losses.back() < losses.front());

  // Frozen poses are never touched, let alone folded.
  for (size_t i = 0; i < 4; ++i) {
    CHECK(poses[i].theta == 0.0);
    CHECK(max_abs_diff(poses[i].effective(), stack.poses[i]) == 0.0);
  }

  SUBCASE("empty batch is rejected") {
    CHECK_THROWS_WITH_AS(alternate_batch_step(model, poses, setup, {}, opt, cfg, rng),
                         doctest::Contains("empty batch"), std::invalid_argument);
  }

  SUBCASE("a non-finite parameter aborts with a diagnostic") {
    model.params.at(RMFNModel::head_key(1, "w")).value[0] =
        std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(alternate_batch_step(model, poses, setup, batch, opt, cfg, rng),
                         doctest::Contains("non-finite"), std::runtime_error);
  }
}

TEST_CASE("alternate_batch_step: pose-only descent shrinks the median error") {
  const VolumeGrid vol = make_blob_phantom(16, 1.0);
  ModelConfig cfg;
  cfg.d_in = 3;
  cfg.d_h = 32;
  cfg.d_out = 1;
  cfg.layers = 2;
  cfg.b_max = 6.0;
  Rng rng(41);
  RMFNModel model = create_model(cfg, rng);
  const double fit_err = fit_model_to_volume(model, vol, 500, 1e-2);
  REQUIRE(fit_err <= 0.15);  // ground-truth-fitted, good enough to align against

  const ParticleStack stack = generate_dataset(vol, 6, PSFParams{}, 1e12, 7);
  const StageSetup setup =
      make_stage_setup(stack, 2, model.band_limits[2], 16, 16);

  Rng perturb_rng(43);
  std::vector<PoseEstimate> poses(6);
  for (size_t i = 0; i < 6; ++i) {
    poses[i].base = perturb_pose(stack.poses[i], 10.0, 10.0, perturb_rng);
    poses[i].theta = 1e-3;  // live-delta seeding, as the reconstruction loop does
    poses[i].u = unit_axis(perturb_rng);
  }

  std::vector<double> before;
  for (size_t i = 0; i < 6; ++i)
    before.push_back(geodesic_distance(poses[i].effective(), stack.poses[i]) * 180.0 / kPi);
  const double median_before = median_of(before);
  CHECK(median_before == doctest::Approx(10.0).epsilon(0.02));

  ReconConfig rcfg;
  rcfg.model = cfg;
  rcfg.struct_iters = 0;  // network frozen: pure pose refinement
  rcfg.pose_iters = 20;
  rcfg.lr_pose = 1e-2;
  Adam opt;
  Rng fold_rng(47);
  alternate_batch_step(model, poses, setup, {0, 1, 2, 3, 4, 5}, opt, rcfg, fold_rng);

  std::vector<Eigen::Matrix3d> est, gt;
  for (size_t i = 0; i < 6; ++i) {
    CHECK(is_rotation(poses[i].effective(), 1e-10));
    est.push_back(poses[i].effective());
    gt.push_back(stack.poses[i]);
  }
  const PoseErrorStats stats = pose_error_stats(est, gt);
  INFO("median before ", median_before, " deg, after ", stats.median_deg, " deg");
  CHECK(stats.median_deg < median_before);
}

TEST_CASE("frequency_marching_reconstruct: known-pose ablation") {
  const VolumeGrid vol = make_blob_phantom(8, 1.0);
  const ParticleStack stack = generate_dataset(vol, 8, PSFParams{}, 1e6, 17);

  ReconConfig cfg;
  cfg.model.d_in = 3;
  cfg.model.d_h = 8;
  cfg.model.d_out = 1;
  cfg.model.layers = 2;
  cfg.model.b_max = 4.0;
  cfg.epochs = {2, 2};
  cfg.batch_size = 4;
  cfg.struct_iters = 2;
  cfg.optimize_poses = false;
  cfg.seed = 23;

  const ReconResult res = frequency_marching_reconstruct(stack, cfg, stack.poses, &stack.poses);

  REQUIRE(res.history.size() == 4);
  const int expect_stage[] = {1, 1, 2, 2};
  for (size_t e = 0; e < 4; ++e) {
    CHECK(res.history[e].stage == expect_stage[e]);
    CHECK(res.history[e].epoch == static_cast<int64_t>(e));
    // Poses are frozen at ground truth, so the error columns stay at zero.
    CHECK(res.history[e].median_pose_err_deg <= 1e-5);
    CHECK(res.history[e].frac_within_5deg == 1.0);
  }
  // Epoch-mean loss at each stage's end does not exceed its start.
  CHECK(res.history[1].mean_loss <= res.history[0].mean_loss);
  CHECK(res.history[3].mean_loss <= res.history[2].mean_loss);

  for (size_t i = 0; i < res.poses.size(); ++i) {
    CHECK(is_rotation(res.poses[i].effective(), 1e-10));
    CHECK(max_abs_diff(res.poses[i].effective(), stack.poses[i]) == 0.0);
  }

  SUBCASE("validation") {
    ReconConfig bad = cfg;
    bad.epochs = {2};
    CHECK_THROWS_WITH_AS(frequency_marching_reconstruct(stack, bad, stack.poses, nullptr),
                         doctest::Contains("epochs"), std::invalid_argument);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_WITH_AS(frequency_marching_reconstruct(stack, bad, stack.poses, nullptr),
                         doctest::Contains("batch_size"), std::invalid_argument);
    bad = cfg;
    bad.struct_iters = 0;
    CHECK_THROWS_WITH_AS(frequency_marching_reconstruct(stack, bad, stack.poses, nullptr),
                         doctest::Contains("struct_iters"), std::invalid_argument);
    bad = cfg;
    bad.stage_grid = {8};
    CHECK_THROWS_WITH_AS(frequency_marching_reconstruct(stack, bad, stack.poses, nullptr),
                         doctest::Contains("stage_grid"), std::invalid_argument);
    bad = cfg;
    bad.stage_depth = {8, 8, 8};
    CHECK_THROWS_WITH_AS(frequency_marching_reconstruct(stack, bad, stack.poses, nullptr),
                         doctest::Contains("stage_depth"), std::invalid_argument);

    std::vector<Eigen::Matrix3d> short_init(stack.poses.begin(), stack.poses.end() - 1);
    CHECK_THROWS_WITH_AS(frequency_marching_reconstruct(stack, cfg, short_init, nullptr),
                         doctest::Contains("init_poses"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(frequency_marching_reconstruct(stack, cfg, stack.poses, &short_init),
                         doctest::Contains("gt_poses"), std::invalid_argument);
  }
}

TEST_CASE("frequency_marching_reconstruct: single-stage degeneracy and determinism") {
  const VolumeGrid vol = make_blob_phantom(8, 1.0);
  const ParticleStack stack = generate_dataset(vol, 6, PSFParams{}, 1e6, 31);

  SUBCASE("L=1 runs the whole budget at the final band") {
    ReconConfig cfg;
    cfg.model.d_in = 3;
    cfg.model.d_h = 6;
    cfg.model.layers = 1;
    cfg.model.b_max = 4.0;
    cfg.epochs = {2};
    cfg.batch_size = 3;
    cfg.struct_iters = 1;
    cfg.optimize_poses = false;
    cfg.seed = 37;
    const ReconResult res = frequency_marching_reconstruct(stack, cfg, stack.poses, nullptr);
    REQUIRE(res.history.size() == 2);
    for (const ReconEpochStats& st : res.history) {
      CHECK(st.stage == 1);
      CHECK(st.median_pose_err_deg == -1.0);  // no ground truth supplied
      CHECK(st.frac_within_5deg == -1.0);
    }
    CHECK(res.model.cfg.layers == 1);
    CHECK(res.model.band_limits.size() == 2);
    CHECK(res.model.band_limits[1] == doctest::Approx(4.0).epsilon(1e-12));
  }

  SUBCASE("identical config and seed reproduce bit-identical state") {
    ReconConfig cfg;
    cfg.model.d_in = 3;
    cfg.model.d_h = 6;
    cfg.model.layers = 2;
    cfg.model.b_max = 4.0;
    cfg.epochs = {1, 1};
    cfg.batch_size = 3;
    cfg.struct_iters = 1;
    cfg.pose_iters = 2;  // live poses: folding consumes the seeded stream
    cfg.optimize_poses = true;
    cfg.seed = 53;

    std::vector<Eigen::Matrix3d> init(6);
    Rng prng(59);
    for (size_t i = 0; i < 6; ++i) init[i] = perturb_pose(stack.poses[i], 5.0, 15.0, prng);

    const ReconResult a = frequency_marching_reconstruct(stack, cfg, init, &stack.poses);
    const ReconResult b = frequency_marching_reconstruct(stack, cfg, init, &stack.poses);

    REQUIRE(a.history.size() == b.history.size());
    for (size_t e = 0; e < a.history.size(); ++e) {
      CHECK(a.history[e].mean_loss == b.history[e].mean_loss);
      CHECK(a.history[e].median_pose_err_deg == b.history[e].median_pose_err_deg);
    }
    for (const auto& [name, par] : a.model.params.items()) {
      const Tensor& other = b.model.params.at(name).value;
      REQUIRE(par.value.size() == other.size());
      for (int64_t k = 0; k < par.value.size(); ++k) CHECK(par.value[k] == other[k]);
    }
    for (size_t i = 0; i < a.poses.size(); ++i) {
      CHECK(max_abs_diff(a.poses[i].effective(), b.poses[i].effective()) == 0.0);
      CHECK(is_rotation(a.poses[i].effective(), 1e-10));
    }
  }
}

TEST_CASE("fsc_curve: identity, scale invariance, and noise floor") {
  Rng rng(61);

  SUBCASE("a volume against itself correlates to one on every shell") {
    VolumeGrid a;
    a.voxel_size = 1.25;
    a.values = Tensor({8, 8, 8});
    for (int64_t i = 0; i < a.values.size(); ++i) a.values[i] = rng.uniform(0.0, 1.0);
    const FscCurve curve = fsc_curve(a, a);
    REQUIRE(curve.corr.size() == 5);  // shells 0..N/2
    CHECK(curve.n == 8);
    CHECK(curve.voxel_size == 1.25);
    for (double c : curve.corr) CHECK(c == doctest::Approx(1.0).epsilon(1e-12));
    // Never crosses 0.5: resolution saturates at 2 * voxel_size.
    CHECK(curve.resolution_at(0.5) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(curve.auc() == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("normalized correlation ignores a global scale") {
    VolumeGrid a;
    a.voxel_size = 1.0;
    a.values = Tensor({8, 8, 8});
    for (int64_t i = 0; i < a.values.size(); ++i) a.values[i] = rng.uniform(0.0, 1.0);
    VolumeGrid b = a;
    b.values = a.values.clone();
    for (int64_t i = 0; i < b.values.size(); ++i) b.values[i] *= 2.0;
    const FscCurve curve = fsc_curve(a, b);
    for (double c : curve.corr) CHECK(c == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("independent noise stays under the null-correlation bound") {
    const int64_t n = 32;
    VolumeGrid a, b;
    a.voxel_size = b.voxel_size = 1.0;
    a.values = Tensor({n, n, n});
    b.values = Tensor({n, n, n});
    for (int64_t i = 0; i < a.values.size(); ++i) a.values[i] = rng.uniform(0.0, 1.0);
    for (int64_t i = 0; i < b.values.size(); ++i) b.values[i] = rng.uniform(0.0, 1.0);
    const FscCurve curve = fsc_curve(a, b);

    // Shell populations under the same rounded-radius binning.
    std::vector<int64_t> count(static_cast<size_t>(n / 2 + 1), 0);
    for (int64_t kz = 0; kz < n; ++kz) {
      const double fz = static_cast<double>(kz <= n / 2 ? kz : kz - n);
      for (int64_t ky = 0; ky < n; ++ky) {
        const double fy = static_cast<double>(ky <= n / 2 ? ky : ky - n);
        for (int64_t kx = 0; kx < n; ++kx) {
          const double fx = static_cast<double>(kx <= n / 2 ? kx : kx - n);
          const auto r = static_cast<int64_t>(
              std::llround(std::sqrt(fx * fx + fy * fy + fz * fz)));
          if (r <= n / 2) ++count[static_cast<size_t>(r)];
        }
      }
    }

    // Equal positive means: DC correlates to exactly one.
    CHECK(curve.corr[0] == doctest::Approx(1.0).epsilon(1e-12));
    for (size_t r = 1; r < curve.corr.size(); ++r) {
      const double bound = 3.0 / std::sqrt(static_cast<double>(count[r]));
      INFO("shell ", r, " count ", count[r], " corr ", curve.corr[r]);
      CHECK(std::abs(curve.corr[r]) <= bound);
    }
  }

  SUBCASE("mismatched inputs are rejected") {
    VolumeGrid a, b, c;
    a.values = Tensor({8, 8, 8});
    b.values = Tensor({16, 16, 16});
    c.values = Tensor({8, 8, 8});
    a.voxel_size = b.voxel_size = 1.0;
    c.voxel_size = 2.0;
    for (int64_t i = 0; i < a.values.size(); ++i) a.values[i] = 1.0;
    for (int64_t i = 0; i < b.values.size(); ++i) b.values[i] = 1.0;
    for (int64_t i = 0; i < c.values.size(); ++i) c.values[i] = 1.0;
    CHECK_THROWS_WITH_AS(fsc_curve(a, b), doctest::Contains("sizes differ"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(fsc_curve(a, c), doctest::Contains("voxel sizes differ"),
                         std::invalid_argument);
  }

  SUBCASE("resolution interpolates linearly between shells") {
    FscCurve curve;
    curve.n = 16;
    curve.voxel_size = 2.0;
    curve.corr = {1.0, 0.9, 0.8, 0.8, 0.2, 0.1, 0.0, 0.0, 0.0};
    // 0.5 is crossed between shells 3 (0.8) and 4 (0.2): r* = 3.5.
    CHECK(curve.resolution_at(0.5) == doctest::Approx(2.0 * 16.0 / 3.5).epsilon(1e-12));
    // AUC averages shells 1..N/2, DC excluded.
    const double expect = (0.9 + 0.8 + 0.8 + 0.2 + 0.1) / 8.0;
    CHECK(curve.auc() == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("pose_error_stats: histogram binning and summary statistics") {
  Rng rng(67);
  std::vector<Eigen::Matrix3d> gt(7);
  for (auto& m : gt) m = sample_uniform_rotation(rng);

  SUBCASE("exact estimates land in the first bin with a zero median") {
    const PoseErrorStats st = pose_error_stats(gt, gt);
    REQUIRE(st.histogram.size() == 45);  // 45 bins of 4 degrees cover [0, 180]
    CHECK(st.histogram[0] == 7);
    for (size_t b = 1; b < st.histogram.size(); ++b) CHECK(st.histogram[b] == 0);
    CHECK(st.median_deg <= 1e-5);
    CHECK(st.frac_within_5deg == 1.0);
  }

  SUBCASE("uniform 90-degree offsets fill exactly the 88-92 bin") {
    std::vector<Eigen::Matrix3d> est(7);
    for (size_t i = 0; i < est.size(); ++i)
      est[i] = rodrigues({kPi / 2.0, unit_axis(rng)}) * gt[i];
    const PoseErrorStats st = pose_error_stats(est, gt);
    CHECK(st.histogram[22] == 7);  // bin 22 spans [88, 92)
    for (size_t b = 0; b < st.histogram.size(); ++b)
      if (b != 22) CHECK(st.histogram[b] == 0);
    CHECK(st.median_deg == doctest::Approx(90.0).epsilon(1e-9));
    CHECK(st.frac_within_5deg == 0.0);
    REQUIRE(st.errors_deg.size() == 7);
    for (double e : st.errors_deg) CHECK(e == doctest::Approx(90.0).epsilon(1e-9));
  }

  SUBCASE("size mismatch and empty input are rejected") {
    std::vector<Eigen::Matrix3d> shorter(gt.begin(), gt.end() - 1);
    CHECK_THROWS_AS(pose_error_stats(shorter, gt), std::invalid_argument);
    CHECK_THROWS_AS(pose_error_stats({}, {}), std::invalid_argument);
  }
}

TEST_CASE("bake_volume: constants, band limits, and MRC round trip") {
  ModelConfig cfg;
  cfg.d_in = 3;
  cfg.d_h = 8;
  cfg.d_out = 1;
  cfg.layers = 2;
  cfg.b_max = 5.0;
  Rng rng(71);
  RMFNModel model = create_model(cfg, rng);

  SUBCASE("constant model bakes to a constant volume") {
    RMFNModel flat = create_model(cfg, rng);
    make_constant_model(flat, 0.6);
    const VolumeGrid vol = bake_volume(flat, 2, 8, 0.75);
    CHECK(vol.voxel_size == 0.75);
    REQUIRE(vol.values.rank() == 3);
    CHECK(vol.n() == 8);
    for (int64_t i = 0; i < vol.values.size(); ++i) CHECK(vol.values[i] == 0.6);

    make_constant_model(flat, -0.4);
    const VolumeGrid clamped = bake_volume(flat, 2, 8, 0.75);
    for (int64_t i = 0; i < clamped.values.size(); ++i) CHECK(clamped.values[i] == 0.0);
    const VolumeGrid raw = bake_volume(flat, 2, 8, 0.75, /*clamp_negative=*/false);
    for (int64_t i = 0; i < raw.values.size(); ++i) CHECK(raw.values[i] == -0.4);
  }

  SUBCASE("pre-clamp bake respects each scale's band limit") {
    for (int scale = 1; scale <= 2; ++scale) {
      const VolumeGrid vol = bake_volume(model, scale, 16, 1.0, /*clamp_negative=*/false);
      const Tensor mag = dft_magnitude(vol.values, 3);
      CHECK(band_energy_outside(mag, model.band_limits[static_cast<size_t>(scale)]) <= 1e-8);
    }
  }

  SUBCASE("round trip through MRC preserves 32-bit values") {
    const VolumeGrid vol = bake_volume(model, 2, 8, 1.5);
    const std::string path = tmp_path("bake.mrc");
    mrc_write(path, vol.values, vol.voxel_size, /*is_volume=*/true);
    const MrcData back = mrc_read(path);
    CHECK(back.is_volume);
    CHECK(back.voxel_size == doctest::Approx(1.5).epsilon(1e-6));
    REQUIRE(back.values.size() == vol.values.size());
    for (int64_t i = 0; i < vol.values.size(); ++i)
      CHECK(back.values[i] == static_cast<double>(static_cast<float>(vol.values[i])));
  }

  SUBCASE("input contract") {
    ModelConfig bad = cfg;
    bad.d_in = 2;
    Rng r2(73);
    RMFNModel flat2d = create_model(bad, r2);
    CHECK_THROWS_WITH_AS(bake_volume(flat2d, 1, 8, 1.0), doctest::Contains("d_in"),
                         std::invalid_argument);
  }
}
