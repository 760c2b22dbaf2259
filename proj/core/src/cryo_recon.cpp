#include "rmfn/cryo_recon.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include "rmfn/filtering.hpp"
#include "rmfn/so3.hpp"
#include "rmfn/spectral.hpp"

namespace rmfn {

namespace {

// Canonical ray sampling points for a G x G detector with D samples along
// z, in unit-cube coordinates. Row layout (py*G + px)*D + d, so a reshape
// to [G*G, D] sums each pixel's ray contiguously.
Tensor make_ray_coords(int64_t grid, int64_t depth) {
  Tensor out({grid * grid * depth, 3});
  double* p = out.data();
  for (int64_t py = 0; py < grid; ++py) {
    const double y = (static_cast<double>(py) + 0.5) / static_cast<double>(grid) - 0.5;
    for (int64_t px = 0; px < grid; ++px) {
      const double x = (static_cast<double>(px) + 0.5) / static_cast<double>(grid) - 0.5;
      for (int64_t d = 0; d < depth; ++d) {
        const double z = (static_cast<double>(d) + 0.5) / static_cast<double>(depth) - 0.5;
        *p++ = x;
        *p++ = y;
        *p++ = z;
      }
    }
  }
  return out;
}

// Rows of `pts` are detector-frame points p^T; the body-frame sample is
// R^T p, i.e. row-vector times R.
Tensor rotate_coords(const Tensor& pts, const Eigen::Matrix3d& r) {
  const int64_t n = pts.dim(0);
  Tensor out({n, 3});
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> src(
      pts.data(), n, 3);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> dst(out.data(), n,
                                                                            3);
  dst.noalias() = src * r;
  return out;
}

// delta-R = I + sin(theta) K + (1 - cos(theta)) K^2 with K = skew(u),
// assembled from tape ops so gradients reach theta and u. K is produced as
// a constant [9, 3] selector times u, reshaped to [3, 3]; no normalization
// happens on the tape (constraints are re-projected after optimizer steps).
ad::Value build_delta_rotation(ad::Tape& tape, ad::Value theta, ad::Value u) {
  static const std::vector<double> skew_sel = {
      0, 0, 0,  0, 0, -1, 0, 1, 0,  // row 0 of K
      0, 0, 1,  0, 0, 0,  -1, 0, 0, // row 1
      0, -1, 0, 1, 0, 0,  0, 0, 0}; // row 2
  ad::Value sel = tape.constant(Tensor({9, 3}, skew_sel));
  ad::Value k = tape.reshape(tape.matmul(sel, tape.reshape(u, {3, 1})), {3, 3});
  ad::Value k2 = tape.matmul(k, k);
  ad::Value sin_t = tape.sin(theta);
  ad::Value omc = tape.sub(tape.constant(Tensor::scalar(1.0)), tape.cos(theta));
  ad::Value eye = tape.constant(
      Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  return tape.add(eye, tape.add(tape.mul(k, sin_t), tape.mul(k2, omc)));
}

struct RenderGeom {
  int64_t grid = 0;
  int64_t depth = 0;
  double dz = 0.0;
  const Tensor* psf_kernel = nullptr;  // null or empty tensor: no PSF
  const Tensor* support = nullptr;     // [G*G*D, 1] cube-support mask
};

// The density lives on the unit cube: samples that a rotated ray takes
// outside it must contribute zero, exactly as the simulator's zero-padded
// trilinear quadrature does. Without this the periodic network leaks
// wrapped copies of itself into the border rays of every tilted view. The
// mask enters the tape as a constant; its pose-derivative is zero almost
// everywhere, so freezing it is the correct (a.e.) gradient.
Tensor cube_support_mask(const Tensor& pts) {
  const int64_t n = pts.dim(0);
  Tensor mask({n, 1});
  const double* p = pts.data();
  for (int64_t i = 0; i < n; ++i) {
    const double x = p[3 * i], y = p[3 * i + 1], z = p[3 * i + 2];
    mask[i] =
        (std::abs(x) <= 0.5 && std::abs(y) <= 0.5 && std::abs(z) <= 0.5) ? 1.0 : 0.0;
  }
  return mask;
}

// Depth integration + PSF on top of a model output column [G*G*D, 1].
ad::Value finish_projection(ad::Tape& tape, ad::Value y, const RenderGeom& geom) {
  if (geom.support != nullptr && geom.support->size() > 0)
    y = tape.mul(y, tape.constant(*geom.support));
  ad::Value rays = tape.reshape(y, {geom.grid * geom.grid, geom.depth});
  ad::Value ones = tape.constant(Tensor::full({geom.depth, 1}, 1.0));
  ad::Value img = tape.scale(tape.matmul(rays, ones), geom.dz);
  img = tape.reshape(img, {geom.grid, geom.grid});
  if (geom.psf_kernel != nullptr && geom.psf_kernel->size() > 0) {
    img = tape.conv2d(img, tape.constant(*geom.psf_kernel), ad::Conv2DMode::kZeroPad);
  }
  return img;
}

// Projection with filters already evaluated numerically (struct steps:
// coordinates are frozen for the whole block).
ad::Value build_projection_from_filters(ad::Tape& tape,
                                        const std::map<std::string, ad::Value>& leaves,
                                        const ModelConfig& cfg, int scale,
                                        const std::vector<ad::Value>& g,
                                        const RenderGeom& geom) {
  ModelProgram prog = build_model_program(tape, leaves, cfg, g, scale);
  return finish_projection(tape, prog.y[static_cast<size_t>(scale - 1)], geom);
}

// Projection from in-tape coordinates (pose steps: gradients flow through
// the filters into the rotation).
ad::Value build_projection_from_coords(ad::Tape& tape,
                                       const std::map<std::string, ad::Value>& leaves,
                                       const ModelConfig& cfg, int scale, ad::Value coords,
                                       const RenderGeom& geom) {
  ModelProgram prog = build_model_program(tape, leaves, cfg, coords, scale);
  return finish_projection(tape, prog.y[static_cast<size_t>(scale - 1)], geom);
}

ad::Value sum_sq_diff(ad::Tape& tape, ad::Value pred, ad::Value target) {
  return tape.sum(tape.square(tape.sub(pred, target)));
}

Tensor image_slice(const Tensor& images, int64_t i) {
  const int64_t g = images.dim(1);
  Tensor out({g, images.dim(2)});
  std::copy(images.data() + i * out.size(), images.data() + (i + 1) * out.size(),
            out.data());
  return out;
}

Eigen::Vector3d random_unit_axis(Rng& rng) {
  for (;;) {
    Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

RenderGeom geom_of(const StageSetup& setup) {
  RenderGeom geom;
  geom.grid = setup.grid;
  geom.depth = setup.depth;
  geom.dz = setup.dz;
  geom.psf_kernel = &setup.psf_kernel;
  return geom;
}

}  // namespace

Eigen::Matrix3d PoseEstimate::effective() const {
  if (theta == 0.0) return base;
  return rodrigues(project_constraints(theta, u)) * base;
}

void PoseEstimate::fold(Rng& rng) {
  base = effective();
  theta = 1e-3;  // off zero so the axis picks up gradient immediately
  u = random_unit_axis(rng);
}

StageSetup make_stage_setup(const ParticleStack& stack, int scale, double band,
                            int64_t grid, int64_t depth) {
  if (stack.count() < 1) throw std::invalid_argument("make_stage_setup: empty stack");
  if (grid < 2 || grid % 2 != 0)
    throw std::invalid_argument("make_stage_setup: grid must be even and >= 2");
  if (grid > stack.side())
    throw std::invalid_argument("make_stage_setup: grid larger than the stack side");
  if (depth < 1) throw std::invalid_argument("make_stage_setup: depth must be positive");
  if (band <= 0.0) throw std::invalid_argument("make_stage_setup: band must be positive");

  StageSetup setup;
  setup.scale = scale;
  setup.band = band;
  setup.grid = grid;
  setup.depth = depth;
  const double extent = stack.pixel_size * static_cast<double>(stack.side());
  setup.dz = extent / static_cast<double>(depth);
  setup.pixel_size = extent / static_cast<double>(grid);
  setup.coords = make_ray_coords(grid, depth);

  if (stack.psf.kind == PSFParams::Kind::kGaussian) {
    setup.psf_kernel = make_gaussian_kernel(stack.psf.sigma / setup.pixel_size);
    if (setup.psf_kernel.dim(0) > grid) {
      throw std::invalid_argument(
          "make_stage_setup: PSF kernel (side " +
          std::to_string(setup.psf_kernel.dim(0)) +
          ") does not fit the stage grid; enlarge the stage grid");
    }
  }

  const int64_t n = stack.count();
  const int64_t side = stack.side();
  setup.images = Tensor({n, grid, grid});
  for (int64_t i = 0; i < n; ++i) {
    Tensor img({side, side});
    std::copy(stack.images.data() + i * side * side,
              stack.images.data() + (i + 1) * side * side, img.data());
    Tensor low = gaussian_lowpass(img, 2, band);
    Tensor small = fourier_resample_2d(low, grid);
    std::copy(small.data(), small.data() + grid * grid,
              setup.images.data() + i * grid * grid);
  }
  return setup;
}

double alternate_batch_step(RMFNModel& model, std::vector<PoseEstimate>& poses,
                            const StageSetup& setup,
                            const std::vector<int64_t>& batch, Adam& net_opt,
                            const ReconConfig& cfg, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("alternate_batch_step: empty batch");
  const auto bsz = static_cast<double>(batch.size());
  const RenderGeom geom = geom_of(setup);
  const int scale = setup.scale;

  // Structure block: poses frozen, their coordinate blocks are plain data.
  std::vector<Tensor> coords(batch.size());
  std::vector<Tensor> masks(batch.size());
  std::vector<Tensor> targets(batch.size());
  for (size_t b = 0; b < batch.size(); ++b) {
    coords[b] = rotate_coords(setup.coords, poses[static_cast<size_t>(batch[b])].effective());
    masks[b] = cube_support_mask(coords[b]);
    targets[b] = image_slice(setup.images, batch[b]);
  }

  double first_loss = 0.0;
  for (int64_t it = 0; it < cfg.struct_iters; ++it) {
    std::map<std::string, Tensor> grad_sum;
    double loss_sum = 0.0;
    for (size_t b = 0; b < batch.size(); ++b) {
      ad::Tape tape;
      auto leaves = bind_params(tape, model.params, /*with_grads=*/true);
      std::vector<Tensor> banks = filters_numeric(model, coords[b]);
      std::vector<ad::Value> g;
      g.reserve(banks.size());
      for (auto& t : banks) g.push_back(tape.constant(std::move(t)));
      RenderGeom masked = geom;
      masked.support = &masks[b];
      ad::Value img = build_projection_from_filters(tape, leaves, model.cfg, scale, g, masked);
      ad::Value loss = sum_sq_diff(tape, img, tape.constant(targets[b]));
      tape.backward(loss);
      loss_sum += tape.value(loss)[0];
      for (const auto& [name, par] : model.params.items()) {
        if (!par.trainable) continue;
        const ad::Value leaf = leaves.at(name);
        if (!tape.has_grad(leaf)) continue;
        Tensor gt = tape.grad(leaf);
        auto found = grad_sum.find(name);
        if (found == grad_sum.end()) {
          grad_sum.emplace(name, std::move(gt));
        } else {
          Tensor& acc = found->second;
          for (int64_t k = 0; k < acc.size(); ++k) acc[k] += gt[k];
        }
      }
    }
    for (auto& [name, gt] : grad_sum)
      for (int64_t k = 0; k < gt.size(); ++k) gt[k] /= bsz;
    if (it == 0) first_loss = loss_sum / bsz;
    net_opt.step(model.params, grad_sum);
  }

  if (!cfg.optimize_poses || cfg.pose_iters <= 0) return first_loss;

  // Pose block: network frozen, each image optimizes its own delta with
  // fresh Adam moments (the delta frame is re-centered at every fold, so
  // stale moments would live in the wrong tangent space).
  std::vector<ad::ParamSet> pose_params(batch.size());
  std::vector<Adam> pose_opts;
  pose_opts.reserve(batch.size());
  AdamConfig pose_adam;
  pose_adam.lr = cfg.lr_pose;
  for (size_t b = 0; b < batch.size(); ++b) {
    const PoseEstimate& pe = poses[static_cast<size_t>(batch[b])];
    pose_params[b].add("pose.theta", Tensor::scalar(pe.theta));
    pose_params[b].add("pose.u", Tensor({3}, {pe.u.x(), pe.u.y(), pe.u.z()}));
    pose_opts.emplace_back(pose_adam);
  }
  for (int64_t it = 0; it < cfg.pose_iters; ++it) {
    for (size_t b = 0; b < batch.size(); ++b) {
      PoseEstimate& pe = poses[static_cast<size_t>(batch[b])];
      ad::Tape tape;
      auto leaves = bind_params(tape, model.params, /*with_grads=*/false);
      ad::Value th = tape.input(pose_params[b].at("pose.theta").value, true);
      ad::Value ax = tape.input(pose_params[b].at("pose.u").value, true);
      ad::Value dr = build_delta_rotation(tape, th, ax);
      ad::Value rot = tape.matmul(dr, tape.constant(Tensor(
          {3, 3}, {pe.base(0, 0), pe.base(0, 1), pe.base(0, 2), pe.base(1, 0),
                   pe.base(1, 1), pe.base(1, 2), pe.base(2, 0), pe.base(2, 1),
                   pe.base(2, 2)})));
      ad::Value pts = tape.matmul(tape.constant(setup.coords), rot);
      ad::Value img = build_projection_from_coords(tape, leaves, model.cfg, scale, pts, geom);
      ad::Value loss = sum_sq_diff(tape, img, tape.constant(targets[b]));
      tape.backward(loss);
      std::map<std::string, Tensor> grads;
      grads["pose.theta"] = tape.grad(th);
      grads["pose.u"] = tape.grad(ax);
      pose_opts[b].step(pose_params[b], grads);
      const Tensor& tv = pose_params[b].at("pose.theta").value;
      const Tensor& uv = pose_params[b].at("pose.u").value;
      const AxisAngle aa =
          project_constraints(tv[0], Eigen::Vector3d(uv[0], uv[1], uv[2]));
      pose_params[b].at("pose.theta").value = Tensor::scalar(aa.theta);
      pose_params[b].at("pose.u").value = Tensor({3}, {aa.u.x(), aa.u.y(), aa.u.z()});
      pe.theta = aa.theta;
      pe.u = aa.u;
    }
  }
  for (int64_t i : batch) poses[static_cast<size_t>(i)].fold(rng);
  return first_loss;
}

ReconResult frequency_marching_reconstruct(
    const ParticleStack& stack, const ReconConfig& cfg,
    const std::vector<Eigen::Matrix3d>& init_poses,
    const std::vector<Eigen::Matrix3d>* gt_poses) {
  const int64_t n = stack.count();
  if (n < 1) throw std::invalid_argument("reconstruct: empty stack");
  if (static_cast<int64_t>(init_poses.size()) != n)
    throw std::invalid_argument("reconstruct: init_poses size mismatch");
  if (gt_poses != nullptr && static_cast<int64_t>(gt_poses->size()) != n)
    throw std::invalid_argument("reconstruct: gt_poses size mismatch");
  const int layers = cfg.model.layers;
  if (static_cast<int>(cfg.epochs.size()) != layers)
    throw std::invalid_argument("reconstruct: epochs must list one entry per stage");
  if (!cfg.stage_grid.empty() && static_cast<int>(cfg.stage_grid.size()) != layers)
    throw std::invalid_argument("reconstruct: stage_grid must list one entry per stage");
  if (!cfg.stage_depth.empty() && static_cast<int>(cfg.stage_depth.size()) != layers)
    throw std::invalid_argument("reconstruct: stage_depth must list one entry per stage");
  if (cfg.batch_size < 1) throw std::invalid_argument("reconstruct: batch_size >= 1");
  if (cfg.struct_iters < 1) throw std::invalid_argument("reconstruct: struct_iters >= 1");

  ModelConfig mcfg = cfg.model;
  mcfg.d_in = 3;
  mcfg.d_out = 1;
  Rng rng(cfg.seed);
  ReconResult res;
  res.model = create_model(mcfg, rng);

  AdamConfig net_adam;
  net_adam.lr = cfg.lr_net;
  Adam net_opt(net_adam);

  // Live pose deltas start like a fold reset; with frozen poses the delta
  // stays identically zero so renders use the given rotations exactly.
  const bool live_poses = cfg.optimize_poses && cfg.pose_iters > 0;
  res.poses.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    PoseEstimate& pe = res.poses[static_cast<size_t>(i)];
    pe.base = init_poses[static_cast<size_t>(i)];
    if (live_poses) {
      pe.theta = 1e-3;
      pe.u = random_unit_axis(rng);
    }
  }

  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  int64_t global_epoch = 0;
  for (int stage = 1; stage <= layers; ++stage) {
    const double band = res.model.band_limits[static_cast<size_t>(stage)];
    int64_t grid = cfg.stage_grid.empty() ? 0 : cfg.stage_grid[static_cast<size_t>(stage - 1)];
    if (grid <= 0) grid = stack.side();
    int64_t depth = cfg.stage_depth.empty() ? 0 : cfg.stage_depth[static_cast<size_t>(stage - 1)];
    if (depth <= 0) depth = grid;
    const StageSetup setup = make_stage_setup(stack, stage, band, grid, depth);

    for (int64_t e = 0; e < cfg.epochs[static_cast<size_t>(stage - 1)]; ++e) {
      for (int64_t i = n - 1; i > 0; --i) {
        const int64_t j = rng.uniform_int(0, i);
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
      }
      double loss_acc = 0.0;
      int64_t batches = 0;
      for (int64_t start = 0; start < n; start += cfg.batch_size) {
        const int64_t stop = std::min(n, start + cfg.batch_size);
        std::vector<int64_t> batch(order.begin() + start, order.begin() + stop);
        loss_acc += alternate_batch_step(res.model, res.poses, setup, batch, net_opt,
                                         cfg, rng);
        ++batches;
      }
      ReconEpochStats st;
      st.stage = stage;
      st.epoch = global_epoch++;
      st.mean_loss = loss_acc / static_cast<double>(batches);
      if (gt_poses != nullptr) {
        std::vector<Eigen::Matrix3d> est(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) est[static_cast<size_t>(i)] = res.poses[static_cast<size_t>(i)].effective();
        const PoseErrorStats ps = pose_error_stats(est, *gt_poses);
        st.median_pose_err_deg = ps.median_deg;
        st.frac_within_5deg = ps.frac_within_5deg;
      }
      res.history.push_back(st);
    }
  }
  return res;
}

Tensor render_model_projection(const RMFNModel& model, int scale,
                               const Eigen::Matrix3d& pose, int64_t grid,
                               int64_t depth, double extent, const PSFParams& psf) {
  if (grid < 1 || depth < 1)
    throw std::invalid_argument("render_model_projection: grid and depth >= 1");
  if (scale < 1 || scale > model.cfg.layers)
    throw std::invalid_argument("render_model_projection: scale out of range");
  RenderGeom geom;
  geom.grid = grid;
  geom.depth = depth;
  geom.dz = extent / static_cast<double>(depth);
  Tensor kernel;
  if (psf.kind == PSFParams::Kind::kGaussian) {
    kernel = make_gaussian_kernel(psf.sigma / (extent / static_cast<double>(grid)));
    geom.psf_kernel = &kernel;
  }
  const Tensor coords = rotate_coords(make_ray_coords(grid, depth), pose);
  ad::Tape tape;
  auto leaves = bind_params(tape, model.params, /*with_grads=*/false);
  std::vector<Tensor> banks = filters_numeric(model, coords);
  std::vector<ad::Value> g;
  g.reserve(banks.size());
  for (auto& t : banks) g.push_back(tape.constant(std::move(t)));
  ad::Value img = build_projection_from_filters(tape, leaves, model.cfg, scale, g, geom);
  return tape.value(img);
}

ad::Program make_render_loss_program(const ModelConfig& cfg, int scale,
                                     const Eigen::Matrix3d& base,
                                     const StageSetup& setup, int64_t image_index) {
  if (image_index < 0 || image_index >= setup.images.dim(0))
    throw std::invalid_argument("make_render_loss_program: image index out of range");
  const Tensor target = image_slice(setup.images, image_index);
  const Tensor coords = setup.coords;
  const Tensor kernel = setup.psf_kernel;
  const int64_t grid = setup.grid;
  const int64_t depth = setup.depth;
  const double dz = setup.dz;
  const Tensor base_t({3, 3}, {base(0, 0), base(0, 1), base(0, 2), base(1, 0),
                               base(1, 1), base(1, 2), base(2, 0), base(2, 1),
                               base(2, 2)});
  return [=](ad::Tape& tape, const std::map<std::string, ad::Value>& leaves) {
    ad::Value dr = build_delta_rotation(tape, leaves.at("pose.theta"), leaves.at("pose.u"));
    ad::Value rot = tape.matmul(dr, tape.constant(base_t));
    ad::Value pts = tape.matmul(tape.constant(coords), rot);
    RenderGeom geom;
    geom.grid = grid;
    geom.depth = depth;
    geom.dz = dz;
    geom.psf_kernel = &kernel;
    ad::Value img = build_projection_from_coords(tape, leaves, cfg, scale, pts, geom);
    return sum_sq_diff(tape, img, tape.constant(target));
  };
}

FscCurve fsc_curve(const VolumeGrid& a, const VolumeGrid& b) {
  validate_volume(a);
  validate_volume(b);
  const int64_t n = a.n();
  if (b.n() != n) throw std::invalid_argument("fsc_curve: volume sizes differ");
  if (std::abs(a.voxel_size - b.voxel_size) > 1e-12)
    throw std::invalid_argument("fsc_curve: voxel sizes differ");

  const std::vector<int64_t> dims = {n, n, n};
  const auto fa = dft_complex(a.values.data(), dims, -1);
  const auto fb = dft_complex(b.values.data(), dims, -1);

  const int64_t rmax = n / 2;
  std::vector<double> num(static_cast<size_t>(rmax + 1), 0.0);
  std::vector<double> da(static_cast<size_t>(rmax + 1), 0.0);
  std::vector<double> db(static_cast<size_t>(rmax + 1), 0.0);
  size_t idx = 0;
  for (int64_t kz = 0; kz < n; ++kz) {
    const double fz = static_cast<double>(kz <= n / 2 ? kz : kz - n);
    for (int64_t ky = 0; ky < n; ++ky) {
      const double fy = static_cast<double>(ky <= n / 2 ? ky : ky - n);
      for (int64_t kx = 0; kx < n; ++kx, ++idx) {
        const double fx = static_cast<double>(kx <= n / 2 ? kx : kx - n);
        const auto r = static_cast<int64_t>(
            std::llround(std::sqrt(fx * fx + fy * fy + fz * fz)));
        if (r > rmax) continue;
        const std::complex<double> va = fa[idx];
        const std::complex<double> vb = fb[idx];
        num[static_cast<size_t>(r)] += va.real() * vb.real() + va.imag() * vb.imag();
        da[static_cast<size_t>(r)] += std::norm(va);
        db[static_cast<size_t>(r)] += std::norm(vb);
      }
    }
  }

  FscCurve curve;
  curve.n = n;
  curve.voxel_size = a.voxel_size;
  curve.corr.resize(static_cast<size_t>(rmax + 1), 0.0);
  for (int64_t r = 0; r <= rmax; ++r) {
    const double den = std::sqrt(da[static_cast<size_t>(r)] * db[static_cast<size_t>(r)]);
    curve.corr[static_cast<size_t>(r)] = den > 0.0 ? num[static_cast<size_t>(r)] / den : 0.0;
  }
  return curve;
}

double FscCurve::resolution_at(double threshold) const {
  const auto rmax = static_cast<int64_t>(corr.size()) - 1;
  if (rmax < 1) throw std::logic_error("FscCurve: empty curve");
  double rstar = static_cast<double>(rmax);
  for (int64_t r = 1; r <= rmax; ++r) {
    const double c = corr[static_cast<size_t>(r)];
    if (c < threshold) {
      const double prev = corr[static_cast<size_t>(r - 1)];
      const double span = prev - c;
      rstar = span > 0.0 ? static_cast<double>(r - 1) + (prev - threshold) / span
                         : static_cast<double>(r);
      break;
    }
  }
  return voxel_size * static_cast<double>(n) / rstar;
}

double FscCurve::auc() const {
  if (corr.size() < 2) return 0.0;
  double acc = 0.0;
  for (size_t r = 1; r < corr.size(); ++r) acc += corr[r];
  return acc / static_cast<double>(corr.size() - 1);
}

PoseErrorStats pose_error_stats(const std::vector<Eigen::Matrix3d>& est,
                                const std::vector<Eigen::Matrix3d>& gt) {
  if (est.size() != gt.size() || est.empty())
    throw std::invalid_argument("pose_error_stats: size mismatch or empty input");
  PoseErrorStats st;
  st.errors_deg.reserve(est.size());
  st.histogram.assign(45, 0);
  int64_t within = 0;
  for (size_t i = 0; i < est.size(); ++i) {
    const double deg = geodesic_distance(est[i], gt[i]) * (180.0 / M_PI);
    st.errors_deg.push_back(deg);
    const auto bin = std::min<int64_t>(44, static_cast<int64_t>(deg / 4.0));
    ++st.histogram[static_cast<size_t>(bin)];
    if (deg <= 5.0) ++within;
  }
  std::vector<double> sorted = st.errors_deg;
  std::sort(sorted.begin(), sorted.end());
  const size_t m = sorted.size();
  st.median_deg = (m % 2 == 1) ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  st.frac_within_5deg = static_cast<double>(within) / static_cast<double>(m);
  return st;
}

VolumeGrid bake_volume(const RMFNModel& model, int scale, int64_t n,
                       double voxel_size, bool clamp_negative) {
  if (model.cfg.d_in != 3 || model.cfg.d_out != 1)
    throw std::invalid_argument("bake_volume: needs a d_in=3, d_out=1 model");
  const Tensor vals = eval_on_grid(model, scale, {n, n, n});  // [x][y][z][1]
  VolumeGrid vol;
  vol.voxel_size = voxel_size;
  vol.values = Tensor({n, n, n});
  for (int64_t iz = 0; iz < n; ++iz)
    for (int64_t iy = 0; iy < n; ++iy)
      for (int64_t ix = 0; ix < n; ++ix) {
        double v = vals[(ix * n + iy) * n + iz];
        if (clamp_negative && v < 0.0) v = 0.0;
        vol.values[(iz * n + iy) * n + ix] = v;
      }
  return vol;
}

}  // namespace rmfn
