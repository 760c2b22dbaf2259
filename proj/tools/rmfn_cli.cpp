// Command-line front end: every pipeline is reachable from a JSON config
// plus dotted-path overrides, and every run leaves a resolved config and
// seed in its output directory so artifacts are reproducible byte for byte.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rmfn/cryo_recon.hpp"
#include "rmfn/cryo_sim.hpp"
#include "rmfn/image_fit.hpp"
#include "rmfn/image_io.hpp"
#include "rmfn/model.hpp"
#include "rmfn/mrc.hpp"
#include "rmfn/so3.hpp"
#include "rmfn/spectral.hpp"
#include "rmfn/training.hpp"

namespace {

using nlohmann::json;

constexpr const char* kToolVersion = "0.1.0";

// A validation problem in user input; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config file: " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw UsageError("config parse error in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config root must be a JSON object");
  return j;
}

// "a.b.c=value"; value parsed as JSON when possible, else kept as a string.
void apply_override(json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw UsageError("override must look like path.to.key=value: " + kv);
  const std::string path = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (...) {
    value = raw;
  }
  json* node = &cfg;
  size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos
                                                   ? std::string::npos
                                                   : dot - start);
    if (key.empty()) throw UsageError("empty key in override path: " + kv);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object()) *node = json::object();
    start = dot + 1;
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    throw UsageError("config field '" + key + "' has the wrong type");
  }
}

rmfn::ModelConfig model_from_json(const json& cfg, int d_in_default) {
  const json m = cfg.value("model", json::object());
  rmfn::ModelConfig mc;
  mc.d_in = get_or(m, "d_in", d_in_default);
  mc.d_h = get_or(m, "d_h", 16);
  mc.d_out = get_or(m, "d_out", 1);
  mc.layers = get_or(m, "layers", 3);
  mc.b_max = get_or(m, "b_max", 16.0);
  mc.lambda1 = get_or(m, "lambda1", rmfn::kDefaultLambda1);
  mc.lambda2 = get_or(m, "lambda2", rmfn::kDefaultLambda2);
  mc.bias_free = get_or(m, "bias_free", false);
  mc.residual = get_or(m, "residual", true);
  const std::string init = get_or<std::string>(m, "init", "shifted");
  if (init == "shifted") {
    mc.init = rmfn::ModelConfig::Init::kShifted;
  } else if (init == "uniform") {
    mc.init = rmfn::ModelConfig::Init::kUniform;
  } else {
    throw UsageError("model.init must be 'shifted' or 'uniform'");
  }
  return mc;
}

json model_to_json(const rmfn::ModelConfig& mc) {
  return json{{"d_in", mc.d_in},
              {"d_h", mc.d_h},
              {"d_out", mc.d_out},
              {"layers", mc.layers},
              {"b_max", mc.b_max},
              {"lambda1", mc.lambda1},
              {"lambda2", mc.lambda2},
              {"bias_free", mc.bias_free},
              {"residual", mc.residual},
              {"init", mc.init == rmfn::ModelConfig::Init::kShifted ? "shifted"
                                                                    : "uniform"}};
}

std::vector<int64_t> int_list(const json& j, const std::string& key,
                              std::vector<int64_t> fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<std::vector<int64_t>>();
  } catch (const std::exception&) {
    throw UsageError("config field '" + key + "' must be an integer array");
  }
}

std::vector<int64_t> parse_csv_ints(const std::string& s) {
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoll(item));
  }
  return out;
}

// The resolved config captures everything that determines the artifacts.
// The output directory itself is deliberately excluded: the same run into
// two directories must produce byte-identical files.
void write_resolved_config(const std::string& out_dir, json cfg, uint64_t seed,
                           int threads) {
  cfg.erase("out");
  cfg["seed"] = seed;
  cfg["threads"] = threads;
  cfg["tool_version"] = kToolVersion;
  std::ofstream f(out_dir + "/resolved_config.json");
  f << cfg.dump(2) << "\n";
}

std::string require_out(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required for this command");
  std::filesystem::create_directories(out);
  return out;
}

rmfn::VolumeGrid volume_from_mrc(const std::string& path) {
  rmfn::MrcData m = rmfn::mrc_read(path);
  if (m.values.rank() != 3 || m.values.dim(0) != m.values.dim(1) ||
      m.values.dim(1) != m.values.dim(2))
    throw UsageError("volume must be cubic: " + path);
  rmfn::VolumeGrid vol;
  vol.values = m.values;
  vol.voxel_size = m.voxel_size;
  return vol;
}

rmfn::Tensor load_image_any(const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".png") return rmfn::load_png(path);
  if (ext == ".json") return rmfn::load_tensor_json(path);
  throw UsageError("unsupported image format (want .png or .json): " + path);
}

// fit-image ---------------------------------------------------------------

int cmd_fit_image(const json& cfg, const std::string& out, uint64_t seed,
                  int threads) {
  rmfn::ImageExperimentConfig ec;
  ec.model = model_from_json(cfg, 2);
  ec.fit_resolution = get_or(cfg, "fit_resolution", 128);
  ec.eval_resolution = get_or(cfg, "eval_resolution", 2 * ec.fit_resolution);
  ec.budgets = int_list(cfg, "budgets", {500, 1000, 4000});
  const std::string mode = get_or<std::string>(cfg, "mode", "staged");
  if (mode == "staged") {
    ec.mode = rmfn::TrainMode::kStagedCurrent;
  } else if (mode == "fair") {
    ec.mode = rmfn::TrainMode::kFairStaged;
  } else if (mode == "joint") {
    ec.mode = rmfn::TrainMode::kJoint;
  } else {
    throw UsageError("mode must be one of staged|fair|joint");
  }
  ec.lowpass_targets = get_or(cfg, "lowpass_targets", true);
  ec.freeze_below_stage = get_or(cfg, "freeze_below_stage", false);
  ec.seed = seed;
  ec.out_dir = out;

  rmfn::ImageExperimentReport rep;
  const std::string image = get_or<std::string>(cfg, "image", "");
  if (image.empty()) {
    const int synth_n = get_or(cfg, "synthetic_resolution", ec.eval_resolution);
    const int channels = get_or(cfg, "synthetic_channels", 1);
    rmfn::Rng rng(seed + 0x5eed);
    rep = run_image_experiment(ec, rmfn::synth_natural_image(synth_n, channels, rng));
  } else {
    ec.image_path = image;
    rep = run_image_experiment(ec);
  }

  json resolved = cfg;
  resolved["model"] = model_to_json(ec.model);
  resolved["fit_resolution"] = ec.fit_resolution;
  resolved["eval_resolution"] = ec.eval_resolution;
  write_resolved_config(out, resolved, seed, threads);
  std::cout << "psnr_fit " << rep.psnr_fit << "\npsnr_eval " << rep.psnr_eval << "\n";
  for (size_t s = 0; s < rep.drift.size(); ++s)
    std::cout << "drift_scale" << (s + 1) << " " << rep.drift[s] << "\n";
  return 0;
}

// spectrum ----------------------------------------------------------------

int cmd_spectrum(const json& cfg, const std::string& out, uint64_t seed,
                 int threads) {
  rmfn::ModelConfig mc = model_from_json(cfg, 2);
  rmfn::Rng rng(seed);
  rmfn::RMFNModel model = rmfn::create_model(mc, rng);

  json bands = json::array();
  for (double b : model.band_limits) bands.push_back(b);
  json summary{{"band_limits", bands}};

  if (mc.bias_free) {
    for (int layer = 0; layer <= std::min(mc.layers, 3); ++layer) {
      json terms = json::array();
      for (int unit = 0; unit < mc.d_h; ++unit) {
        for (const auto& t : rmfn::enumerate_spectrum(model, layer, unit)) {
          terms.push_back(json{{"unit", unit},
                               {"amplitude", t.amplitude},
                               {"freq", t.freq},
                               {"phase", t.phase}});
        }
      }
      std::ofstream f(out + "/terms_layer" + std::to_string(layer) + ".json");
      f << terms.dump(2) << "\n";
    }
  }

  const auto grid = static_cast<int64_t>(get_or(cfg, "grid", 0));
  int64_t n = grid > 0 ? grid : 2 * (static_cast<int64_t>(std::ceil(2.0 * mc.b_max)) + 2);
  if (n % 2 != 0) ++n;
  for (int s = 1; s <= mc.layers; ++s) {
    std::vector<int64_t> dims(static_cast<size_t>(mc.d_in), n);
    rmfn::Tensor grid_vals = rmfn::eval_on_grid(model, s, dims);
    rmfn::Tensor mag = rmfn::dft_magnitude(grid_vals, mc.d_in);
    rmfn::save_tensor_json(out + "/spectrum_scale" + std::to_string(s) + ".json", mag);
    if (mc.d_in == 2)
      rmfn::save_spectrum_png(out + "/spectrum_scale" + std::to_string(s) + ".png", mag);
    summary["band_energy_outside_scale" + std::to_string(s)] =
        rmfn::band_energy_outside(mag, model.band_limits[static_cast<size_t>(s)]);
  }
  std::ofstream f(out + "/spectrum_summary.json");
  f << summary.dump(2) << "\n";

  json resolved = cfg;
  resolved["model"] = model_to_json(mc);
  resolved["grid"] = n;
  write_resolved_config(out, resolved, seed, threads);
  std::cout << "wrote spectra for " << mc.layers << " scales, grid " << n << "\n";
  return 0;
}

// simulate ----------------------------------------------------------------

int cmd_simulate(const json& cfg, const std::string& out, uint64_t seed,
                 int threads) {
  rmfn::VolumeGrid vol;
  const std::string vol_path = get_or<std::string>(cfg, "vol", "");
  if (!vol_path.empty()) {
    vol = volume_from_mrc(vol_path);
  } else {
    const std::string phantom = get_or<std::string>(cfg, "phantom", "blob");
    const auto nv = static_cast<int64_t>(get_or(cfg, "phantom_n", 32));
    const double voxel = get_or(cfg, "voxel_size", 1.0);
    if (phantom == "blob") {
      vol = rmfn::make_blob_phantom(nv, voxel);
    } else if (phantom == "sphere") {
      vol = rmfn::make_sphere_phantom(nv, voxel);
    } else {
      throw UsageError("phantom must be 'blob' or 'sphere'");
    }
  }
  const auto n = static_cast<int64_t>(get_or(cfg, "n", 100));
  const double snr = get_or(cfg, "snr", 0.1);
  rmfn::PSFParams psf;
  const double sigma = get_or(cfg, "psf_sigma", 0.0);
  if (sigma > 0.0) {
    psf.kind = rmfn::PSFParams::Kind::kGaussian;
    psf.sigma = sigma;
  }
  rmfn::ParticleStack stack = rmfn::generate_dataset(vol, n, psf, snr, seed);
  rmfn::save_stack(stack, out + "/stack.mrc");
  rmfn::mrc_write(out + "/volume_gt.mrc", vol.values, vol.voxel_size, true);

  write_resolved_config(out, cfg, seed, threads);
  std::cout << "stack " << n << " x " << stack.side() << "^2, noise sigma "
            << stack.noise_sigma << "\n";
  return 0;
}

// reconstruct ---------------------------------------------------------------

json fsc_to_json(const rmfn::FscCurve& curve) {
  json shells = json::array();
  for (size_t r = 0; r < curve.corr.size(); ++r)
    shells.push_back(json{{"shell", r}, {"corr", curve.corr[r]}});
  return json{{"n", curve.n},
              {"voxel_size", curve.voxel_size},
              {"shells", shells},
              {"auc", curve.auc()},
              {"resolution_at_0.5", curve.resolution_at(0.5)},
              {"resolution_at_0.143", curve.resolution_at(0.143)}};
}

int cmd_reconstruct(const json& cfg, const std::string& out, uint64_t seed,
                    int threads) {
  const std::string stack_path = get_or<std::string>(cfg, "stack", "");
  if (stack_path.empty()) throw UsageError("reconstruct needs a stack path");
  rmfn::ParticleStack stack = rmfn::load_stack(stack_path);

  rmfn::ReconConfig rc;
  rc.model = model_from_json(cfg, 3);
  if (cfg.contains("stages")) rc.model.layers = get_or(cfg, "stages", rc.model.layers);
  rc.epochs = int_list(cfg, "epochs", std::vector<int64_t>(
                                          static_cast<size_t>(rc.model.layers), 5));
  rc.batch_size = get_or(cfg, "batch_size", int64_t{50});
  rc.struct_iters = get_or(cfg, "struct_iters", int64_t{5});
  rc.pose_iters = get_or(cfg, "pose_iters", int64_t{20});
  rc.lr_net = get_or(cfg, "lr_net", 1e-3);
  rc.lr_pose = get_or(cfg, "lr_pose", 1e-2);
  rc.optimize_poses = get_or(cfg, "optimize_poses", true);
  rc.stage_grid = int_list(cfg, "stage_grid", {});
  rc.stage_depth = int_list(cfg, "stage_depth", {});
  rc.seed = seed;

  const std::string pose_init = get_or<std::string>(cfg, "pose_init", "perturb");
  std::vector<Eigen::Matrix3d> init(static_cast<size_t>(stack.count()),
                                    Eigen::Matrix3d::Identity());
  const bool have_gt = !stack.poses.empty();
  if (pose_init == "gt") {
    if (!have_gt) throw UsageError("pose_init=gt but the stack has no poses");
    init = stack.poses;
  } else if (pose_init == "perturb") {
    if (!have_gt) throw UsageError("pose_init=perturb but the stack has no poses");
    const double lo = get_or(cfg, "perturb_min_deg", 45.0);
    const double hi = get_or(cfg, "perturb_max_deg", 90.0);
    rmfn::Rng prng = rmfn::Rng(seed).fork(7, 7);
    for (size_t i = 0; i < init.size(); ++i)
      init[i] = rmfn::perturb_pose(stack.poses[i], lo, hi, prng);
  } else if (pose_init != "identity") {
    throw UsageError("pose_init must be gt|perturb|identity");
  }

  rmfn::ReconResult res = rmfn::frequency_marching_reconstruct(
      stack, rc, init, have_gt ? &stack.poses : nullptr);

  {
    std::ofstream hist(out + "/history.jsonl");
    for (const auto& h : res.history) {
      json line{{"stage", h.stage}, {"epoch", h.epoch}, {"mean_loss", h.mean_loss}};
      if (h.median_pose_err_deg >= 0.0) {
        line["median_pose_err_deg"] = h.median_pose_err_deg;
        line["frac_within_5deg"] = h.frac_within_5deg;
      }
      hist << line.dump() << "\n";
    }
  }

  const auto bake_n = static_cast<int64_t>(get_or(cfg, "bake_n", stack.side()));
  for (int s = 1; s <= rc.model.layers; ++s) {
    rmfn::VolumeGrid vol = rmfn::bake_volume(res.model, s, bake_n, stack.pixel_size);
    rmfn::mrc_write(out + "/volume_scale" + std::to_string(s) + ".mrc", vol.values,
                    vol.voxel_size, true);
  }
  rmfn::save_checkpoint(res.model, out + "/model.json");

  {
    json poses = json::array();
    for (size_t i = 0; i < res.poses.size(); ++i) {
      const Eigen::Vector4d q = rmfn::matrix_to_quat(res.poses[i].effective());
      json entry{{"quat", {q[0], q[1], q[2], q[3]}}};
      if (have_gt)
        entry["err_deg"] = rmfn::geodesic_distance(res.poses[i].effective(),
                                                   stack.poses[i]) *
                           (180.0 / M_PI);
      poses.push_back(entry);
    }
    std::ofstream f(out + "/poses_est.json");
    f << poses.dump(2) << "\n";
  }

  if (have_gt) {
    std::vector<Eigen::Matrix3d> est(res.poses.size());
    for (size_t i = 0; i < res.poses.size(); ++i) est[i] = res.poses[i].effective();
    const rmfn::PoseErrorStats ps = rmfn::pose_error_stats(est, stack.poses);
    json hist = json::array();
    for (int64_t c : ps.histogram) hist.push_back(c);
    std::ofstream f(out + "/pose_errors.json");
    f << json{{"histogram_deg4", hist},
              {"median_deg", ps.median_deg},
              {"frac_within_5deg", ps.frac_within_5deg}}
             .dump(2)
      << "\n";
  }

  const std::string gt_vol_path = get_or<std::string>(cfg, "gt_vol", "");
  if (!gt_vol_path.empty()) {
    const rmfn::VolumeGrid gt = volume_from_mrc(gt_vol_path);
    for (int s = 1; s <= rc.model.layers; ++s) {
      rmfn::VolumeGrid vol = rmfn::bake_volume(res.model, s, gt.n(), gt.voxel_size);
      std::ofstream f(out + "/fsc_scale" + std::to_string(s) + ".json");
      f << fsc_to_json(rmfn::fsc_curve(vol, gt)).dump(2) << "\n";
    }
  }

  json resolved = cfg;
  resolved["model"] = model_to_json(rc.model);
  write_resolved_config(out, resolved, seed, threads);
  if (!res.history.empty())
    std::cout << "final mean loss " << res.history.back().mean_loss << "\n";
  return 0;
}

// fsc / psnr ----------------------------------------------------------------

int cmd_fsc(const std::string& a_path, const std::string& b_path,
            const std::string& out, const json& cfg, uint64_t seed, int threads) {
  const rmfn::VolumeGrid a = volume_from_mrc(a_path);
  const rmfn::VolumeGrid b = volume_from_mrc(b_path);
  const rmfn::FscCurve curve = rmfn::fsc_curve(a, b);
  for (size_t r = 0; r < curve.corr.size(); ++r)
    std::cout << "shell " << r << " corr " << curve.corr[r] << "\n";
  std::cout << "resolution_at_0.5 " << curve.resolution_at(0.5) << "\n";
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream f(out + "/fsc.json");
    f << fsc_to_json(curve).dump(2) << "\n";
    std::ofstream csv(out + "/fsc.csv");
    csv << "shell,corr\n";
    for (size_t r = 0; r < curve.corr.size(); ++r)
      csv << r << "," << curve.corr[r] << "\n";
    json resolved = cfg;
    resolved["a"] = a_path;
    resolved["b"] = b_path;
    write_resolved_config(out, resolved, seed, threads);
  }
  return 0;
}

int cmd_psnr(const std::string& a_path, const std::string& b_path,
             const std::string& out, const json& cfg, uint64_t seed, int threads) {
  const rmfn::Tensor a = load_image_any(a_path);
  const rmfn::Tensor b = load_image_any(b_path);
  const double value = rmfn::psnr(a, b, get_or(cfg, "peak", 1.0));
  std::cout << "psnr " << value << "\n";
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream f(out + "/psnr.json");
    f << json{{"psnr", value}}.dump(2) << "\n";
    json resolved = cfg;
    resolved["a"] = a_path;
    resolved["b"] = b_path;
    write_resolved_config(out, resolved, seed, threads);
  }
  return 0;
}

// gradcheck -----------------------------------------------------------------

int cmd_gradcheck(const json& cfg, const std::string& out, uint64_t seed,
                  int threads) {
  const double tol = get_or(cfg, "rel_tol", 1e-4);
  json report = json::array();
  bool all_pass = true;

  {  // multi-scale MSE loss on a 2D model
    rmfn::ModelConfig mc = model_from_json(cfg, 2);
    mc.d_h = std::min(mc.d_h, 8);
    rmfn::Rng rng(seed);
    rmfn::RMFNModel model = rmfn::create_model(mc, rng);
    const auto pts = static_cast<int64_t>(get_or(cfg, "points", 40));
    rmfn::Tensor x({pts, mc.d_in});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-0.5, 0.5);
    rmfn::Tensor target({pts, mc.d_out});
    for (int64_t i = 0; i < target.size(); ++i) target[i] = rng.uniform(0.0, 1.0);
    auto program = [&](rmfn::ad::Tape& tape,
                       const std::map<std::string, rmfn::ad::Value>& leaves) {
      auto prog = rmfn::build_model_program(tape, leaves, mc, tape.constant(x));
      rmfn::ad::Value loss;
      for (size_t s = 0; s < prog.y.size(); ++s) {
        rmfn::ad::Value term =
            tape.mean(tape.square(tape.sub(prog.y[s], tape.constant(target))));
        loss = s == 0 ? term : tape.add(loss, term);
      }
      return loss;
    };
    const auto rep = rmfn::ad::grad_check(program, model.params, tol);
    report.push_back(json{{"name", "multiscale_mse"},
                          {"pass", rep.pass},
                          {"max_rel_err", rep.max_rel_err},
                          {"worst_key", rep.worst_key}});
    all_pass = all_pass && rep.pass;
  }

  {  // render loss w.r.t. network parameters and the pose delta
    rmfn::ModelConfig mc = model_from_json(cfg, 3);
    mc.d_in = 3;
    mc.d_out = 1;
    mc.d_h = std::min(mc.d_h, 6);
    mc.layers = std::min(mc.layers, 2);
    mc.b_max = std::min(mc.b_max, 6.0);
    rmfn::Rng rng(seed + 1);
    rmfn::RMFNModel model = rmfn::create_model(mc, rng);

    rmfn::VolumeGrid vol = rmfn::make_sphere_phantom(16, 1.0);
    rmfn::ParticleStack stack =
        rmfn::generate_dataset(vol, 1, rmfn::PSFParams{}, 1e9, seed + 2);
    const rmfn::StageSetup setup = rmfn::make_stage_setup(
        stack, mc.layers, model.band_limits.back(), 8, 6);
    rmfn::ad::ParamSet params = model.params;
    params.add("pose.theta", rmfn::Tensor::scalar(0.3));
    params.add("pose.u", rmfn::Tensor({3}, {0.48, -0.6, 0.64}));
    const auto program = rmfn::make_render_loss_program(
        mc, mc.layers, stack.poses[0], setup, 0);
    const auto rep = rmfn::ad::grad_check(program, params, tol);
    report.push_back(json{{"name", "render_loss"},
                          {"pass", rep.pass},
                          {"max_rel_err", rep.max_rel_err},
                          {"worst_key", rep.worst_key}});
    all_pass = all_pass && rep.pass;
  }

  std::ofstream f(out + "/gradcheck.json");
  f << json{{"rel_tol", tol}, {"all_pass", all_pass}, {"checks", report}}.dump(2)
    << "\n";
  write_resolved_config(out, cfg, seed, threads);
  for (const auto& r : report)
    std::cout << r["name"].get<std::string>() << " "
              << (r["pass"].get<bool>() ? "pass" : "FAIL") << " max_rel_err "
              << r["max_rel_err"].get<double>() << "\n";
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"band-limited coordinate networks: fitting, simulation, reconstruction"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may appear after the subcommand name

  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  uint64_t seed = 1;
  int threads = 1;
  app.add_option("--config", config_path, "JSON config file")->capture_default_str();
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--set", overrides, "dotted-path config overrides key=value");
  app.add_option("--seed", seed, "RNG seed")->capture_default_str();
  app.add_option("--threads", threads, "worker threads (recorded; evaluation is single-threaded)")
      ->capture_default_str();

  auto* fit = app.add_subcommand("fit-image", "staged 2D image fit with drift metrics");
  std::string image_path;
  fit->add_option("--image", image_path, "input PNG (omit for a synthetic image)");

  auto* spectrum = app.add_subcommand("spectrum", "spectrum enumeration and DFT dumps");

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic particle stack");
  std::string vol_path;
  int64_t sim_n = -1;
  double sim_snr = -1.0;
  simulate->add_option("--vol", vol_path, "input volume MRC (omit for a phantom)");
  simulate->add_option("--n", sim_n, "number of images");
  simulate->add_option("--snr", sim_snr, "signal-to-noise ratio");

  auto* recon = app.add_subcommand("reconstruct", "frequency-marching reconstruction");
  std::string stack_path;
  int recon_stages = -1;
  std::string recon_epochs;
  recon->add_option("--stack", stack_path, "input stack MRC");
  recon->add_option("--stages", recon_stages, "number of stages (model layers)");
  recon->add_option("--epochs", recon_epochs, "comma-separated epochs per stage");

  auto* fsc = app.add_subcommand("fsc", "Fourier shell correlation of two volumes");
  std::string fsc_a, fsc_b;
  fsc->add_option("a", fsc_a, "first volume (MRC)")->required();
  fsc->add_option("b", fsc_b, "second volume (MRC)")->required();

  auto* psnr_cmd = app.add_subcommand("psnr", "PSNR between two images");
  std::string psnr_a, psnr_b;
  psnr_cmd->add_option("a", psnr_a, "first image (PNG or tensor JSON)")->required();
  psnr_cmd->add_option("b", psnr_b, "second image (PNG or tensor JSON)")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    json cfg = load_config(config_path);
    for (const auto& kv : overrides) apply_override(cfg, kv);
    if (app.count("--seed") > 0) cfg["seed"] = seed;
    if (cfg.contains("seed")) seed = cfg.at("seed").get<uint64_t>();
    if (app.count("--out") > 0) cfg["out"] = out_dir;
    if (cfg.contains("out")) out_dir = cfg.at("out").get<std::string>();

    if (fit->parsed()) {
      if (fit->count("--image") > 0) cfg["image"] = image_path;
      return cmd_fit_image(cfg, require_out(out_dir), seed, threads);
    }
    if (spectrum->parsed())
      return cmd_spectrum(cfg, require_out(out_dir), seed, threads);
    if (simulate->parsed()) {
      if (simulate->count("--vol") > 0) cfg["vol"] = vol_path;
      if (sim_n >= 0) cfg["n"] = sim_n;
      if (sim_snr >= 0) cfg["snr"] = sim_snr;
      return cmd_simulate(cfg, require_out(out_dir), seed, threads);
    }
    if (recon->parsed()) {
      if (recon->count("--stack") > 0) cfg["stack"] = stack_path;
      if (recon_stages > 0) cfg["stages"] = recon_stages;
      if (!recon_epochs.empty()) cfg["epochs"] = parse_csv_ints(recon_epochs);
      return cmd_reconstruct(cfg, require_out(out_dir), seed, threads);
    }
    if (fsc->parsed()) return cmd_fsc(fsc_a, fsc_b, out_dir, cfg, seed, threads);
    if (psnr_cmd->parsed())
      return cmd_psnr(psnr_a, psnr_b, out_dir, cfg, seed, threads);
    if (gradcheck->parsed())
      return cmd_gradcheck(cfg, require_out(out_dir), seed, threads);
    std::cerr << "no command selected\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 1;
  }
}
