#include "rmfn/image_fit.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "rmfn/filtering.hpp"
#include "rmfn/image_io.hpp"
#include "rmfn/spectral.hpp"

namespace rmfn {

namespace {

Tensor center_crop_square(const Tensor& image) {
  const int64_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (h == w) return image;
  std::fprintf(stderr, "warning: non-square image %lldx%lld, center-cropping\n",
               static_cast<long long>(w), static_cast<long long>(h));
  const int64_t s = std::min(h, w);
  const int64_t y0 = (h - s) / 2, x0 = (w - s) / 2;
  Tensor out({s, s, c});
  for (int64_t y = 0; y < s; ++y)
    for (int64_t x = 0; x < s; ++x)
      for (int64_t k = 0; k < c; ++k)
        out[(y * s + x) * c + k] = image[((y + y0) * w + (x + x0)) * c + k];
  return out;
}

}  // namespace

ImageExperimentReport run_image_experiment(const ImageExperimentConfig& cfg,
                                           const Tensor& image) {
  if (cfg.eval_resolution != 2 * cfg.fit_resolution)
    throw std::invalid_argument("eval resolution must be twice the fit resolution");
  if (image.rank() != 3)
    throw std::invalid_argument("expected an image shaped [H, W, C]");

  Tensor square = center_crop_square(image);
  const int64_t side = square.dim(0);
  if (side % cfg.eval_resolution != 0)
    throw std::invalid_argument("image side must be a multiple of the eval resolution");
  Tensor eval_img = side == cfg.eval_resolution
                        ? square
                        : downsample(square, 2, static_cast<int>(side / cfg.eval_resolution));
  Tensor fit_img = downsample(eval_img, 2, 2);

  ModelConfig mc = cfg.model;
  mc.d_in = 2;
  mc.d_out = static_cast<int>(image.dim(2));
  Rng rng(cfg.seed);
  RMFNModel model = create_model(mc, rng);

  StageSchedule schedule = make_stage_schedule(model, cfg.budgets);
  schedule.freeze_below_stage = cfg.freeze_below_stage;

  // A zero-variance input admits an exact closed-form optimum (the DC head);
  // running the optimizer against filter residue would only corrupt it, so
  // the degenerate report carries perfect-fit sentinels instead.
  const int64_t pixels = square.dim(0) * square.dim(1);
  const int64_t channels = square.dim(2);
  bool constant_input = true;
  for (int64_t p = 0; p < pixels && constant_input; ++p)
    for (int64_t k = 0; k < channels; ++k)
      if (square[p * channels + k] != square[k]) {
        constant_input = false;
        break;
      }

  ImageExperimentReport rep;
  rep.band_limits.assign(model.band_limits.begin() + 1, model.band_limits.end());
  const int L = mc.layers;

  if (constant_input) {
    for (int s = 1; s <= L; ++s) {
      for (const char* leaf : {"w", "b"}) {
        Tensor& v = model.params.at(RMFNModel::head_key(s, leaf)).value;
        v = Tensor(v.shape());
      }
    }
    Tensor& dc = model.params.at(RMFNModel::head_key(1, "b")).value;
    for (int64_t k = 0; k < channels; ++k) dc[k] = square[k];

    for (int s = 1; s <= L; ++s) {
      Tensor out = eval_on_grid(model, s, {cfg.fit_resolution, cfg.fit_resolution});
      rep.fit.final_spectra.push_back(dft_magnitude(out, 2));
      rep.fit.final_outputs.push_back(std::move(out));
    }
    rep.drift.assign(static_cast<size_t>(L), 0.0);
    rep.fit.drift = rep.drift;
    rep.psnr_fit = std::numeric_limits<double>::infinity();
    rep.psnr_eval = std::numeric_limits<double>::infinity();
    rep.eval_reconstruction =
        eval_on_grid(model, L, {cfg.eval_resolution, cfg.eval_resolution});
  } else {
    std::vector<Tensor> targets =
        make_stage_targets(fit_img, 2, schedule, cfg.lowpass_targets);

    TrainConfig tc;
    tc.mode = cfg.mode;
    if (!cfg.out_dir.empty()) {
      std::filesystem::create_directories(cfg.out_dir);
      tc.log_path = cfg.out_dir + "/train_log.jsonl";
    }

    rep.fit = staged_fit(model, targets, schedule, tc, rng);
    rep.drift = rep.fit.drift;
    rep.psnr_fit = psnr(rep.fit.final_outputs[static_cast<size_t>(L - 1)], fit_img);
    rep.eval_reconstruction =
        eval_on_grid(model, L, {cfg.eval_resolution, cfg.eval_resolution});
    rep.psnr_eval = psnr(rep.eval_reconstruction, eval_img);
  }

  if (!cfg.out_dir.empty()) {
    const std::string dir = cfg.out_dir;
    std::filesystem::create_directories(dir);
    for (int s = 1; s <= L; ++s) {
      save_png(dir + "/recon_scale" + std::to_string(s) + ".png",
               rep.fit.final_outputs[static_cast<size_t>(s - 1)]);
      save_spectrum_png(dir + "/spectrum_scale" + std::to_string(s) + ".png",
                        rep.fit.final_spectra[static_cast<size_t>(s - 1)]);
    }
    save_png(dir + "/recon_eval.png", rep.eval_reconstruction);
    save_checkpoint(model, dir + "/model.json");

    nlohmann::json j;
    j["fit_resolution"] = cfg.fit_resolution;
    j["eval_resolution"] = cfg.eval_resolution;
    j["seed"] = cfg.seed;
    j["band_limits"] = rep.band_limits;
    j["drift"] = rep.drift;
    j["psnr_fit"] = rep.psnr_fit;
    j["psnr_eval"] = rep.psnr_eval;
    std::ofstream f(dir + "/report.json");
    f << j.dump(2) << "\n";
  }
  return rep;
}

ImageExperimentReport run_image_experiment(const ImageExperimentConfig& cfg) {
  if (cfg.image_path.empty())
    throw std::invalid_argument("config has no image path; pass the image explicitly");
  return run_image_experiment(cfg, load_png(cfg.image_path));
}

Tensor synth_natural_image(int n, int channels, Rng& rng) {
  if (n < 8 || channels < 1) throw std::invalid_argument("bad synth image size");
  const std::vector<int64_t> dims = {n, n};
  const int64_t npix = static_cast<int64_t>(n) * n;
  Tensor out({static_cast<int64_t>(n), static_cast<int64_t>(n),
              static_cast<int64_t>(channels)});

  // 1/f-shaped noise: filter white Gaussian noise in the Fourier domain.
  for (int c = 0; c < channels; ++c) {
    std::vector<double> noise(static_cast<size_t>(npix));
    for (auto& v : noise) v = rng.normal();
    auto spec = dft_complex(noise.data(), dims, -1);
    for (int64_t y = 0; y < n; ++y)
      for (int64_t x = 0; x < n; ++x) {
        const double fy = y > n / 2 ? static_cast<double>(y - n) : static_cast<double>(y);
        const double fx = x > n / 2 ? static_cast<double>(x - n) : static_cast<double>(x);
        const double f = std::sqrt(fx * fx + fy * fy);
        spec[static_cast<size_t>(y * n + x)] *= 1.0 / std::pow(1.0 + f, 1.8);
      }
    auto back = dft_complex(spec.data(), dims, +1);
    for (int64_t i = 0; i < npix; ++i)
      out[i * channels + c] = back[static_cast<size_t>(i)].real() / static_cast<double>(npix);
  }

  // A few soft-edged discs shared across channels, channel-weighted.
  const int n_shapes = 3 + static_cast<int>(rng.uniform_int(0, 2));
  for (int sidx = 0; sidx < n_shapes; ++sidx) {
    const double cx = rng.uniform(0.15, 0.85) * n;
    const double cy = rng.uniform(0.15, 0.85) * n;
    const double rad = rng.uniform(0.06, 0.22) * n;
    const double soft = rng.uniform(0.01, 0.04) * n;
    std::vector<double> wgt(static_cast<size_t>(channels));
    for (auto& w : wgt) w = rng.uniform(-1.0, 1.0);
    for (int64_t y = 0; y < n; ++y)
      for (int64_t x = 0; x < n; ++x) {
        const double d = std::hypot(static_cast<double>(x) - cx,
                                    static_cast<double>(y) - cy);
        const double v = 1.0 / (1.0 + std::exp((d - rad) / soft));
        for (int c = 0; c < channels; ++c)
          out[(y * n + x) * channels + c] += 0.35 * wgt[static_cast<size_t>(c)] * v;
      }
  }

  double lo = out[0], hi = out[0];
  for (int64_t i = 0; i < out.size(); ++i) {
    lo = std::min(lo, out[i]);
    hi = std::max(hi, out[i]);
  }
  const double span = hi - lo;
  for (int64_t i = 0; i < out.size(); ++i)
    out[i] = span > 0 ? 0.02 + 0.96 * (out[i] - lo) / span : 0.5;
  return out;
}

}  // namespace rmfn
