#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmfn/model.hpp"
#include "rmfn/rng.hpp"
#include "rmfn/tensor.hpp"
#include "rmfn/training.hpp"

namespace rmfn {

// Fits a coordinate network at one resolution and scores generalization on a
// grid twice as fine, against the original image.
struct ImageExperimentConfig {
  std::string image_path;  // empty: caller supplies the image tensor
  int fit_resolution = 128;
  int eval_resolution = 256;  // must be exactly 2x fit_resolution
  ModelConfig model;          // d_in forced to 2, d_out to the channel count
  std::vector<int64_t> budgets;
  TrainMode mode = TrainMode::kStagedCurrent;
  bool lowpass_targets = true;
  bool freeze_below_stage = false;
  uint64_t seed = 1;
  std::string out_dir;  // when set, reconstructions/spectra/report are written
};

struct ImageExperimentReport {
  std::vector<double> drift;       // spectrum MAD per scale, stage end vs final
  double psnr_eval = 0.0;          // final scale on the 2x grid vs original
  double psnr_fit = 0.0;           // final scale on the fit grid vs fit target
  std::vector<double> band_limits; // model bands, scale 1..L
  FitResult fit;
  Tensor eval_reconstruction;      // [eval, eval, C]
};

// Experiment on an already-loaded image shaped [H, W, C]. Non-square images
// are center-cropped with a warning; the square side must then be an integer
// multiple of eval_resolution (larger inputs are anti-aliased down).
ImageExperimentReport run_image_experiment(const ImageExperimentConfig& cfg,
                                           const Tensor& image);

// Loads cfg.image_path (PNG) and runs the experiment.
ImageExperimentReport run_image_experiment(const ImageExperimentConfig& cfg);

// Procedural stand-in for a natural photo: 1/f-weighted Gaussian noise plus
// a few soft-edged shapes, normalized into [0, 1]. Deterministic in rng.
Tensor synth_natural_image(int n, int channels, Rng& rng);

}  // namespace rmfn
