#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmfn/model.hpp"
#include "rmfn/optimizer.hpp"
#include "rmfn/rng.hpp"
#include "rmfn/tensor.hpp"

namespace rmfn {

// One stage per output scale, coarse to fine.
struct StageSchedule {
  std::vector<int64_t> budgets;      // iterations per stage, all positive
  std::vector<double> target_bands;  // B_k supervising stage k, cycles/unit
  // When true (current-scale mode only), parameters owned by scales below
  // the running stage are frozen for the stage's duration instead of merely
  // receiving no gradient from the loss.
  bool freeze_below_stage = false;
};

// Schedule matching the model's band limits, one budget per scale.
StageSchedule make_stage_schedule(const RMFNModel& model, std::vector<int64_t> budgets);

// Per-scale supervision targets from a full-resolution image shaped
// [dims..., C] (or [dims...]): scales below the last are Gaussian-low-passed
// at their band, the last stage sees the raw image. lowpass=false feeds the
// raw image to every stage instead; both variants are valid protocols.
std::vector<Tensor> make_stage_targets(const Tensor& image, int spatial_rank,
                                       const StageSchedule& schedule, bool lowpass = true);

enum class TrainMode {
  // Stage k applies the scale-k MSE only; every parameter reachable from it
  // trains.
  kStagedCurrent,
  // Keeps every scale's loss each round, but activations of non-current
  // scales are detached so only their output heads update. Internal
  // representations still train stage by stage.
  kFairStaged,
  // No staging: the sum of all scale losses every iteration. Stage
  // boundaries are kept only as snapshot points so drift metrics align.
  kJoint,
};

struct TrainConfig {
  TrainMode mode = TrainMode::kStagedCurrent;
  AdamConfig adam;              // lr 1e-3 default
  std::string log_path;         // JSON-lines; empty disables logging
  int64_t log_every = 50;
  bool record_outputs = true;   // keep per-scale grids in the records
};

struct StageRecord {
  int stage = 0;                      // 1-based scale index
  int64_t start_iter = 0;             // cumulative, exclusive of this stage
  int64_t end_iter = 0;               // cumulative, inclusive
  std::vector<int> scales_in_loss;    // scales whose loss terms were built
  std::vector<int> scales_full_grad;  // subset whose activations backprop
  double last_loss = 0.0;
  std::vector<Tensor> scale_outputs;  // scales 1..stage on the fit grid
  std::vector<Tensor> scale_spectra;  // centered magnitude spectra of those
};

struct FitResult {
  std::vector<StageRecord> stages;
  std::vector<Tensor> final_outputs;  // all scales, at training end
  std::vector<Tensor> final_spectra;
  // drift[s-1] = spectrum_mad(scale-s spectrum at its own stage's end,
  // scale-s spectrum at training end).
  std::vector<double> drift;
  std::vector<double> loss_history;   // one entry per iteration
};

// Trains in place. Targets are per-scale arrays of identical shape
// [dims..., C] (or [dims...]) whose spatial dims define the fit grid;
// channel count must equal the model's d_out. Filters are precomputed once
// for the grid since their parameters are frozen. Full-batch updates; the
// rng is reserved for subsampling variants and is not consumed today.
FitResult staged_fit(RMFNModel& model, const std::vector<Tensor>& targets,
                     const StageSchedule& schedule, const TrainConfig& tc, Rng& rng);

}  // namespace rmfn
