#include "rmfn/training.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "rmfn/autodiff.hpp"
#include "rmfn/filtering.hpp"
#include "rmfn/spectral.hpp"

namespace rmfn {

namespace {

void split_target_shape(const Tensor& t, int d_in, std::vector<int64_t>& dims,
                        int64_t& channels) {
  if (t.rank() == d_in) {
    dims.assign(t.shape().begin(), t.shape().end());
    channels = 1;
  } else if (t.rank() == d_in + 1) {
    dims.assign(t.shape().begin(), t.shape().end() - 1);
    channels = t.shape().back();
  } else {
    throw std::invalid_argument("target rank does not match the model's input dim");
  }
}

ad::Value mse(ad::Tape& tape, ad::Value pred, ad::Value target) {
  return tape.mean(tape.square(tape.sub(pred, target)));
}

// Scale outputs with every non-current activation detached, so losses on
// those scales reach only their output heads.
std::vector<ad::Value> detached_scale_outputs(ad::Tape& tape,
                                              const std::map<std::string, ad::Value>& leaves,
                                              const ModelConfig& cfg,
                                              const std::vector<ad::Value>& g,
                                              int current_scale) {
  ModelProgram chain = build_model_program(tape, leaves, cfg, g);
  const ad::Value zero_out = tape.constant(Tensor::zeros({cfg.d_out}));
  std::vector<ad::Value> y;
  for (int s = 1; s <= cfg.layers; ++s) {
    ad::Value h = (s == current_scale) ? chain.z[static_cast<size_t>(s)]
                                       : tape.stop_gradient(chain.z[static_cast<size_t>(s)]);
    const ad::Value w = leaves.at(RMFNModel::head_key(s, "w"));
    const ad::Value b =
        cfg.bias_free ? zero_out : leaves.at(RMFNModel::head_key(s, "b"));
    ad::Value head = tape.linear(h, w, b);
    if (cfg.residual && s > 1)
      y.push_back(tape.add(y.back(), head));
    else
      y.push_back(head);
  }
  return y;
}

}  // namespace

StageSchedule make_stage_schedule(const RMFNModel& model, std::vector<int64_t> budgets) {
  if (budgets.size() != static_cast<size_t>(model.cfg.layers))
    throw std::invalid_argument("need one budget per scale");
  for (int64_t b : budgets)
    if (b <= 0) throw std::invalid_argument("stage budgets must be positive");
  StageSchedule s;
  s.budgets = std::move(budgets);
  s.target_bands.assign(model.band_limits.begin() + 1, model.band_limits.end());
  return s;
}

std::vector<Tensor> make_stage_targets(const Tensor& image, int spatial_rank,
                                       const StageSchedule& schedule, bool lowpass) {
  const size_t n_stages = schedule.target_bands.size();
  if (n_stages == 0) throw std::invalid_argument("empty schedule");
  std::vector<Tensor> targets;
  targets.reserve(n_stages);
  for (size_t k = 0; k < n_stages; ++k) {
    if (!lowpass || k + 1 == n_stages)
      targets.push_back(image);
    else
      targets.push_back(gaussian_lowpass(image, spatial_rank, schedule.target_bands[k]));
  }
  return targets;
}

FitResult staged_fit(RMFNModel& model, const std::vector<Tensor>& targets,
                     const StageSchedule& schedule, const TrainConfig& tc,
                     [[maybe_unused]] Rng& rng) {
  const int L = model.cfg.layers;
  if (targets.size() != static_cast<size_t>(L) ||
      schedule.budgets.size() != static_cast<size_t>(L) ||
      schedule.target_bands.size() != static_cast<size_t>(L))
    throw std::invalid_argument("schedule/targets must provide one entry per scale");
  for (int64_t b : schedule.budgets)
    if (b <= 0) throw std::invalid_argument("stage budgets must be positive");

  std::vector<int64_t> dims;
  int64_t channels = 0;
  split_target_shape(targets[0], model.cfg.d_in, dims, channels);
  if (channels != model.cfg.d_out)
    throw std::invalid_argument("target channels do not match d_out");
  for (const Tensor& t : targets)
    if (t.shape() != targets[0].shape())
      throw std::invalid_argument("per-scale targets must share one shape");

  const int64_t n = Tensor::shape_size(dims);
  const Tensor coords = make_grid_coords(dims);
  // Filter parameters are frozen, so the filter responses on the fixed fit
  // grid are constants for the whole run.
  const std::vector<Tensor> filter_bank = filters_numeric(model, coords);
  std::vector<Tensor> tflat;
  tflat.reserve(targets.size());
  for (const Tensor& t : targets) tflat.push_back(t.reshaped({n, channels}));

  Adam adam(tc.adam);
  std::ofstream log;
  if (!tc.log_path.empty()) {
    log.open(tc.log_path);
    if (!log) throw std::runtime_error("cannot open training log '" + tc.log_path + "'");
  }

  FitResult res;
  res.loss_history.reserve(
      static_cast<size_t>([&] {
        int64_t total = 0;
        for (int64_t b : schedule.budgets) total += b;
        return total;
      }()));

  int64_t iter = 0;
  for (int k = 1; k <= L; ++k) {
    StageRecord rec;
    rec.stage = k;
    rec.start_iter = iter;

    std::vector<std::string> frozen;
    if (schedule.freeze_below_stage && tc.mode == TrainMode::kStagedCurrent) {
      for (int i = 1; i < k; ++i) {
        std::vector<std::string> keys = {RMFNModel::linear_key(i, "w"),
                                         RMFNModel::head_key(i, "w")};
        if (!model.cfg.bias_free) {
          keys.push_back(RMFNModel::linear_key(i, "b"));
          keys.push_back(RMFNModel::head_key(i, "b"));
        }
        for (auto& key : keys) {
          ad::Param& p = model.params.at(key);
          if (p.trainable) {
            p.trainable = false;
            frozen.push_back(key);
          }
        }
      }
    }

    // Instrumentation is filled while the loss is assembled, once per stage.
    bool recorded = false;
    const ad::Program program = [&](ad::Tape& tape,
                                    const std::map<std::string, ad::Value>& leaves) {
      std::vector<ad::Value> g;
      g.reserve(filter_bank.size());
      for (const Tensor& f : filter_bank) g.push_back(tape.constant(f));

      ad::Value loss;
      switch (tc.mode) {
        case TrainMode::kStagedCurrent: {
          ModelProgram prog = build_model_program(tape, leaves, model.cfg, g, k);
          loss = mse(tape, prog.y[static_cast<size_t>(k - 1)],
                     tape.constant(tflat[static_cast<size_t>(k - 1)]));
          if (!recorded) {
            rec.scales_in_loss = {k};
            rec.scales_full_grad = {k};
          }
          break;
        }
        case TrainMode::kFairStaged: {
          std::vector<ad::Value> y = detached_scale_outputs(tape, leaves, model.cfg, g, k);
          for (int s = 1; s <= L; ++s) {
            ad::Value ls = mse(tape, y[static_cast<size_t>(s - 1)],
                               tape.constant(tflat[static_cast<size_t>(s - 1)]));
            loss = (s == 1) ? ls : tape.add(loss, ls);
            if (!recorded) rec.scales_in_loss.push_back(s);
          }
          if (!recorded) rec.scales_full_grad = {k};
          break;
        }
        case TrainMode::kJoint: {
          ModelProgram prog = build_model_program(tape, leaves, model.cfg, g);
          for (int s = 1; s <= L; ++s) {
            ad::Value ls = mse(tape, prog.y[static_cast<size_t>(s - 1)],
                               tape.constant(tflat[static_cast<size_t>(s - 1)]));
            loss = (s == 1) ? ls : tape.add(loss, ls);
            if (!recorded) {
              rec.scales_in_loss.push_back(s);
              rec.scales_full_grad.push_back(s);
            }
          }
          break;
        }
      }
      recorded = true;
      return loss;
    };

    for (int64_t it = 0; it < schedule.budgets[static_cast<size_t>(k - 1)]; ++it) {
      ad::EvalResult ev = ad::evaluate_with_gradients(program, model.params);
      adam.step(model.params, ev.grads);
      ++iter;
      res.loss_history.push_back(ev.value);
      rec.last_loss = ev.value;
      if (log && (iter % tc.log_every == 0 ||
                  it + 1 == schedule.budgets[static_cast<size_t>(k - 1)])) {
        nlohmann::json line = {{"iter", iter}, {"stage", k}, {"loss", ev.value}};
        log << line.dump() << "\n";
      }
    }

    for (const auto& key : frozen) model.params.at(key).trainable = true;

    rec.end_iter = iter;
    for (int s = 1; s <= k; ++s) {
      Tensor out = eval_on_grid(model, s, dims);
      rec.scale_spectra.push_back(dft_magnitude(out, model.cfg.d_in));
      if (tc.record_outputs) rec.scale_outputs.push_back(std::move(out));
    }
    if (log) {
      nlohmann::json line = {{"event", "stage_end"}, {"stage", k}, {"iter", iter}};
      log << line.dump() << "\n";
    }
    res.stages.push_back(std::move(rec));
  }

  for (int s = 1; s <= L; ++s) {
    Tensor out = eval_on_grid(model, s, dims);
    res.final_spectra.push_back(dft_magnitude(out, model.cfg.d_in));
    res.final_outputs.push_back(std::move(out));
  }
  res.drift.resize(static_cast<size_t>(L));
  for (int s = 1; s <= L; ++s)
    res.drift[static_cast<size_t>(s - 1)] =
        spectrum_mad(res.stages[static_cast<size_t>(s - 1)]
                         .scale_spectra[static_cast<size_t>(s - 1)],
                     res.final_spectra[static_cast<size_t>(s - 1)]);
  return res;
}

}  // namespace rmfn
