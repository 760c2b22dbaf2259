#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "rmfn/autodiff.hpp"
#include "rmfn/tensor.hpp"

namespace rmfn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Classic Adam with bias-corrected moments. State slots are keyed by parameter
// name and created lazily, so one instance can be scoped to any subset of a
// ParamSet: step() touches only the keys present in `grads`. Bias-correction
// step counts are per key, so a parameter that first receives gradients late
// in training still gets the standard early-step correction.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ad::ParamSet& params, const std::map<std::string, Tensor>& grads);

  // Drops moment state (and nothing else) for every key starting with
  // `prefix`. Used when a parameterization is re-centered in place and the
  // accumulated moments no longer live in a meaningful tangent frame.
  void forget_prefix(const std::string& prefix);

  void reset();

  // Number of step() calls since construction/reset.
  int64_t t() const { return t_; }
  AdamConfig& config() { return cfg_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  struct Slot {
    Tensor m, v;
    int64_t t = 0;
  };
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace rmfn
