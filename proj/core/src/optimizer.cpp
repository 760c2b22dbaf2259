#include "rmfn/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace rmfn {

void Adam::step(ad::ParamSet& params, const std::map<std::string, Tensor>& grads) {
  ++t_;
  for (const auto& [name, g] : grads) {
    ad::Param& p = params.at(name);
    if (!p.trainable) continue;
    if (g.shape() != p.value.shape())
      throw std::invalid_argument("gradient shape mismatch for '" + name + "'");
    if (!g.all_finite())
      throw std::runtime_error("non-finite gradient for '" + name + "'");
    auto it = slots_.find(name);
    if (it == slots_.end())
      it = slots_.emplace(name, Slot{Tensor::zeros(g.shape()), Tensor::zeros(g.shape()), 0})
               .first;
    Slot& s = it->second;
    ++s.t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    Tensor& w = p.value;
    for (int64_t i = 0; i < g.size(); ++i) {
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::forget_prefix(const std::string& prefix) {
  for (auto it = slots_.lower_bound(prefix); it != slots_.end();) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    it = slots_.erase(it);
  }
}

void Adam::reset() {
  t_ = 0;
  slots_.clear();
}

}  // namespace rmfn
