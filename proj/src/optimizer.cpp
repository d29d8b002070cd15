#include "srttt/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace srttt {

double AdamW::step(const std::vector<std::pair<std::string, Tensor*>>& trainables,
                   long global_step) {
  double sq_norm = 0.0;
  for (const auto& [name, t] : trainables) {
    if (!t->grad) throw std::runtime_error("optimizer: parameter '" + name + "' has no grad");
    for (double g : *t->grad) sq_norm += g * g;
  }
  const double norm = std::sqrt(sq_norm);
  const double clip_scale = norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;

  double lr = cfg_.lr;
  if (cfg_.lr_warmup_steps > 0 && global_step < cfg_.lr_warmup_steps) {
    lr *= static_cast<double>(global_step) / static_cast<double>(cfg_.lr_warmup_steps);
  }

  for (const auto& [name, t] : trainables) {
    SlotState& s = slots_[name];
    if (s.m.empty()) {
      s.m.assign(t->numel(), 0.0);
      s.v.assign(t->numel(), 0.0);
    }
    s.t += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    double* w = t->data->data();
    const double* g = t->grad->data();
    for (size_t i = 0; i < t->numel(); ++i) {
      const double gi = g[i] * clip_scale;
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
  return norm;
}

}  // namespace srttt
