#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "srttt/autograd.hpp"

namespace srttt {

struct OptimizerConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  long lr_warmup_steps = 0;
};

// Adaptive moments with decoupled weight decay and global-norm gradient
// clipping over the trainable set. Moments and step counts are per parameter
// name, so parameters entering training late (stage-2 gates/retrieval) start
// with a fresh trajectory.
class AdamW {
 public:
  explicit AdamW(OptimizerConfig cfg) : cfg_(cfg) {}

  struct SlotState {
    std::vector<double> m;
    std::vector<double> v;
    long t = 0;
  };

  // Applies one update to every (name, tensor) pair using tensor->grad.
  // global_step drives the lr warmup schedule. Returns the pre-clip norm.
  double step(const std::vector<std::pair<std::string, Tensor*>>& trainables, long global_step);

  const OptimizerConfig& config() const { return cfg_; }
  std::map<std::string, SlotState>& slots() { return slots_; }
  const std::map<std::string, SlotState>& slots() const { return slots_; }

 private:
  OptimizerConfig cfg_;
  std::map<std::string, SlotState> slots_;
};

}  // namespace srttt
