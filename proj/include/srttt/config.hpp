#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "srttt/surprisal.hpp"

namespace srttt {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int vocab_size = 256;
  int max_seq_len = 256;
  double inner_lr = 0.1;
  double rope_base = 10000.0;
  double rotary_fraction = 0.5;  // fraction of each head rotated; rest is content-only
  int cache_capacity = 64;
  double alpha_max = 0.5;
  double alpha_init = 0.01;
  int mlp_ratio = 4;
  RouterConfig router;

  int d_head() const { return d_model / n_heads; }
  // even count of rotated dims per head implied by rotary_fraction
  int rotary_dims() const {
    const int r = static_cast<int>(rotary_fraction * d_head() + 0.5);
    return std::min(d_head(), std::max(2, r - (r % 2)));
  }
  void validate() const;
};

struct TrainConfig {
  long total_steps = 2800;
  long stage2_start = 2000;   // == total_steps trains the pure-TTT baseline
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  long lr_warmup_steps = 100;
  int seq_len = 256;
  double needle_mix = 0.5;
  long checkpoint_every = 700;
  bool wco_init_from_wo = true;  // warm-start retrieval projection at stage 2 entry

  void validate() const;
};

struct EvalConfig {
  std::vector<double> depths = {0.0, 0.25, 0.5, 0.75, 1.0};
  int samples_per_depth = 30;
  int seq_len = 256;
  int perplexity_tokens = 2048;

  void validate() const;
};

struct RunConfig {
  std::string preset = "desk";
  uint64_t seed = 1;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  static RunConfig from_preset(const std::string& name);

  // Key-value config file; '#' comments; unknown keys are errors. Overrides
  // are "key=value" strings applied after the file.
  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides);
  static RunConfig from_overrides(const std::string& preset,
                                  const std::vector<std::string>& overrides);

  void apply_kv(const std::string& key, const std::string& value);
  void validate() const;

  // canonical key=value dump; config_hash covers everything that shapes the
  // training trajectory
  std::string to_text() const;
  uint64_t config_hash() const;
};

// Resolves relative config paths against SRTTT_CONFIG_DIR when the file is
// not found locally.
std::string resolve_config_path(const std::string& path);

}  // namespace srttt
