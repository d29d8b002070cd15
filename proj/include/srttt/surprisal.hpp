#pragma once

#include <optional>
#include <vector>

namespace srttt {

// Dual-track surprisal routing: a token is flagged incompressible when its
// reconstruction loss exceeds the EMA-smoothed percentile threshold and the
// mean loss of its fixed chunk exceeds chunk_factor times that threshold.
// Decisions for a chunk are made when the chunk completes, against the
// threshold as it stood before the chunk; the chunk's losses update the
// threshold afterwards, so a chunk's own outliers cannot suppress its routing.

struct RouterConfig {
  double percentile = 0.95;
  double ema_decay = 0.99;    // beta in tau <- beta*tau + (1-beta)*q
  int chunk_size = 16;
  double chunk_factor = 0.8;
  int warmup_tokens = 32;     // tokens before this position are never routed
};

struct SurprisalState {
  double tau_ema = 0.0;
  bool tau_set = false;
  long tokens_seen = 0;
};

struct ChunkDecision {
  int start_position = 0;
  std::vector<char> routed;       // one flag per token in the chunk
  std::vector<double> losses;
  double chunk_mean = 0.0;
  double tau_used = 0.0;          // threshold the decisions were made against
};

// Linear-interpolation percentile over sorted values: rank r = p*(n-1).
// Throws on empty input.
double percentile(const std::vector<double>& values, double p);

// q = percentile(chunk_losses, p); first call sets tau directly.
void update_threshold(SurprisalState& state, const RouterConfig& cfg,
                      const std::vector<double>& chunk_losses);

// The pure dual-track rule for one token at stream position `position`
// (0-based). Always false before warmup or before the first threshold update.
bool route(double token_loss, double chunk_loss, long position,
           const SurprisalState& state, const RouterConfig& cfg);

class SurprisalRouter {
 public:
  explicit SurprisalRouter(RouterConfig cfg) : cfg_(cfg) {}

  // Feed one loss; returns the chunk's decisions when it completes.
  std::optional<ChunkDecision> push(double loss);

  // Flush a trailing partial chunk: decisions are made with its partial mean,
  // but the threshold is not updated (no later token will consult it).
  std::optional<ChunkDecision> finish();

  const SurprisalState& state() const { return state_; }
  const RouterConfig& config() const { return cfg_; }
  double tau() const { return state_.tau_ema; }
  void reset();

 private:
  ChunkDecision decide_(bool update_tau);

  RouterConfig cfg_;
  SurprisalState state_;
  std::vector<double> chunk_buf_;
  int chunk_start_ = 0;
};

}  // namespace srttt
