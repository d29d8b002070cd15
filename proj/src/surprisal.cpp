#include "srttt/surprisal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace srttt {

double percentile(const std::vector<double>& values, double p) {
  if (values.empty()) throw std::runtime_error("percentile: empty input");
  if (p <= 0.0 || p >= 1.0) throw std::runtime_error("percentile: p must be in (0,1)");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double rank = p * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(rank));
  const size_t hi = static_cast<size_t>(std::ceil(rank));
  if (lo == hi) return sorted[lo];
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

void update_threshold(SurprisalState& state, const RouterConfig& cfg,
                      const std::vector<double>& chunk_losses) {
  const double q = percentile(chunk_losses, cfg.percentile);
  if (!state.tau_set) {
    state.tau_ema = q;
    state.tau_set = true;
  } else {
    state.tau_ema = cfg.ema_decay * state.tau_ema + (1.0 - cfg.ema_decay) * q;
  }
}

bool route(double token_loss, double chunk_loss, long position,
           const SurprisalState& state, const RouterConfig& cfg) {
  if (position < cfg.warmup_tokens) return false;
  if (!state.tau_set) return false;
  return token_loss > state.tau_ema && chunk_loss > cfg.chunk_factor * state.tau_ema;
}

ChunkDecision SurprisalRouter::decide_(bool update_tau) {
  ChunkDecision d;
  d.start_position = chunk_start_;
  d.losses = chunk_buf_;
  d.tau_used = state_.tau_ema;
  double sum = 0.0;
  for (double l : chunk_buf_) sum += l;
  d.chunk_mean = sum / static_cast<double>(chunk_buf_.size());
  d.routed.resize(chunk_buf_.size());
  for (size_t i = 0; i < chunk_buf_.size(); ++i) {
    d.routed[i] = route(chunk_buf_[i], d.chunk_mean,
                        chunk_start_ + static_cast<long>(i), state_, cfg_);
  }
  if (update_tau) update_threshold(state_, cfg_, chunk_buf_);
  chunk_start_ += static_cast<int>(chunk_buf_.size());
  chunk_buf_.clear();
  return d;
}

std::optional<ChunkDecision> SurprisalRouter::push(double loss) {
  chunk_buf_.push_back(loss);
  state_.tokens_seen += 1;
  if (static_cast<int>(chunk_buf_.size()) == cfg_.chunk_size) {
    return decide_(/*update_tau=*/true);
  }
  return std::nullopt;
}

std::optional<ChunkDecision> SurprisalRouter::finish() {
  if (chunk_buf_.empty()) return std::nullopt;
  return decide_(/*update_tau=*/false);
}

void SurprisalRouter::reset() {
  state_ = SurprisalState{};
  chunk_buf_.clear();
  chunk_start_ = 0;
}

}  // namespace srttt
