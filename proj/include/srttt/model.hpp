#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "srttt/autograd.hpp"
#include "srttt/cache.hpp"
#include "srttt/config.hpp"
#include "srttt/surprisal.hpp"

namespace srttt {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class CacheMode { disabled, enabled };

// One gradient step of the per-head fast weight on the reconstruction loss
// L = ||W k - v||^2. Returns the loss before the update and
// W' = W - eta * 2 (W k - v) k^T, both recorded on the tape, so outer-loop
// gradients flow through the closed form.
struct InnerStepResult {
  Tensor w_next;
  Tensor loss;
};
InnerStepResult ttt_inner_step(const Tensor& w, const Tensor& k, const Tensor& v, double eta);

// Scaled dot-product attention of one post-RoPE query head over the cached
// entries for that head. Empty (or absent) snapshots yield a zero vector.
// Cached keys/values are detached: gradient flows only into q.
Tensor cache_attention_head(const Tensor& q_head,
                            std::shared_ptr<const CacheSnapshot> snapshot, int head);

// All-heads convenience wrapper ([n_heads * d_head] in, same out).
Tensor cache_attention(const Tensor& q_all, std::shared_ptr<const CacheSnapshot> snapshot);

// Per-head fusion: out_h = ttt_h + alpha_h * cache_h with
// alpha = clamp(gate_raw, 0, alpha_max).
Tensor fuse(const Tensor& ttt_out, const Tensor& cache_out, const Tensor& gate_raw,
            double alpha_max, int n_heads);

class Model;

// Mean next-token cross-entropy over the sequence, recorded on the tape.
Tensor sequence_nll(Model& m, const std::vector<int>& tokens, CacheMode mode,
                    bool reset_first = true);

// Per-layer, per-sequence diagnostics.
struct LayerTrace {
  std::vector<double> token_loss;   // L_t per position
  std::vector<char> routed;         // filled when the chunk decision lands
  std::vector<double> chunk_mean;   // mean loss of the token's chunk
  std::vector<double> tau;          // threshold the decision used
  std::vector<double> hit_mass;     // l2 norm of the gated cache contribution
  std::vector<int> cache_size;      // occupancy after the token
  std::vector<int> inserted_positions;
  long inserts = 0;
};

struct ForwardAux {
  std::vector<LayerTrace> layers;
};

class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  // Fresh fast weights, caches, routers, and position counter.
  void reset_state();

  // Consume one token, return next-token logits. Streaming: fast weights and
  // caches advance; routing decisions land at chunk boundaries.
  Tensor step(int token, CacheMode mode);

  // Flush the trailing partial chunk through the router.
  void finish_sequence(CacheMode mode);

  // Whole-sequence forward; per-position logits. Resets state first unless
  // continuing an explicitly prepared state.
  std::vector<Tensor> forward(const std::vector<int>& tokens, CacheMode mode,
                              bool reset_first = true);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }

  // parameter registry (ordered, stable names); rebuilt per call so moved
  // models stay valid
  std::vector<std::pair<std::string, Tensor*>> params();
  std::vector<std::pair<std::string, const Tensor*>> params() const;
  std::vector<std::string> param_names() const;
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  size_t parameter_count() const;
  void zero_grads();

  size_t fast_weight_element_count() const;
  ResidualCache& layer_cache(int layer) { return states_[layer].cache; }
  double tau(int layer) const { return states_[layer].router.tau(); }
  std::vector<double> alphas(int layer) const;      // clamped per-head gates
  double mean_alpha(int layer) const;

  ForwardAux& aux() { return aux_; }
  const ForwardAux& aux() const { return aux_; }
  int position() const { return position_; }

  // Deep copy of parameters into a fresh model (states reset).
  Model clone() const;

  // Copy the TTT output projection into the retrieval projection (stage-2
  // warm start for the cache path).
  void warm_start_wco_from_wo();

  // true iff name belongs to the stage-2 trainable set (gates + retrieval
  // output projection)
  static bool is_gate_or_retrieval_param(const std::string& name);

 private:
  struct LayerParams {
    Tensor wq, wk, wv, wo, wco;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    Tensor gate;
  };
  struct LayerState {
    std::vector<Tensor> w_fast;                    // per head
    SurprisalRouter router;
    ResidualCache cache;
    std::vector<std::vector<double>> chunk_keys;   // post-RoPE, all heads
    std::vector<std::vector<double>> chunk_values;
    std::vector<int> chunk_positions;
    LayerState(const ModelConfig& cfg)
        : router(cfg.router), cache(cfg.cache_capacity, cfg.n_heads, cfg.d_head()) {}
  };

  Tensor layer_step_(int layer, const Tensor& x, int pos, CacheMode mode);
  void apply_decision_(int layer, const ChunkDecision& d, CacheMode mode);

  ModelConfig cfg_;
  uint64_t init_seed_;
  Tensor embed_, unembed_, ln_f_g, ln_f_b;
  std::vector<LayerParams> layers_;
  std::vector<LayerState> states_;
  ForwardAux aux_;
  int position_ = 0;
};

}  // namespace srttt
