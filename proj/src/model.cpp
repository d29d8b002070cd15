#include "srttt/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "srttt/rng.hpp"

namespace srttt {

namespace {

void check_finite_or_diverged(const Tensor& t, const char* what, int layer, int pos) {
  for (double v : *t.data) {
    if (!std::isfinite(v)) {
      throw DivergenceError(std::string("divergence: non-finite ") + what + " at layer " +
                            std::to_string(layer) + " position " + std::to_string(pos));
    }
  }
}

double l2_of_difference(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) {
    const double d = (*a.data)[i] - (*b.data)[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

InnerStepResult ttt_inner_step(const Tensor& w, const Tensor& k, const Tensor& v, double eta) {
  if (eta <= 0.0) throw std::runtime_error("ttt_inner_step: eta must be positive");
  Tensor residual = sub(matvec(w, k), v);       // z - v
  Tensor loss = squared_l2(residual);           // L_t, before the update
  Tensor w_next = sub(w, scale(outer(residual, k), 2.0 * eta));
  return {std::move(w_next), std::move(loss)};
}

Tensor cache_attention_head(const Tensor& q_head,
                            std::shared_ptr<const CacheSnapshot> snapshot, int head) {
  if (q_head.shape.size() != 1) {
    throw std::runtime_error("cache_attention: query head must be 1-D, got " +
                             shape_str(q_head.shape));
  }
  const int d = q_head.shape[0];
  if (!snapshot || snapshot->size() == 0) {
    return Tensor::zeros({d});  // defined degenerate case
  }
  if (snapshot->d_head != d) {
    throw std::runtime_error("cache_attention: query dim " + std::to_string(d) +
                             " vs cached dim " + std::to_string(snapshot->d_head));
  }
  const int m = snapshot->size();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  const double* pq = q_head.data->data();
  std::vector<double> scores(m);
  double mx = -1e300;
  for (int i = 0; i < m; ++i) {
    const double* key = snapshot->key_at(i, head);
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += pq[j] * key[j];
    scores[i] = s * inv_sqrt_d;
    mx = std::max(mx, scores[i]);
  }
  auto weights = std::make_shared<std::vector<double>>(m);
  double sum = 0.0;
  for (int i = 0; i < m; ++i) {
    (*weights)[i] = std::exp(scores[i] - mx);
    sum += (*weights)[i];
  }
  const double inv_sum = 1.0 / sum;
  for (int i = 0; i < m; ++i) (*weights)[i] *= inv_sum;

  Tensor out = Tensor::zeros({d}, grad_enabled() && q_head.requires_grad);
  double* po = out.data->data();
  for (int i = 0; i < m; ++i) {
    const double a = (*weights)[i];
    const double* val = snapshot->value_at(i, head);
    for (int j = 0; j < d; ++j) po[j] += a * val[j];
  }

  if (out.requires_grad) {
    auto node = std::make_shared<Node>();
    if (q_head.node) node->parents.push_back(q_head.node);
    node->out_grad = out.grad;
    auto qg = q_head.grad;
    auto og = out.grad;
    node->backprop = [snapshot, weights, qg, og, head, m, d, inv_sqrt_d]() {
      const double* g = og->data();
      // b_i = g . v_i ; ds_i = a_i (b_i - sum_j a_j b_j) ; dq = sum_i ds_i k_i / sqrt(d)
      std::vector<double> b(m);
      double mean_b = 0.0;
      for (int i = 0; i < m; ++i) {
        const double* val = snapshot->value_at(i, head);
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += g[j] * val[j];
        b[i] = acc;
        mean_b += (*weights)[i] * acc;
      }
      double* dq = qg->data();
      for (int i = 0; i < m; ++i) {
        const double ds = (*weights)[i] * (b[i] - mean_b) * inv_sqrt_d;
        if (ds == 0.0) continue;
        const double* key = snapshot->key_at(i, head);
        for (int j = 0; j < d; ++j) dq[j] += ds * key[j];
      }
    };
    out.node = node;
    tape_record(std::move(node));
  }
  return out;
}

Tensor cache_attention(const Tensor& q_all, std::shared_ptr<const CacheSnapshot> snapshot) {
  if (!snapshot || snapshot->size() == 0) {
    return Tensor::zeros(q_all.shape);
  }
  const int n_heads = snapshot->n_heads;
  const int d = snapshot->d_head;
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    heads.push_back(cache_attention_head(slice(q_all, h * d, d), snapshot, h));
  }
  return concat(heads);
}

Tensor fuse(const Tensor& ttt_out, const Tensor& cache_out, const Tensor& gate_raw,
            double alpha_max, int n_heads) {
  if (ttt_out.shape != cache_out.shape) {
    throw std::runtime_error("fuse: branch shapes differ " + shape_str(ttt_out.shape) + " vs " +
                             shape_str(cache_out.shape));
  }
  if (gate_raw.shape != std::vector<int>{n_heads}) {
    throw std::runtime_error("fuse: gate shape " + shape_str(gate_raw.shape) + " expects [" +
                             std::to_string(n_heads) + "]");
  }
  const int d = ttt_out.shape[0] / n_heads;
  Tensor alpha = clamp_gate(gate_raw, alpha_max);
  std::vector<Tensor> fused;
  fused.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    Tensor gated = smul(slice(alpha, h, 1), slice(cache_out, h * d, d));
    fused.push_back(add(slice(ttt_out, h * d, d), gated));
  }
  return concat(fused);
}

// ---- Model -------------------------------------------------------------------

Model::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg), init_seed_(seed) {
  cfg_.validate();
  const int d = cfg_.d_model;
  const int dh = cfg_.d_head();
  const int mlp = cfg_.mlp_ratio * d;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double mlp_std = 1.0 / std::sqrt(static_cast<double>(mlp));
  const double embed_std = 0.02;

  auto init_normal = [&](std::vector<int> shape, const std::string& name, double std_dev) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    auto rs = rng::derive(init_seed_, "init:" + name);
    for (double& v : *t.data) v = rs.next_normal() * std_dev;
    return t;
  };
  auto init_const = [&](std::vector<int> shape, double v) {
    return Tensor::full(std::move(shape), v, true);
  };

  embed_ = init_normal({cfg_.vocab_size, d}, "embed", embed_std);
  unembed_ = init_normal({d, cfg_.vocab_size}, "unembed", embed_std);
  ln_f_g = init_const({d}, 1.0);
  ln_f_b = init_const({d}, 0.0);

  layers_.resize(cfg_.n_layers);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerParams& L = layers_[l];
    L.wq = init_normal({d, d}, p + "wq", w_std);
    L.wk = init_normal({d, d}, p + "wk", w_std);
    L.wv = init_normal({d, d}, p + "wv", w_std);
    L.wo = init_normal({d, d}, p + "wo", w_std);
    L.wco = init_normal({d, d}, p + "wco", w_std);
    L.ln1_g = init_const({d}, 1.0);
    L.ln1_b = init_const({d}, 0.0);
    L.ln2_g = init_const({d}, 1.0);
    L.ln2_b = init_const({d}, 0.0);
    L.mlp_w1 = init_normal({d, mlp}, p + "mlp_w1", w_std);
    L.mlp_b1 = init_const({mlp}, 0.0);
    L.mlp_w2 = init_normal({mlp, d}, p + "mlp_w2", mlp_std);
    L.mlp_b2 = init_const({d}, 0.0);
    L.gate = init_const({cfg_.n_heads}, cfg_.alpha_init);
    (void)dh;
  }
  reset_state();
}

std::vector<std::pair<std::string, Tensor*>> Model::params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.reserve(4 + 14 * layers_.size());
  out.emplace_back("embed", &embed_);
  out.emplace_back("unembed", &unembed_);
  out.emplace_back("ln_f.g", &ln_f_g);
  out.emplace_back("ln_f.b", &ln_f_b);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerParams& L = layers_[l];
    out.emplace_back(p + "wq", &L.wq);
    out.emplace_back(p + "wk", &L.wk);
    out.emplace_back(p + "wv", &L.wv);
    out.emplace_back(p + "wo", &L.wo);
    out.emplace_back(p + "wco", &L.wco);
    out.emplace_back(p + "ln1.g", &L.ln1_g);
    out.emplace_back(p + "ln1.b", &L.ln1_b);
    out.emplace_back(p + "ln2.g", &L.ln2_g);
    out.emplace_back(p + "ln2.b", &L.ln2_b);
    out.emplace_back(p + "mlp_w1", &L.mlp_w1);
    out.emplace_back(p + "mlp_b1", &L.mlp_b1);
    out.emplace_back(p + "mlp_w2", &L.mlp_w2);
    out.emplace_back(p + "mlp_b2", &L.mlp_b2);
    out.emplace_back(p + "gate", &L.gate);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Model::params() const {
  auto mutable_view = const_cast<Model*>(this)->params();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mutable_view.size());
  for (auto& [name, t] : mutable_view) out.emplace_back(name, t);
  return out;
}

std::vector<std::string> Model::param_names() const {
  std::vector<std::string> names;
  for (auto& [name, t] : params()) names.push_back(name);
  return names;
}

Tensor& Model::param(const std::string& name) {
  for (auto& [n, t] : params()) {
    if (n == name) return *t;
  }
  throw std::runtime_error("unknown parameter: " + name);
}

const Tensor& Model::param(const std::string& name) const {
  return const_cast<Model*>(this)->param(name);
}

size_t Model::parameter_count() const {
  size_t n = 0;
  for (auto& [name, t] : params()) n += t->numel();
  return n;
}

void Model::zero_grads() {
  for (auto& [name, t] : params()) t->zero_grad_();
}

size_t Model::fast_weight_element_count() const {
  size_t n = 0;
  for (const LayerState& s : states_) {
    for (const Tensor& w : s.w_fast) n += w.numel();
  }
  return n;
}

std::vector<double> Model::alphas(int layer) const {
  std::vector<double> a;
  for (double g : *layers_[layer].gate.data) {
    a.push_back(std::clamp(g, 0.0, cfg_.alpha_max));
  }
  return a;
}

double Model::mean_alpha(int layer) const {
  const auto a = alphas(layer);
  double s = 0.0;
  for (double v : a) s += v;
  return s / static_cast<double>(a.size());
}

void Model::reset_state() {
  states_.clear();
  states_.reserve(cfg_.n_layers);
  const int dh = cfg_.d_head();
  for (int l = 0; l < cfg_.n_layers; ++l) {
    states_.emplace_back(cfg_);
    LayerState& s = states_.back();
    s.w_fast.reserve(cfg_.n_heads);
    for (int h = 0; h < cfg_.n_heads; ++h) {
      s.w_fast.push_back(Tensor::zeros({dh, dh}));
    }
  }
  aux_.layers.assign(cfg_.n_layers, LayerTrace{});
  position_ = 0;
}

void Model::apply_decision_(int layer, const ChunkDecision& d, CacheMode mode) {
  LayerState& s = states_[layer];
  LayerTrace& trace = aux_.layers[layer];
  for (size_t i = 0; i < d.routed.size(); ++i) {
    const int pos = d.start_position + static_cast<int>(i);
    trace.routed[pos] = d.routed[i];
    trace.chunk_mean[pos] = d.chunk_mean;
    trace.tau[pos] = d.tau_used;
    if (d.routed[i] && mode == CacheMode::enabled) {
      CacheEntry entry;
      entry.key = s.chunk_keys[i];
      entry.value = s.chunk_values[i];
      entry.priority = d.losses[i];
      entry.source_position = s.chunk_positions[i];
      s.cache.insert(std::move(entry));
      trace.inserts += 1;
      trace.inserted_positions.push_back(pos);
    }
  }
  s.chunk_keys.clear();
  s.chunk_values.clear();
  s.chunk_positions.clear();
}

Tensor Model::layer_step_(int layer, const Tensor& x, int pos, CacheMode mode) {
  LayerParams& L = layers_[layer];
  LayerState& s = states_[layer];
  LayerTrace& trace = aux_.layers[layer];
  const int dh = cfg_.d_head();
  const int H = cfg_.n_heads;
  // keeps per-head key norms near unity so the fixed inner-loop rate stays in
  // the descent region
  const double kq_scale = 2.0 / std::sqrt(static_cast<double>(cfg_.d_model));

  if (mode == CacheMode::enabled && !L.gate.defined()) {
    throw std::runtime_error("cache enabled before gate parameters exist");
  }

  Tensor h = layer_norm(x, L.ln1_g, L.ln1_b);
  Tensor q = scale(vecmat(h, L.wq), kq_scale);
  Tensor k = scale(vecmat(h, L.wk), kq_scale);
  Tensor v = vecmat(h, L.wv);

  std::shared_ptr<const CacheSnapshot> snap;
  if (mode == CacheMode::enabled) snap = s.cache.snapshot();

  std::vector<Tensor> z_heads, c_heads, losses;
  z_heads.reserve(H);
  losses.reserve(H);
  std::vector<double> k_flat, v_flat;
  if (mode == CacheMode::enabled) {
    k_flat.reserve(static_cast<size_t>(H) * dh);
    v_flat.reserve(static_cast<size_t>(H) * dh);
  }

  for (int head = 0; head < H; ++head) {
    Tensor qh = rope(slice(q, head * dh, dh), pos, cfg_.rope_base);
    Tensor kh = rope(slice(k, head * dh, dh), pos, cfg_.rope_base);
    Tensor vh = slice(v, head * dh, dh);

    auto inner = ttt_inner_step(s.w_fast[head], kh, vh, cfg_.inner_lr);
    check_finite_or_diverged(inner.w_next, "fast weight", layer, pos);
    s.w_fast[head] = inner.w_next;
    losses.push_back(inner.loss);
    z_heads.push_back(matvec(s.w_fast[head], qh));

    if (mode == CacheMode::enabled) {
      c_heads.push_back(cache_attention_head(qh, snap, head));
      k_flat.insert(k_flat.end(), kh.data->begin(), kh.data->end());
      v_flat.insert(v_flat.end(), vh.data->begin(), vh.data->end());
    }
  }

  Tensor token_loss = mean_stack(losses);
  const double loss_val = token_loss.value();
  if (!std::isfinite(loss_val)) {
    throw DivergenceError("divergence: non-finite reconstruction loss at layer " +
                          std::to_string(layer) + " position " + std::to_string(pos));
  }

  Tensor t_out = vecmat(concat(z_heads), L.wo);
  Tensor fused;
  if (mode == CacheMode::enabled) {
    Tensor c_out = vecmat(concat(c_heads), L.wco);
    fused = fuse(t_out, c_out, L.gate, cfg_.alpha_max, H);
    trace.hit_mass.push_back(l2_of_difference(fused, t_out));
  } else {
    fused = t_out;
    trace.hit_mass.push_back(0.0);
  }

  Tensor x1 = add(x, fused);
  Tensor m = layer_norm(x1, L.ln2_g, L.ln2_b);
  Tensor mlp = add(vecmat(gelu(add(vecmat(m, L.mlp_w1), L.mlp_b1)), L.mlp_w2), L.mlp_b2);
  Tensor out = add(x1, mlp);

  // routing bookkeeping (flags land when the chunk completes)
  trace.token_loss.push_back(loss_val);
  trace.routed.push_back(0);
  trace.chunk_mean.push_back(0.0);
  trace.tau.push_back(s.router.tau());
  if (mode == CacheMode::enabled) {
    s.chunk_keys.push_back(std::move(k_flat));
    s.chunk_values.push_back(std::move(v_flat));
    s.chunk_positions.push_back(pos);
  }
  if (auto decision = s.router.push(loss_val)) {
    apply_decision_(layer, *decision, mode);
  }
  trace.cache_size.push_back(s.cache.size());
  return out;
}

Tensor Model::step(int token, CacheMode mode) {
  if (token < 0 || token >= cfg_.vocab_size) {
    throw std::runtime_error("token " + std::to_string(token) + " outside vocab [0," +
                             std::to_string(cfg_.vocab_size) + ")");
  }
  if (position_ >= cfg_.max_seq_len) {
    throw std::runtime_error("sequence exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  }
  const int pos = position_;
  Tensor x = embedding_row(embed_, token);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    x = layer_step_(l, x, pos, mode);
  }
  Tensor h = layer_norm(x, ln_f_g, ln_f_b);
  Tensor logits = vecmat(h, unembed_);
  position_ += 1;
  return logits;
}

void Model::finish_sequence(CacheMode mode) {
  for (int l = 0; l < cfg_.n_layers; ++l) {
    if (auto decision = states_[l].router.finish()) {
      apply_decision_(l, *decision, mode);
    }
  }
}

std::vector<Tensor> Model::forward(const std::vector<int>& tokens, CacheMode mode,
                                   bool reset_first) {
  if (reset_first) reset_state();
  std::vector<Tensor> logits;
  logits.reserve(tokens.size());
  for (int t : tokens) logits.push_back(step(t, mode));
  finish_sequence(mode);
  return logits;
}

Model Model::clone() const {
  Model copy(cfg_, init_seed_);
  auto src = params();
  auto dst = copy.params();
  for (size_t i = 0; i < src.size(); ++i) {
    *dst[i].second->data = *src[i].second->data;
  }
  copy.reset_state();
  return copy;
}

void Model::warm_start_wco_from_wo() {
  for (LayerParams& L : layers_) {
    *L.wco.data = *L.wo.data;
  }
}

Tensor sequence_nll(Model& m, const std::vector<int>& tokens, CacheMode mode, bool reset_first) {
  if (tokens.size() < 2) throw std::runtime_error("sequence_nll: need at least 2 tokens");
  auto logits = m.forward(tokens, mode, reset_first);
  std::vector<Tensor> losses;
  losses.reserve(tokens.size() - 1);
  for (size_t t = 0; t + 1 < tokens.size(); ++t) {
    losses.push_back(cross_entropy_logits(logits[t], tokens[t + 1]));
  }
  return mean_stack(losses);
}

bool Model::is_gate_or_retrieval_param(const std::string& name) {
  const auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with(".gate") || ends_with(".wco");
}

}  // namespace srttt
