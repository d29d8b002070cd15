#include "srttt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "srttt/rng.hpp"

namespace srttt {

namespace {

int argmax(const Tensor& logits) {
  const auto& v = *logits.data;
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

bool captured_needle(const Model& model, const NiahSample& sample) {
  for (const LayerTrace& trace : model.aux().layers) {
    for (int pos : trace.inserted_positions) {
      if (pos >= sample.needle_begin && pos < sample.needle_end) return true;
    }
  }
  return false;
}

}  // namespace

SampleOutcome run_niah_sample(Model& model, CacheMode mode, const NiahSample& sample) {
  NoGradGuard ng;
  model.reset_state();
  Tensor logits;
  for (int t = 0; t < sample.answer_begin; ++t) {
    logits = model.step(sample.tokens[t], mode);
  }
  SampleOutcome out;
  std::vector<int> decoded;
  for (int i = 0; i < kNeedleCodeLen; ++i) {
    const int tok = argmax(logits);
    decoded.push_back(tok);
    logits = model.step(tok, mode);
  }
  model.finish_sequence(mode);
  out.needle_captured = captured_needle(model, sample);
  bool in_range = true;
  for (int t : decoded) in_range = in_range && t >= 0 && t < kVocabSize;
  if (!in_range) {
    out.success = false;  // malformed decode scores zero, never aborts
    return out;
  }
  out.decoded = detokenize(decoded);
  out.success = out.decoded == sample.needle_code;
  return out;
}

EvalReport exact_match_eval(Model& model, CacheMode mode, const std::vector<double>& depths,
                            int n_samples, int seq_len, uint64_t seed,
                            const std::string& model_tag) {
  EvalReport report;
  report.model_tag = model_tag;
  report.seq_len = seq_len;
  const int n_layers = model.config().n_layers;
  std::vector<double> occupancy_sum(n_layers, 0.0);
  std::vector<double> routed_sum(n_layers, 0.0);
  long total_sequences = 0;

  for (size_t di = 0; di < depths.size(); ++di) {
    DepthResult dr;
    dr.depth = depths[di];
    dr.samples = n_samples;
    for (int i = 0; i < n_samples; ++i) {
      const uint64_t sample_seed =
          rng::mix(seed, "eval-sample", di * 1000003ull + static_cast<uint64_t>(i));
      const NiahSample sample = make_niah_sample(sample_seed, depths[di], seq_len);
      const SampleOutcome out = run_niah_sample(model, mode, sample);
      dr.successes += out.success;
      dr.captured += out.needle_captured;
      dr.captured_successes += (out.success && out.needle_captured);
      for (int l = 0; l < n_layers; ++l) {
        const LayerTrace& trace = model.aux().layers[l];
        occupancy_sum[l] += trace.cache_size.empty() ? 0 : trace.cache_size.back();
        double routed = 0;
        for (char f : trace.routed) routed += f;
        routed_sum[l] += routed / static_cast<double>(trace.routed.size());
      }
      total_sequences += 1;
    }
    report.depths.push_back(dr);
  }

  for (int l = 0; l < n_layers; ++l) {
    report.mean_alpha.push_back(model.mean_alpha(l));
    report.mean_occupancy.push_back(occupancy_sum[l] / static_cast<double>(total_sequences));
    report.routed_fraction.push_back(routed_sum[l] / static_cast<double>(total_sequences));
  }
  return report;
}

double perplexity(Model& model, CacheMode mode, const std::vector<int>& tokens) {
  if (tokens.size() < 2) throw std::runtime_error("perplexity: need at least 2 tokens");
  NoGradGuard ng;
  model.reset_state();
  double nll = 0.0;
  for (size_t t = 0; t + 1 < tokens.size(); ++t) {
    Tensor logits = model.step(tokens[t], mode);
    const auto& z = *logits.data;
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    nll += std::log(sum) + mx - z[static_cast<size_t>(tokens[t + 1])];
  }
  model.finish_sequence(mode);
  return std::exp(nll / static_cast<double>(tokens.size() - 1));
}

double perplexity_from_rows(const std::vector<std::vector<double>>& logit_rows,
                            const std::vector<int>& targets) {
  if (logit_rows.size() != targets.size() || logit_rows.empty()) {
    throw std::runtime_error("perplexity_from_rows: rows and targets must align");
  }
  double nll = 0.0;
  for (size_t i = 0; i < logit_rows.size(); ++i) {
    const auto& z = logit_rows[i];
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    nll += std::log(sum) + mx - z[static_cast<size_t>(targets[i])];
  }
  return std::exp(nll / static_cast<double>(logit_rows.size()));
}

EvalReport extrapolation_probe(Model& model, CacheMode mode, int train_len, int factor,
                               const std::vector<double>& depths, int n_samples, uint64_t seed,
                               const std::string& model_tag) {
  if (factor < 1) throw std::runtime_error("extrapolation_probe: factor must be >= 1");
  const int probe_len = train_len * factor;
  if (probe_len > model.config().max_seq_len) {
    throw std::runtime_error("extrapolation_probe: model max_seq_len " +
                             std::to_string(model.config().max_seq_len) +
                             " cannot hold probe length " + std::to_string(probe_len));
  }
  return exact_match_eval(model, mode, depths, n_samples, probe_len, seed,
                          model_tag + "@x" + std::to_string(factor));
}

DiagnosticsResult diagnostics(Model& model, CacheMode mode, const NiahSample& sample) {
  DiagnosticsResult d;
  d.outcome = run_niah_sample(model, mode, sample);
  d.needle_captured = d.outcome.needle_captured;
  d.trace = model.aux();
  return d;
}

void print_diagnostics(std::ostream& os, Model& model, const DiagnosticsResult& d,
                       const NiahSample& sample) {
  os << "code=" << sample.needle_code << " decoded=" << (d.outcome.decoded.empty() ? "-" : d.outcome.decoded)
     << " exact_match=" << (d.outcome.success ? 1 : 0)
     << " needle_captured=" << (d.needle_captured ? 1 : 0) << "\n";
  const int n_layers = static_cast<int>(d.trace.layers.size());
  for (int l = 0; l < n_layers; ++l) {
    const LayerTrace& t = d.trace.layers[l];
    os << "# layer " << l << ": inserts=" << t.inserts << " final_tau=" << (t.tau.empty() ? 0.0 : t.tau.back())
       << "\n";
    os << "pos\tloss\tchunk\ttau\trouted\toccupancy\thit_mass\n";
    for (size_t p = 0; p < t.token_loss.size(); ++p) {
      os << p << "\t" << t.token_loss[p] << "\t" << t.chunk_mean[p] << "\t" << t.tau[p] << "\t"
         << static_cast<int>(t.routed[p]) << "\t" << t.cache_size[p] << "\t" << t.hit_mass[p]
         << "\n";
    }
    os << "# layer " << l << " cache:\n";
    model.layer_cache(l).dump(os);
  }
}

}  // namespace srttt
