#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "srttt/data.hpp"
#include "srttt/model.hpp"

namespace srttt {

struct DepthResult {
  double depth = 0.0;
  int samples = 0;
  int successes = 0;
  int captured = 0;            // samples where some layer cached the needle
  int captured_successes = 0;  // successes with the capture flag set
  double exact_match() const {
    return samples ? static_cast<double>(successes) / samples : 0.0;
  }
};

struct EvalReport {
  std::string model_tag;
  int seq_len = 0;
  std::vector<DepthResult> depths;
  double perplexity = 0.0;
  std::vector<double> mean_alpha;       // per layer
  std::vector<double> mean_occupancy;   // mean cache size at sequence end
  std::vector<double> routed_fraction;  // routed flags / tokens
};

struct SampleOutcome {
  bool success = false;
  bool needle_captured = false;
  std::string decoded;
};

// Feeds the sample's context and query, then greedily decodes 8 tokens and
// scores exact string equality against the needle code. State is reset first;
// nothing leaks across samples.
SampleOutcome run_niah_sample(Model& model, CacheMode mode, const NiahSample& sample);

// Depth sweep at n_samples per depth. Sample seeds derive from the eval
// stream, disjoint from training data streams by construction.
EvalReport exact_match_eval(Model& model, CacheMode mode, const std::vector<double>& depths,
                            int n_samples, int seq_len, uint64_t seed,
                            const std::string& model_tag);

// exp(mean next-token cross entropy) over a token stream.
double perplexity(Model& model, CacheMode mode, const std::vector<int>& tokens);
// same, over raw logit rows (independent of the model path)
double perplexity_from_rows(const std::vector<std::vector<double>>& logit_rows,
                            const std::vector<int>& targets);

// Standard protocol at factor x train_len without retraining. The model's
// max_seq_len must already accommodate the probe length.
EvalReport extrapolation_probe(Model& model, CacheMode mode, int train_len, int factor,
                               const std::vector<double>& depths, int n_samples, uint64_t seed,
                               const std::string& model_tag);

struct DiagnosticsResult {
  bool needle_captured = false;
  SampleOutcome outcome;
  ForwardAux trace;  // per-layer series copied from the instrumented pass
};

// Instrumented replay of one sample.
DiagnosticsResult diagnostics(Model& model, CacheMode mode, const NiahSample& sample);

// Per-token trace listing plus a cache dump per layer.
void print_diagnostics(std::ostream& os, Model& model, const DiagnosticsResult& d,
                       const NiahSample& sample);

}  // namespace srttt
