#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "srttt/checkpoint.hpp"
#include "srttt/config.hpp"
#include "srttt/model.hpp"
#include "srttt/optimizer.hpp"

namespace srttt {

enum class StageMode { stage1, stage2 };

// Stage 1 through stage2_start inclusive; stage 2 afterwards. Throws for
// steps outside [1, total_steps].
StageMode stage_of(long step, const TrainConfig& cfg);

struct StepMetrics {
  long step = 0;
  int stage = 1;
  double loss = 0.0;
  std::vector<long> routed;        // routed-flag count per layer
  std::vector<double> mean_alpha;  // clamped gate mean per layer
  std::vector<double> tau;         // threshold at sequence end per layer
  double wall_ms = 0.0;            // the only nondeterministic field
};

// One line-delimited record per step; wall_ms last. Fields other than
// wall_ms are bitwise reproducible for a fixed seed.
std::string metrics_json_line(const StepMetrics& m);
StepMetrics parse_metrics_line(const std::string& line);
// line with wall_ms removed (determinism comparisons)
std::string strip_wall_ms(const std::string& line);

// Training batch for a step: background corpus, with a needle sample mixed in
// at needle_mix probability. Pure function of (seed, step).
std::vector<int> build_training_sequence(uint64_t seed, long step, const TrainConfig& cfg,
                                         bool* has_needle = nullptr, double* depth = nullptr);

class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::string out_dir);

  // Executes (or resumes) the curriculum. session_step_cap > 0 stops this
  // session early (checkpointed), e.g. for interruption tests. Returns the
  // final checkpoint path once total_steps are done.
  std::string run(std::ostream* progress = nullptr, long session_step_cap = 0);

  StepMetrics train_step(long step);

  Model& model() { return model_; }
  AdamW& optimizer() { return opt_; }
  const RunConfig& config() const { return cfg_; }
  long completed_steps() const { return step_done_; }
  const std::vector<std::string>& metric_lines() const { return metric_lines_; }

  std::string metrics_path() const;
  std::string latest_checkpoint_path() const;
  std::string final_checkpoint_path() const;

 private:
  void save_(long step);
  bool try_resume_();
  void flush_metrics_() const;

  RunConfig cfg_;
  std::string out_dir_;
  Model model_;
  AdamW opt_;
  long step_done_ = 0;
  std::vector<std::string> metric_lines_;
};

}  // namespace srttt
