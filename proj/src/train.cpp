#include "srttt/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "srttt/data.hpp"
#include "srttt/rng.hpp"

namespace srttt {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

StageMode stage_of(long step, const TrainConfig& cfg) {
  if (step < 1 || step > cfg.total_steps) {
    throw std::runtime_error("stage_of: step " + std::to_string(step) + " outside [1," +
                             std::to_string(cfg.total_steps) + "]");
  }
  return step <= cfg.stage2_start ? StageMode::stage1 : StageMode::stage2;
}

std::string metrics_json_line(const StepMetrics& m) {
  ordered_json j;
  j["v"] = 1;
  j["step"] = m.step;
  j["stage"] = m.stage;
  j["loss"] = m.loss;
  j["routed"] = m.routed;
  j["mean_alpha"] = m.mean_alpha;
  j["tau"] = m.tau;
  j["wall_ms"] = m.wall_ms;
  return j.dump();
}

StepMetrics parse_metrics_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  StepMetrics m;
  m.step = j.at("step").get<long>();
  m.stage = j.at("stage").get<int>();
  m.loss = j.at("loss").get<double>();
  m.routed = j.at("routed").get<std::vector<long>>();
  m.mean_alpha = j.at("mean_alpha").get<std::vector<double>>();
  m.tau = j.at("tau").get<std::vector<double>>();
  m.wall_ms = j.value("wall_ms", 0.0);
  return m;
}

std::string strip_wall_ms(const std::string& line) {
  auto j = nlohmann::ordered_json::parse(line);
  j.erase("wall_ms");
  return j.dump();
}

std::vector<int> build_training_sequence(uint64_t seed, long step, const TrainConfig& cfg,
                                         bool* has_needle, double* depth) {
  auto rs = rng::derive(seed, "data", static_cast<uint64_t>(step));
  const bool needle = rs.next_double() < cfg.needle_mix;
  if (has_needle) *has_needle = needle;
  if (needle) {
    const double d = rs.next_double();
    if (depth) *depth = d;
    auto sample = make_niah_sample(rng::mix(seed, "data-sample", static_cast<uint64_t>(step)), d,
                                   cfg.seq_len);
    return sample.tokens;
  }
  if (depth) *depth = -1.0;
  const std::string text =
      gen_corpus(rng::mix(seed, "data-bg", static_cast<uint64_t>(step)),
                 static_cast<size_t>(cfg.seq_len));
  return tokenize(text);
}

Trainer::Trainer(const RunConfig& cfg, std::string out_dir)
    : cfg_(cfg),
      out_dir_(std::move(out_dir)),
      model_(cfg.model, cfg.seed),
      opt_(OptimizerConfig{cfg.train.lr, cfg.train.beta1, cfg.train.beta2, cfg.train.eps,
                           cfg.train.weight_decay, cfg.train.clip_norm,
                           cfg.train.lr_warmup_steps}) {
  cfg_.validate();
  fs::create_directories(out_dir_);
}

std::string Trainer::metrics_path() const { return (fs::path(out_dir_) / "metrics.jsonl").string(); }
std::string Trainer::latest_checkpoint_path() const {
  return (fs::path(out_dir_) / "ckpt_latest.bin").string();
}
std::string Trainer::final_checkpoint_path() const {
  return (fs::path(out_dir_) / "ckpt_final.bin").string();
}

StepMetrics Trainer::train_step(long step) {
  const StageMode stage = stage_of(step, cfg_.train);
  const auto t0 = std::chrono::steady_clock::now();

  // first step of stage 2: retrieval projection warm start, gates untouched
  if (stage == StageMode::stage2 && step == cfg_.train.stage2_start + 1 &&
      cfg_.train.wco_init_from_wo) {
    model_.warm_start_wco_from_wo();
  }

  const auto tokens = build_training_sequence(cfg_.seed, step, cfg_.train);
  const CacheMode mode = stage == StageMode::stage2 ? CacheMode::enabled : CacheMode::disabled;

  tape_clear();
  model_.zero_grads();
  Tensor loss = sequence_nll(model_, tokens, mode);
  const double loss_val = loss.value();
  if (!std::isfinite(loss_val)) {
    std::ostringstream diag;
    diag << "divergence: non-finite loss at step " << step << "; per-layer mean L_t:";
    for (int l = 0; l < cfg_.model.n_layers; ++l) {
      const auto& tl = model_.aux().layers[l].token_loss;
      double mean = 0.0;
      for (double v : tl) mean += v;
      diag << " layer" << l << "=" << (tl.empty() ? 0.0 : mean / tl.size());
    }
    tape_clear();
    throw DivergenceError(diag.str());
  }
  backward(loss);
  tape_clear();

  std::vector<std::pair<std::string, Tensor*>> trainables;
  for (auto& [name, t] : model_.params()) {
    const bool gate_path = Model::is_gate_or_retrieval_param(name);
    if (stage == StageMode::stage1 ? !gate_path : gate_path) {
      trainables.emplace_back(name, t);
    }
  }
  opt_.step(trainables, step);

  StepMetrics m;
  m.step = step;
  m.stage = stage == StageMode::stage1 ? 1 : 2;
  m.loss = loss_val;
  for (int l = 0; l < cfg_.model.n_layers; ++l) {
    const auto& trace = model_.aux().layers[l];
    long routed = 0;
    for (char f : trace.routed) routed += f;
    m.routed.push_back(routed);
    m.mean_alpha.push_back(model_.mean_alpha(l));
    m.tau.push_back(model_.tau(l));
  }
  m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

void Trainer::flush_metrics_() const {
  const std::string tmp = metrics_path() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (const std::string& line : metric_lines_) out << line << "\n";
  }
  fs::rename(tmp, metrics_path());
}

void Trainer::save_(long step) {
  save_training_checkpoint(latest_checkpoint_path(), model_, opt_, step, cfg_);
  flush_metrics_();
}

bool Trainer::try_resume_() {
  if (!fs::exists(latest_checkpoint_path())) return false;
  const auto restored =
      restore_training_checkpoint(latest_checkpoint_path(), model_, opt_,
                                  /*verify_hash_against_current=*/true, &cfg_);
  step_done_ = restored.step;
  metric_lines_.clear();
  std::ifstream in(metrics_path());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (parse_metrics_line(line).step <= step_done_) metric_lines_.push_back(line);
  }
  return true;
}

std::string Trainer::run(std::ostream* progress, long session_step_cap) {
  const bool resumed = try_resume_();
  if (progress && resumed) {
    *progress << "resumed from step " << step_done_ << "\n";
  }
  if (progress && !resumed) {
    *progress << "training " << cfg_.train.total_steps << " steps ("
              << model_.parameter_count() << " parameters)\n";
  }
  long session_steps = 0;
  for (long step = step_done_ + 1; step <= cfg_.train.total_steps; ++step) {
    StepMetrics m = train_step(step);
    metric_lines_.push_back(metrics_json_line(m));
    step_done_ = step;
    session_steps += 1;
    if (progress && (step % 100 == 0 || step == 1 || step == cfg_.train.total_steps)) {
      *progress << "step " << step << "/" << cfg_.train.total_steps << " stage " << m.stage
                << " loss " << m.loss << "\n";
    }
    if (step % cfg_.train.checkpoint_every == 0) save_(step);
    if (session_step_cap > 0 && session_steps >= session_step_cap) break;
  }
  save_(step_done_);
  if (step_done_ == cfg_.train.total_steps) {
    save_training_checkpoint(final_checkpoint_path(), model_, opt_, step_done_, cfg_);
  }
  return final_checkpoint_path();
}

}  // namespace srttt
