// srttt: train / evaluate / inspect a surprisal-routed test-time-training
// language model with a residual exact-attention cache.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "srttt/checkpoint.hpp"
#include "srttt/data.hpp"
#include "srttt/eval.hpp"
#include "srttt/report.hpp"
#include "srttt/rng.hpp"
#include "srttt/train.hpp"

namespace fs = std::filesystem;
using namespace srttt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonConfigArgs {
  std::string config_path;
  std::string preset = "desk";
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, CommonConfigArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--preset", args.preset, "preset when no --config is given (desk|paper)");
  cmd->add_option("--set", args.overrides, "override, e.g. --set train.lr=1e-4")
      ->take_all();
}

RunConfig resolve_config(const CommonConfigArgs& args) {
  if (!args.config_path.empty()) return RunConfig::load(args.config_path, args.overrides);
  return RunConfig::from_overrides(args.preset, args.overrides);
}

CacheMode mode_for_checkpoint(const std::string& mode_flag, const RunConfig& cfg, long step) {
  if (mode_flag == "enabled") return CacheMode::enabled;
  if (mode_flag == "disabled") return CacheMode::disabled;
  if (mode_flag != "auto") throw ConfigError("unknown --mode '" + mode_flag + "'");
  const bool stage2_trained =
      cfg.train.stage2_start < cfg.train.total_steps && step > cfg.train.stage2_start;
  return stage2_trained ? CacheMode::enabled : CacheMode::disabled;
}

void print_report(const EvalReport& r) {
  std::cout << "model=" << r.model_tag << " seq_len=" << r.seq_len << " perplexity="
            << r.perplexity << "\n";
  std::cout << "depth\tsamples\texact_match\tcaptured\n";
  for (const DepthResult& d : r.depths) {
    std::cout << d.depth << "\t" << d.samples << "\t" << d.exact_match() << "\t" << d.captured
              << "\n";
  }
  for (size_t l = 0; l < r.mean_alpha.size(); ++l) {
    std::cout << "layer " << l << ": mean_alpha=" << r.mean_alpha[l]
              << " mean_occupancy=" << r.mean_occupancy[l]
              << " routed_fraction=" << r.routed_fraction[l] << "\n";
  }
}

double held_out_perplexity(Model& model, CacheMode mode, const RunConfig& cfg) {
  const auto tokens = tokenize(
      gen_corpus(rng::mix(cfg.seed, "eval-ppl"), static_cast<size_t>(cfg.eval.perplexity_tokens)));
  const int cap = model.config().max_seq_len;
  if (static_cast<int>(tokens.size()) <= cap) return perplexity(model, mode, tokens);
  return perplexity(model, mode, std::vector<int>(tokens.begin(), tokens.begin() + cap));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"surprisal-routed TTT language model"};
  app.require_subcommand(1);

  // ---- train ----------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "run the two-stage curriculum");
  CommonConfigArgs train_cfg_args;
  add_config_options(train_cmd, train_cfg_args);
  std::string train_out = "runs/default";
  bool baseline = false;
  train_cmd->add_option("--out", train_out, "output directory (checkpoints, metrics)");
  train_cmd->add_flag("--baseline", baseline,
                      "stage-1-only run: pure TTT model, cache path never trained");

  // ---- eval -----------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "exact-match sweep + perplexity for a checkpoint");
  std::string eval_ckpt, eval_out = "eval_report", eval_mode = "auto", eval_format = "all";
  std::vector<double> eval_depths;
  int eval_samples = 0, eval_seq_len = 0;
  uint64_t eval_seed = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--out", eval_out, "report file prefix");
  eval_cmd->add_option("--mode", eval_mode, "cache mode: auto|enabled|disabled");
  eval_cmd->add_option("--format", eval_format, "report format: table|lines|plot|all");
  eval_cmd->add_option("--depths", eval_depths, "needle depths in [0,1]")->delimiter(',');
  eval_cmd->add_option("--samples", eval_samples, "samples per depth");
  eval_cmd->add_option("--seq-len", eval_seq_len, "evaluation sequence length");
  eval_cmd->add_option("--seed", eval_seed, "evaluation seed (default: config seed)");

  // ---- niah -----------------------------------------------------------------
  auto* niah_cmd =
      app.add_subcommand("niah", "depth sweep plus length-extrapolation probe");
  std::string niah_ckpt, niah_out = "niah_report", niah_mode = "auto";
  std::vector<double> niah_depths;
  int niah_samples = 0, niah_factor = 2;
  uint64_t niah_seed = 0;
  niah_cmd->add_option("--checkpoint", niah_ckpt, "checkpoint file")->required();
  niah_cmd->add_option("--out", niah_out, "report file prefix");
  niah_cmd->add_option("--mode", niah_mode, "cache mode: auto|enabled|disabled");
  niah_cmd->add_option("--depths", niah_depths, "needle depths in [0,1]")->delimiter(',');
  niah_cmd->add_option("--samples", niah_samples, "samples per depth");
  niah_cmd->add_option("--factor", niah_factor, "extrapolation length factor (default 2)");
  niah_cmd->add_option("--seed", niah_seed, "evaluation seed (default: config seed)");

  // ---- inspect-cache ----------------------------------------------------------
  auto* inspect_cmd =
      app.add_subcommand("inspect-cache", "replay one sample with a full routing trace");
  std::string ins_ckpt, ins_out, ins_mode = "auto";
  double ins_depth = 0.5;
  uint64_t ins_seed = 7;
  int ins_seq_len = 0;
  inspect_cmd->add_option("--checkpoint", ins_ckpt, "checkpoint file")->required();
  inspect_cmd->add_option("--depth", ins_depth, "needle depth");
  inspect_cmd->add_option("--seed", ins_seed, "sample seed");
  inspect_cmd->add_option("--seq-len", ins_seq_len, "sample length");
  inspect_cmd->add_option("--mode", ins_mode, "cache mode: auto|enabled|disabled");
  inspect_cmd->add_option("--out", ins_out, "write the trace to a file instead of stdout");

  // ---- plot -------------------------------------------------------------------
  auto* plot_cmd = app.add_subcommand("plot", "render training curves from a metrics log");
  std::string plot_metrics, plot_out = "curves.svg";
  plot_cmd->add_option("--metrics", plot_metrics, "metrics.jsonl from train")->required();
  plot_cmd->add_option("--out", plot_out, "output svg path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train_cmd) {
      RunConfig cfg = resolve_config(train_cfg_args);
      if (baseline) {
        cfg.train.stage2_start = cfg.train.total_steps;
        cfg.validate();
      }
      Trainer trainer(cfg, train_out);
      const std::string final_path = trainer.run(&std::cout);
      std::cout << "final checkpoint: " << final_path << "\n";
      std::cout << "metrics log: " << trainer.metrics_path() << "\n";
      return kExitOk;
    }

    if (*eval_cmd) {
      RunConfig cfg;
      long step = 0;
      Model model = load_model_for_eval(eval_ckpt, /*max_seq_len_override=*/0, &cfg, &step);
      const CacheMode mode = mode_for_checkpoint(eval_mode, cfg, step);
      const auto depths = eval_depths.empty() ? cfg.eval.depths : eval_depths;
      const int samples = eval_samples > 0 ? eval_samples : cfg.eval.samples_per_depth;
      const int seq_len = eval_seq_len > 0 ? eval_seq_len : cfg.eval.seq_len;
      const uint64_t seed = eval_seed ? eval_seed : cfg.seed;
      if (seq_len > model.config().max_seq_len) {
        model = load_model_for_eval(eval_ckpt, seq_len, &cfg, &step);
      }
      EvalReport report = exact_match_eval(model, mode, depths, samples, seq_len, seed,
                                           fs::path(eval_ckpt).stem().string());
      report.perplexity = held_out_perplexity(model, mode, cfg);
      auto files = emit_report(report, parse_report_format(eval_format), eval_out);
      print_report(report);
      for (const auto& f : files) std::cout << "wrote " << f << "\n";
      return kExitOk;
    }

    if (*niah_cmd) {
      RunConfig cfg;
      long step = 0;
      {
        Model probe_cfg_model = load_model_for_eval(niah_ckpt, 0, &cfg, &step);
      }
      const auto depths = niah_depths.empty() ? cfg.eval.depths : niah_depths;
      const int samples = niah_samples > 0 ? niah_samples : cfg.eval.samples_per_depth;
      const int seq_len = cfg.eval.seq_len;
      const uint64_t seed = niah_seed ? niah_seed : cfg.seed;

      Model model = load_model_for_eval(niah_ckpt, std::max(seq_len, seq_len * niah_factor));
      const CacheMode mode = mode_for_checkpoint(niah_mode, cfg, step);
      EvalReport base = exact_match_eval(model, mode, depths, samples, seq_len, seed,
                                         fs::path(niah_ckpt).stem().string());
      base.perplexity = held_out_perplexity(model, mode, cfg);
      auto files = emit_report(base, ReportFormat::all, niah_out);
      print_report(base);

      if (niah_factor > 1) {
        EvalReport probe = extrapolation_probe(model, mode, seq_len, niah_factor, depths, samples,
                                               seed, fs::path(niah_ckpt).stem().string());
        auto probe_files =
            emit_report(probe, ReportFormat::all, niah_out + "_x" + std::to_string(niah_factor));
        print_report(probe);
        files.insert(files.end(), probe_files.begin(), probe_files.end());
      }
      for (const auto& f : files) std::cout << "wrote " << f << "\n";
      return kExitOk;
    }

    if (*inspect_cmd) {
      RunConfig cfg;
      long step = 0;
      Model model = load_model_for_eval(ins_ckpt, 0, &cfg, &step);
      const CacheMode mode = mode_for_checkpoint(ins_mode, cfg, step);
      const int seq_len = ins_seq_len > 0 ? ins_seq_len : cfg.eval.seq_len;
      const NiahSample sample = make_niah_sample(ins_seed, ins_depth, seq_len);
      const DiagnosticsResult diag = diagnostics(model, mode, sample);
      if (ins_out.empty()) {
        dump_sample(std::cout, sample, ins_seed);
        print_diagnostics(std::cout, model, diag, sample);
      } else {
        std::ofstream out(ins_out);
        if (!out) throw std::runtime_error("cannot write " + ins_out);
        dump_sample(out, sample, ins_seed);
        print_diagnostics(out, model, diag, sample);
        std::cout << "wrote " << ins_out << "\n";
      }
      return kExitOk;
    }

    if (*plot_cmd) {
      std::ifstream in(plot_metrics);
      if (!in) throw std::runtime_error("cannot open metrics log " + plot_metrics);
      std::vector<std::string> lines;
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
      }
      write_training_curves_svg(plot_out, lines);
      std::cout << "wrote " << plot_out << "\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
