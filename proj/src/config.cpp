#include "srttt/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "srttt/rng.hpp"

namespace srttt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

long parse_long(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const long out = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_double(key, item));
  }
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a list, got '" + v + "'");
  return out;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("config: " + msg);
}

}  // namespace

void ModelConfig::validate() const {
  require(n_layers > 0, "model.n_layers must be positive");
  require(d_model > 0, "model.d_model must be positive");
  require(n_heads > 0 && d_model % n_heads == 0, "model.d_model must be divisible by model.n_heads");
  require(d_head() % 2 == 0, "head dim must be even for rotary embedding");
  require(vocab_size > 0 && vocab_size <= 256, "model.vocab_size must be in (0,256]");
  require(max_seq_len > 0, "model.max_seq_len must be positive");
  require(inner_lr > 0.0, "model.inner_lr must be positive");
  require(rope_base > 1.0, "model.rope_base must exceed 1");
  require(cache_capacity > 0, "model.cache_capacity must be positive");
  require(alpha_max > 0.0 && alpha_max <= 1.0, "model.alpha_max must be in (0,1]");
  require(alpha_init >= 0.0 && alpha_init <= alpha_max, "model.alpha_init must be in [0,alpha_max]");
  require(mlp_ratio > 0, "model.mlp_ratio must be positive");
  require(router.percentile > 0.0 && router.percentile < 1.0, "model.percentile must be in (0,1)");
  require(router.ema_decay > 0.0 && router.ema_decay < 1.0, "model.ema_decay must be in (0,1)");
  require(router.chunk_size > 0, "model.chunk_size must be positive");
  require(router.chunk_factor > 0.0 && router.chunk_factor < 1.0,
          "model.chunk_factor must be in (0,1)");
  require(router.warmup_tokens >= 0, "model.warmup_tokens must be non-negative");
}

void TrainConfig::validate() const {
  require(total_steps > 0, "train.total_steps must be positive");
  // stage2_start == total_steps is the stage-1-only baseline
  require(stage2_start > 0 && stage2_start <= total_steps,
          "train.stage2_start must be in (0, total_steps]");
  require(lr > 0.0, "train.lr must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0, "train.beta1 must be in [0,1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "train.beta2 must be in [0,1)");
  require(eps > 0.0, "train.eps must be positive");
  require(weight_decay >= 0.0, "train.weight_decay must be non-negative");
  require(clip_norm > 0.0, "train.clip_norm must be positive");
  require(lr_warmup_steps >= 0, "train.lr_warmup_steps must be non-negative");
  require(seq_len > 0, "train.seq_len must be positive");
  require(needle_mix >= 0.0 && needle_mix <= 1.0, "train.needle_mix must be in [0,1]");
  require(checkpoint_every > 0, "train.checkpoint_every must be positive");
}

void EvalConfig::validate() const {
  require(!depths.empty(), "eval.depths must not be empty");
  for (double d : depths) require(d >= 0.0 && d <= 1.0, "eval.depths entries must be in [0,1]");
  require(samples_per_depth > 0, "eval.samples must be positive");
  require(seq_len > 0, "eval.seq_len must be positive");
  require(perplexity_tokens > 1, "eval.perplexity_tokens must exceed 1");
}

RunConfig RunConfig::from_preset(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "desk") {
    // defaults above are the desk preset
  } else if (name == "paper") {
    c.model.n_layers = 4;
    c.model.d_model = 256;
    c.model.n_heads = 8;
    c.model.max_seq_len = 2048;
    c.model.cache_capacity = 256;
    c.model.router.chunk_size = 64;
    c.model.router.warmup_tokens = 128;
    c.train.total_steps = 10000;
    c.train.stage2_start = 7000;
    c.train.seq_len = 2048;
    c.train.checkpoint_every = 1000;
    c.eval.seq_len = 2048;
  } else {
    throw ConfigError("config: unknown preset '" + name + "' (expected desk or paper)");
  }
  return c;
}

void RunConfig::apply_kv(const std::string& key, const std::string& value) {
  if (key == "preset") {
    // preset resets every field it defines, so it must come first in a file
    *this = from_preset(value);
    return;
  }
  if (key == "seed") {
    seed = static_cast<uint64_t>(parse_long(key, value));
    return;
  }

  static const std::map<std::string, std::function<void(RunConfig&, const std::string&)>> setters = {
      {"model.n_layers", [](RunConfig& c, const std::string& v) { c.model.n_layers = static_cast<int>(parse_long("model.n_layers", v)); }},
      {"model.d_model", [](RunConfig& c, const std::string& v) { c.model.d_model = static_cast<int>(parse_long("model.d_model", v)); }},
      {"model.n_heads", [](RunConfig& c, const std::string& v) { c.model.n_heads = static_cast<int>(parse_long("model.n_heads", v)); }},
      {"model.vocab_size", [](RunConfig& c, const std::string& v) { c.model.vocab_size = static_cast<int>(parse_long("model.vocab_size", v)); }},
      {"model.max_seq_len", [](RunConfig& c, const std::string& v) { c.model.max_seq_len = static_cast<int>(parse_long("model.max_seq_len", v)); }},
      {"model.inner_lr", [](RunConfig& c, const std::string& v) { c.model.inner_lr = parse_double("model.inner_lr", v); }},
      {"model.rope_base", [](RunConfig& c, const std::string& v) { c.model.rope_base = parse_double("model.rope_base", v); }},
      {"model.cache_capacity", [](RunConfig& c, const std::string& v) { c.model.cache_capacity = static_cast<int>(parse_long("model.cache_capacity", v)); }},
      {"model.alpha_max", [](RunConfig& c, const std::string& v) { c.model.alpha_max = parse_double("model.alpha_max", v); }},
      {"model.alpha_init", [](RunConfig& c, const std::string& v) { c.model.alpha_init = parse_double("model.alpha_init", v); }},
      {"model.mlp_ratio", [](RunConfig& c, const std::string& v) { c.model.mlp_ratio = static_cast<int>(parse_long("model.mlp_ratio", v)); }},
      {"model.percentile", [](RunConfig& c, const std::string& v) { c.model.router.percentile = parse_double("model.percentile", v); }},
      {"model.ema_decay", [](RunConfig& c, const std::string& v) { c.model.router.ema_decay = parse_double("model.ema_decay", v); }},
      {"model.chunk_size", [](RunConfig& c, const std::string& v) { c.model.router.chunk_size = static_cast<int>(parse_long("model.chunk_size", v)); }},
      {"model.chunk_factor", [](RunConfig& c, const std::string& v) { c.model.router.chunk_factor = parse_double("model.chunk_factor", v); }},
      {"model.warmup_tokens", [](RunConfig& c, const std::string& v) { c.model.router.warmup_tokens = static_cast<int>(parse_long("model.warmup_tokens", v)); }},
      {"train.total_steps", [](RunConfig& c, const std::string& v) { c.train.total_steps = parse_long("train.total_steps", v); }},
      {"train.stage2_start", [](RunConfig& c, const std::string& v) { c.train.stage2_start = parse_long("train.stage2_start", v); }},
      {"train.lr", [](RunConfig& c, const std::string& v) { c.train.lr = parse_double("train.lr", v); }},
      {"train.beta1", [](RunConfig& c, const std::string& v) { c.train.beta1 = parse_double("train.beta1", v); }},
      {"train.beta2", [](RunConfig& c, const std::string& v) { c.train.beta2 = parse_double("train.beta2", v); }},
      {"train.eps", [](RunConfig& c, const std::string& v) { c.train.eps = parse_double("train.eps", v); }},
      {"train.weight_decay", [](RunConfig& c, const std::string& v) { c.train.weight_decay = parse_double("train.weight_decay", v); }},
      {"train.clip_norm", [](RunConfig& c, const std::string& v) { c.train.clip_norm = parse_double("train.clip_norm", v); }},
      {"train.lr_warmup_steps", [](RunConfig& c, const std::string& v) { c.train.lr_warmup_steps = parse_long("train.lr_warmup_steps", v); }},
      {"train.seq_len", [](RunConfig& c, const std::string& v) { c.train.seq_len = static_cast<int>(parse_long("train.seq_len", v)); }},
      {"train.needle_mix", [](RunConfig& c, const std::string& v) { c.train.needle_mix = parse_double("train.needle_mix", v); }},
      {"train.checkpoint_every", [](RunConfig& c, const std::string& v) { c.train.checkpoint_every = parse_long("train.checkpoint_every", v); }},
      {"train.wco_init_from_wo", [](RunConfig& c, const std::string& v) { c.train.wco_init_from_wo = parse_bool("train.wco_init_from_wo", v); }},
      {"eval.depths", [](RunConfig& c, const std::string& v) { c.eval.depths = parse_double_list("eval.depths", v); }},
      {"eval.samples", [](RunConfig& c, const std::string& v) { c.eval.samples_per_depth = static_cast<int>(parse_long("eval.samples", v)); }},
      {"eval.seq_len", [](RunConfig& c, const std::string& v) { c.eval.seq_len = static_cast<int>(parse_long("eval.seq_len", v)); }},
      {"eval.perplexity_tokens", [](RunConfig& c, const std::string& v) { c.eval.perplexity_tokens = static_cast<int>(parse_long("eval.perplexity_tokens", v)); }},
  };

  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second(*this, value);
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  eval.validate();
  require(train.seq_len <= model.max_seq_len, "train.seq_len must not exceed model.max_seq_len");
}

RunConfig RunConfig::from_overrides(const std::string& preset,
                                    const std::vector<std::string>& overrides) {
  RunConfig c = from_preset(preset);
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError("config: override '" + ov + "' is not key=value");
    c.apply_kv(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
  const std::string resolved = resolve_config_path(path);
  std::ifstream in(resolved);
  if (!in) throw ConfigError("config: cannot open file '" + path + "'");
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: " + path + ":" + std::to_string(lineno) + " is not key = value");
    }
    c.apply_kv(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError("config: override '" + ov + "' is not key=value");
    c.apply_kv(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  c.validate();
  return c;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "preset = " << preset << "\n";
  os << "seed = " << seed << "\n";
  os << "model.n_layers = " << model.n_layers << "\n";
  os << "model.d_model = " << model.d_model << "\n";
  os << "model.n_heads = " << model.n_heads << "\n";
  os << "model.vocab_size = " << model.vocab_size << "\n";
  os << "model.max_seq_len = " << model.max_seq_len << "\n";
  os << "model.inner_lr = " << model.inner_lr << "\n";
  os << "model.rope_base = " << model.rope_base << "\n";
  os << "model.cache_capacity = " << model.cache_capacity << "\n";
  os << "model.alpha_max = " << model.alpha_max << "\n";
  os << "model.alpha_init = " << model.alpha_init << "\n";
  os << "model.mlp_ratio = " << model.mlp_ratio << "\n";
  os << "model.percentile = " << model.router.percentile << "\n";
  os << "model.ema_decay = " << model.router.ema_decay << "\n";
  os << "model.chunk_size = " << model.router.chunk_size << "\n";
  os << "model.chunk_factor = " << model.router.chunk_factor << "\n";
  os << "model.warmup_tokens = " << model.router.warmup_tokens << "\n";
  os << "train.total_steps = " << train.total_steps << "\n";
  os << "train.stage2_start = " << train.stage2_start << "\n";
  os << "train.lr = " << train.lr << "\n";
  os << "train.beta1 = " << train.beta1 << "\n";
  os << "train.beta2 = " << train.beta2 << "\n";
  os << "train.eps = " << train.eps << "\n";
  os << "train.weight_decay = " << train.weight_decay << "\n";
  os << "train.clip_norm = " << train.clip_norm << "\n";
  os << "train.lr_warmup_steps = " << train.lr_warmup_steps << "\n";
  os << "train.seq_len = " << train.seq_len << "\n";
  os << "train.needle_mix = " << train.needle_mix << "\n";
  os << "train.checkpoint_every = " << train.checkpoint_every << "\n";
  os << "train.wco_init_from_wo = " << (train.wco_init_from_wo ? "true" : "false") << "\n";
  os << "eval.depths = ";
  for (size_t i = 0; i < eval.depths.size(); ++i) os << (i ? "," : "") << eval.depths[i];
  os << "\n";
  os << "eval.samples = " << eval.samples_per_depth << "\n";
  os << "eval.seq_len = " << eval.seq_len << "\n";
  os << "eval.perplexity_tokens = " << eval.perplexity_tokens << "\n";
  return os.str();
}

uint64_t RunConfig::config_hash() const {
  // hash only what shapes the training trajectory: model + train + seed
  std::ostringstream os;
  os.precision(17);
  os << seed << "|" << model.n_layers << "|" << model.d_model << "|" << model.n_heads << "|"
     << model.vocab_size << "|" << model.max_seq_len << "|" << model.inner_lr << "|"
     << model.rope_base << "|" << model.cache_capacity << "|" << model.alpha_max << "|"
     << model.alpha_init << "|" << model.mlp_ratio << "|" << model.router.percentile << "|"
     << model.router.ema_decay << "|" << model.router.chunk_size << "|"
     << model.router.chunk_factor << "|" << model.router.warmup_tokens << "|"
     << train.total_steps << "|" << train.stage2_start << "|" << train.lr << "|" << train.beta1
     << "|" << train.beta2 << "|" << train.eps << "|" << train.weight_decay << "|"
     << train.clip_norm << "|" << train.lr_warmup_steps << "|" << train.seq_len << "|"
     << train.needle_mix << "|" << train.wco_init_from_wo;
  const std::string s = os.str();
  return rng::fnv1a(s.data(), s.size());
}

std::string resolve_config_path(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::exists(path)) return path;
  if (!fs::path(path).is_absolute()) {
    if (const char* dir = std::getenv("SRTTT_CONFIG_DIR")) {
      const fs::path alt = fs::path(dir) / path;
      if (fs::exists(alt)) return alt.string();
    }
  }
  return path;  // caller reports the open failure
}

}  // namespace srttt
