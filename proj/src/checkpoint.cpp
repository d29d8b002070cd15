#include "srttt/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "srttt/rng.hpp"

namespace srttt {

namespace {

constexpr char kMagic[8] = {'S', 'R', 'T', 'T', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("checkpoint: truncated stream");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& is) {
  const uint32_t n = take<uint32_t>(is);
  if (n > (64u << 20)) throw CheckpointError("checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw CheckpointError("checkpoint: truncated stream");
  return s;
}

}  // namespace

void write_checkpoint_file(const std::string& path, const CheckpointData& data) {
  std::ostringstream body;
  put<uint32_t>(body, kVersion);
  put<uint64_t>(body, data.config.config_hash());
  put<int64_t>(body, data.step);
  put_string(body, data.config.to_text());
  put<uint32_t>(body, static_cast<uint32_t>(data.tensors.size()));
  for (const auto& [name, tensor] : data.tensors) {
    put_string(body, name);
    write_tensor(body, tensor);
  }
  const std::string payload = body.str();
  const uint64_t checksum = rng::fnv1a(payload.data(), payload.size());

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    put<uint64_t>(out, checksum);
    if (!out) throw CheckpointError("checkpoint: write failed for " + path);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() < sizeof(kMagic) + sizeof(uint64_t)) {
    throw CheckpointError("checkpoint: file too short: " + path);
  }
  if (std::memcmp(raw.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("checkpoint: bad magic in " + path);
  }
  const std::string payload = raw.substr(sizeof(kMagic), raw.size() - sizeof(kMagic) - 8);
  uint64_t stored_checksum;
  std::memcpy(&stored_checksum, raw.data() + raw.size() - 8, 8);
  if (rng::fnv1a(payload.data(), payload.size()) != stored_checksum) {
    throw CheckpointError("checkpoint: checksum mismatch (corrupt file): " + path);
  }

  std::istringstream body(payload);
  const uint32_t version = take<uint32_t>(body);
  if (version != kVersion) {
    throw CheckpointError("checkpoint: version " + std::to_string(version) + " unsupported");
  }
  const uint64_t stored_hash = take<uint64_t>(body);
  CheckpointData data;
  data.step = take<int64_t>(body);
  const std::string config_text = take_string(body);
  {
    // reparse the stored canonical config
    std::istringstream cfg_in(config_text);
    std::string line;
    while (std::getline(cfg_in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      if (key == "preset") continue;  // stored values already reflect the preset
      data.config.apply_kv(key, trim(line.substr(eq + 1)));
    }
  }
  if (data.config.config_hash() != stored_hash) {
    throw CheckpointError("checkpoint: stored config does not match its hash: " + path);
  }
  const uint32_t n = take<uint32_t>(body);
  for (uint32_t i = 0; i < n; ++i) {
    const std::string name = take_string(body);
    data.tensors.emplace(name, read_tensor(body));
  }
  return data;
}

void save_training_checkpoint(const std::string& path, Model& model, const AdamW& opt,
                              long step, const RunConfig& cfg) {
  CheckpointData data;
  data.config = cfg;
  data.step = step;
  for (auto& [name, t] : model.params()) {
    data.tensors.emplace(name, t->detached_copy());
  }
  for (const auto& [name, slot] : opt.slots()) {
    data.tensors.emplace("opt.m." + name,
                         Tensor::from({static_cast<int>(slot.m.size())}, slot.m));
    data.tensors.emplace("opt.v." + name,
                         Tensor::from({static_cast<int>(slot.v.size())}, slot.v));
    data.tensors.emplace("opt.t." + name, Tensor::scalar(static_cast<double>(slot.t)));
  }
  write_checkpoint_file(path, data);
}

RestoredTraining restore_training_checkpoint(const std::string& path, Model& model, AdamW& opt,
                                             bool verify_hash_against_current,
                                             const RunConfig* current) {
  CheckpointData data = read_checkpoint_file(path);
  if (verify_hash_against_current && current &&
      current->config_hash() != data.config.config_hash()) {
    throw CheckpointError("checkpoint: config hash mismatch; refusing to resume from " + path);
  }
  for (auto& [name, t] : model.params()) {
    const auto it = data.tensors.find(name);
    if (it == data.tensors.end()) throw CheckpointError("checkpoint: missing tensor " + name);
    if (it->second.shape != t->shape) {
      throw CheckpointError("checkpoint: shape mismatch for " + name);
    }
    *t->data = *it->second.data;
    t->zero_grad_();
  }
  opt.slots().clear();
  for (auto& [name, tensor] : data.tensors) {
    if (name.rfind("opt.m.", 0) == 0) {
      opt.slots()[name.substr(6)].m = *tensor.data;
    } else if (name.rfind("opt.v.", 0) == 0) {
      opt.slots()[name.substr(6)].v = *tensor.data;
    } else if (name.rfind("opt.t.", 0) == 0) {
      opt.slots()[name.substr(6)].t = static_cast<long>(tensor.value());
    }
  }
  model.reset_state();
  return {data.config, data.step};
}

Model load_model_for_eval(const std::string& path, int max_seq_len_override,
                          RunConfig* out_config, long* out_step) {
  CheckpointData data = read_checkpoint_file(path);
  ModelConfig mc = data.config.model;
  if (max_seq_len_override > 0) mc.max_seq_len = max_seq_len_override;
  Model model(mc, data.config.seed);
  for (auto& [name, t] : model.params()) {
    const auto it = data.tensors.find(name);
    if (it == data.tensors.end()) throw CheckpointError("checkpoint: missing tensor " + name);
    if (it->second.shape != t->shape) {
      throw CheckpointError("checkpoint: shape mismatch for " + name);
    }
    *t->data = *it->second.data;
  }
  model.reset_state();
  if (out_config) *out_config = data.config;
  if (out_step) *out_step = data.step;
  return model;
}

}  // namespace srttt
