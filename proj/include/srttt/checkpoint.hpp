#pragma once

#include <map>
#include <string>

#include "srttt/autograd.hpp"
#include "srttt/config.hpp"
#include "srttt/model.hpp"
#include "srttt/optimizer.hpp"

namespace srttt {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Versioned binary container: magic, version, config hash/text, step counter,
// named little-endian tensor records, trailing fnv64 checksum over the body.
struct CheckpointData {
  RunConfig config;
  long step = 0;
  std::map<std::string, Tensor> tensors;
};

void write_checkpoint_file(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint_file(const std::string& path);

// Conveniences bundling model parameters and optimizer slots.
void save_training_checkpoint(const std::string& path, Model& model, const AdamW& opt,
                              long step, const RunConfig& cfg);

struct RestoredTraining {
  RunConfig config;
  long step = 0;
};
// Restores parameters and optimizer slots in place; shapes must match.
RestoredTraining restore_training_checkpoint(const std::string& path, Model& model, AdamW& opt,
                                             bool verify_hash_against_current = false,
                                             const RunConfig* current = nullptr);

// Builds a fresh model from the checkpoint's stored config. max_seq_len may
// be raised for long-context probes without touching any weight shape.
Model load_model_for_eval(const std::string& path, int max_seq_len_override = 0,
                          RunConfig* out_config = nullptr, long* out_step = nullptr);

}  // namespace srttt
