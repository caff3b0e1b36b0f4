#pragma once

// Versioned JSON checkpoints:
//
//   {"schema_version": 1,
//    "model_config": {...},
//    "support_spec": {"centers": [...], "borders": [...], "requested_k": K},  optional
//    "target_stats": {"mean": [...], "std": [...]},                           optional
//    "params": {"<tensor name>": [[row], ...], ...}}
//
// Numbers are written in shortest round-trip form, so a reload is exact.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "mtpfn/model.hpp"
#include "mtpfn/support_bar.hpp"
#include "mtpfn/targets.hpp"

namespace mtpfn {

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  ModelParams params{ModelConfig{}};
  std::optional<SupportSpec> support;
  std::optional<TargetStats> target_stats;
};

std::string dump_checkpoint(const Checkpoint& ckpt);
// Throws CheckpointError for unknown versions, missing or misshapen tensors.
Checkpoint parse_checkpoint(std::string_view json_text);

// Throws IoError, CheckpointError.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mtpfn
