#pragma once

// Run configuration for the command-line driver. Every section is optional in
// the JSON document; missing keys keep their defaults and unknown keys are
// rejected.
//
//   {
//     "model":    {"embed_dim": 64, "n_blocks": 3, "n_heads": 4, "ff_dim": 128,
//                  "k_bins": 32, "max_features": 64},
//     "prior":    {"d_range": [1, 6], "n_range": [16, 48], "teacher_hidden": 16,
//                  "noise_std_range": [0, 0.5], "tasks_per_step": 8,
//                  "steps": 20000, "lr": 0.001, "seed": 0},
//     "finetune": {"lr": 1e-5, "batch_rows": 8, "budget_seconds": 120,
//                  "max_steps": 500, "deterministic": false, "lambda": 1.0,
//                  "adapter_hidden": 15, "adapter_lr": 0.001,
//                  "context_fraction": 0.5, "flip_anticorrelated": false},
//     "data":     {"path": "steel.csv" | "synth": {...}, "n_targets": 5,
//                  "split": {"train_fraction": 0.7}},
//     "eval":     {"eps_list": [0.05, 0.025], "context_cap": 4096,
//                  "budget_sweep": [0, 15, 30, 60, 120]},
//     "baseline": {"hidden": 64, "epochs": 50, "lr": 0.001, "batch_size": 32},
//     "seeds":    [0, 1, 2, 3, 4],
//     "pretrained": "checkpoint.json"
//   }

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtpfn/baseline.hpp"
#include "mtpfn/dataio.hpp"
#include "mtpfn/finetune.hpp"
#include "mtpfn/model.hpp"
#include "mtpfn/prior.hpp"

namespace mtpfn {

struct PretrainConfig {
  PriorConfig prior;
  std::size_t steps = 20000;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct DataConfig {
  // CSV input; the synthetic generator is used when empty.
  std::optional<std::filesystem::path> path;
  SynthConfig synth;
  std::size_t n_targets = 5;
  double train_fraction = 0.70;
};

struct EvalConfig {
  std::vector<double> eps_list = {0.05, 0.025};
  std::size_t context_cap = 4096;
  // Fine-tuning budgets in seconds for the gain curve; empty disables it.
  std::vector<double> budget_sweep;
};

struct RunConfig {
  ModelConfig model;
  PretrainConfig pretrain;
  FineTuneConfig finetune;
  DataConfig data;
  EvalConfig eval;
  MlpConfig baseline;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  // Checkpoint to start from instead of pre-training; relative paths resolve
  // against the config file's directory.
  std::optional<std::filesystem::path> pretrained;

  // Throws ConfigError.
  void validate() const;
};

// Throws ConfigError for malformed JSON, wrong types, unknown keys or
// invalid values.
RunConfig parse_run_config(std::string_view json_text);
// As parse_run_config, resolving relative paths against the file's directory.
// Throws IoError when the file cannot be read.
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical JSON form, accepted by parse_run_config.
std::string dump_run_config(const RunConfig& cfg);

}  // namespace mtpfn
