#pragma once

// Command-line driver: pre-training, fine-tuning, evaluation, multi-seed
// benchmarks against a single-task MLP baseline, and report rendering.
//
// Exit codes: 0 ok, 2 configuration, 3 divergence, 4 data, 5 missing results.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mtpfn/config.hpp"
#include "mtpfn/dataio.hpp"
#include "mtpfn/error.hpp"
#include "mtpfn/finetune.hpp"
#include "mtpfn/metrics.hpp"
#include "mtpfn/model.hpp"

namespace mtpfn::bench {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitDivergence = 3,
  kExitData = 4,
  kExitMissingResults = 5,
};

int exit_code_for(ErrorCode code) noexcept;

// One train/test split of a dataset, ready for fine-tuning and inference.
struct PreparedData {
  std::vector<std::string> target_names;
  Matrix x_train, x_test;  // standardized with train-split feature statistics
  Matrix y_train, y_test;  // original units
  TargetStats stats;       // train split
  FineTuneData finetune;   // x_train with standardized y_train
};

// CSV or synthetic data per the config. Throws data errors.
TabularDataset load_dataset(const DataConfig& cfg);
PreparedData prepare_data(const TabularDataset& ds, const DataConfig& cfg, std::uint64_t split_seed);

// Loads cfg.pretrained when set, otherwise pre-trains from scratch. The loss
// curve is filled only when pre-training runs.
ModelParams base_params(const RunConfig& cfg, std::vector<double>* curve = nullptr);

struct ModelResult {
  std::string model;
  std::uint64_t seed = 0;
  MetricsReport report;
};

// M x T predictions of a fine-tuned bundle on the test split.
Matrix predict_test(const FineTunedBundle& bundle, const PreparedData& data, const EvalConfig& eval,
                    std::uint64_t seed);

// results.csv body: one row per (model, seed, task) in input order, then one
// "mean" row per (model, task) averaging the seeds of that model.
std::string results_csv(const std::vector<ModelResult>& results,
                        const std::vector<std::string>& target_names,
                        const std::vector<double>& eps_list);

// Lets tests replace the predictions (M x T, original units) before scoring.
using PredictionHook = std::function<void(Matrix& yhat, const Matrix& y_test)>;

struct CliIo {
  std::ostream& out;
  std::ostream& err;
  PredictionHook eval_hook;
};

// Entry point of the command-line tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, CliIo io);

}  // namespace mtpfn::bench
