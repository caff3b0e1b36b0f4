#pragma once

// Fine-tuning of a pre-trained model on a multitask regression dataset.
//
//   nft   no fine-tuning
//   sft   one run per task on that task's standardized target
//   mft   one run on the row mean of all standardized targets
//   maft  as mft, plus a small adapter that maps the decoded centroid
//         prediction to every task and adds their mean squared errors to the
//         loss; gradients reach the transformer through the decoded
//         expectation. The adapter is discarded after training.
//
// Every step samples batch_rows training rows, splits them into context and
// query rows, and applies the bin cross-entropy on the query rows.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "mtpfn/matrix.hpp"
#include "mtpfn/model.hpp"
#include "mtpfn/optimizer.hpp"
#include "mtpfn/support_bar.hpp"

namespace mtpfn {

enum class StrategyKind { NoFineTune, SingleTask, MultiTaskAvg, MultiTaskAdapter };

struct FineTuneStrategy {
  StrategyKind kind = StrategyKind::NoFineTune;
  // SingleTask only: the task to tune, or every task in turn when empty.
  std::optional<std::size_t> task_index;

  static FineTuneStrategy none() { return {}; }
  static FineTuneStrategy single(std::optional<std::size_t> task = std::nullopt) {
    return {StrategyKind::SingleTask, task};
  }
  static FineTuneStrategy average() { return {StrategyKind::MultiTaskAvg, std::nullopt}; }
  static FineTuneStrategy adapter() { return {StrategyKind::MultiTaskAdapter, std::nullopt}; }

  // "nft", "sft", "mft" or "maft".
  std::string_view short_name() const noexcept;

  friend bool operator==(const FineTuneStrategy&, const FineTuneStrategy&) = default;
};

// Throws ConfigError for anything but nft, sft, mft, maft.
FineTuneStrategy parse_strategy(std::string_view name);

struct FineTuneConfig {
  double lr = 1e-5;
  std::size_t batch_rows = 8;
  // Wall-clock limit per run; when empty, or in deterministic mode, max_steps
  // is the limit instead.
  std::optional<double> budget_seconds = 120.0;
  std::size_t max_steps = 500;
  bool deterministic = false;
  double lambda = 1.0;
  std::size_t adapter_hidden = 15;
  double adapter_lr = 1e-3;
  double context_fraction = 0.5;
  // Negate tasks negatively correlated with task 0 before averaging.
  bool flip_anticorrelated = false;
  std::uint64_t seed = 0;

  // Throws InvalidConfig.
  void validate() const;
};

// Training rows: standardized features and per-task standardized targets.
struct FineTuneData {
  Matrix x;      // n x D
  Matrix y_std;  // n x T

  std::size_t rows() const noexcept { return x.rows; }
  std::size_t tasks() const noexcept { return y_std.cols; }
};

// Shared hidden layer 1 -> hidden (tanh) followed by T scalar heads.
struct AdapterParams {
  std::size_t hidden = 0;
  std::size_t tasks = 0;
  // [w (hidden), b (hidden), head_w (tasks x hidden), head_b (tasks)]
  std::vector<double> values;

  AdapterParams() = default;
  AdapterParams(std::size_t tasks, std::size_t hidden);

  std::span<const double> w() const { return {values.data(), hidden}; }
  std::span<const double> b() const { return {values.data() + hidden, hidden}; }
  std::span<const double> head_w(std::size_t task) const {
    return {values.data() + 2 * hidden + task * hidden, hidden};
  }
  double head_b(std::size_t task) const { return values[2 * hidden + tasks * hidden + task]; }
};

// Uniform fan-in hidden weights, zero hidden bias, zero heads.
AdapterParams init_adapter(std::size_t tasks, std::size_t hidden, std::uint64_t seed);

// n x T predictions from the decoded centroid predictions.
Matrix adapter_forward(const AdapterParams& adapter, std::span<const double> ybar);

struct AdapterGrads {
  std::vector<double> params;  // same layout as AdapterParams::values
  std::vector<double> input;   // d/d ybar
};
AdapterGrads adapter_backward(const AdapterParams& adapter, std::span<const double> ybar,
                              const Matrix& dout);

// Mean squared error. Throws EmptyBatch, ShapeMismatch.
double task_loss(std::span<const double> pred, std::span<const double> y);

// l_reg + lambda * mean(task_losses)
double total_loss(double l_reg, std::span<const double> task_losses, double lambda);

// Scalar training signal of each row under a strategy: the (optionally
// sign-aligned) row mean for mft/maft, the task column for sft.
std::vector<double> training_signal(const FineTuneData& data, const FineTuneStrategy& strategy,
                                    std::size_t task, bool flip_anticorrelated);

// One fine-tuning run: owns the parameters, optimizer state, adapter and
// row sampler. step() performs one update and returns its loss (the combined
// loss for maft).
class FineTuneRun {
 public:
  // strategy must be SingleTask (task chooses the column), MultiTaskAvg or
  // MultiTaskAdapter. Throws InvalidConfig, EmptyBatch, AllValuesEqual.
  FineTuneRun(ModelParams params, const FineTuneData& data, StrategyKind kind, std::size_t task,
              const FineTuneConfig& cfg);

  double step();

  const ModelParams& params() const noexcept { return params_; }
  ModelParams take_params() { return std::move(params_); }
  const std::optional<AdapterParams>& adapter() const noexcept { return adapter_; }
  const SupportSpec& support() const noexcept { return support_; }
  std::size_t steps_done() const noexcept { return steps_; }

 private:
  ModelParams params_;
  const FineTuneData& data_;
  StrategyKind kind_;
  FineTuneConfig cfg_;
  std::vector<double> signal_;
  SupportSpec support_;
  OptState opt_;
  std::optional<AdapterParams> adapter_;
  OptState adapter_opt_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t steps_ = 0;
};

struct RunInfo {
  std::size_t task = 0;  // tuned task for sft, 0 otherwise
  std::size_t steps = 0;
  double elapsed_seconds = 0.0;
  double final_loss = 0.0;
  std::vector<double> losses;
};

struct FineTunedBundle {
  FineTuneStrategy strategy;
  // One parameter set shared by every task, or one per task for sft.
  std::vector<ModelParams> params;
  std::vector<RunInfo> runs;
  std::optional<AdapterParams> adapter;

  std::size_t total_steps() const noexcept;
  double total_seconds() const noexcept;
  // Parameters used to predict task i.
  const ModelParams& for_task(std::size_t task) const;
};

// Single-task run on one column.
FineTunedBundle finetune_sft(const ModelParams& params, const FineTuneData& data,
                             std::size_t task, const FineTuneConfig& cfg);

// Deterministic mode (or no budget) runs exactly max_steps; otherwise steps
// run until the elapsed time at the start of a step reaches budget_seconds.
FineTunedBundle run_strategy(const ModelParams& params, const FineTuneData& data,
                             const FineTuneStrategy& strategy, const FineTuneConfig& cfg);

}  // namespace mtpfn
