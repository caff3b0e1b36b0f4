#pragma once

// Synthetic regression prior and the pre-training loop. Each task is drawn
// from a freshly sampled one-hidden-layer teacher network on standard normal
// inputs; the model learns to regress query targets from the labelled context
// rows of the same task.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mtpfn/error.hpp"
#include "mtpfn/matrix.hpp"
#include "mtpfn/model.hpp"

namespace mtpfn {

struct PriorConfig {
  std::size_t d_min = 1, d_max = 6;
  std::size_t n_min = 16, n_max = 48;
  std::size_t teacher_hidden = 16;
  // Noise standard deviation relative to the unit-variance teacher signal.
  double noise_min = 0.0, noise_max = 0.5;
  std::size_t tasks_per_step = 8;

  // Throws InvalidConfig.
  void validate() const;

  friend bool operator==(const PriorConfig&, const PriorConfig&) = default;
};

enum class Activation { Tanh, Sine, PiecewiseLinear };

// y = act(x W1 + b1) . w2 for a row x.
struct Teacher {
  std::size_t d = 0;
  std::size_t hidden = 0;
  Activation activation = Activation::Tanh;
  std::vector<double> w1;  // d x hidden
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // hidden

  std::vector<double> apply(const Matrix& x) const;
};

// Weights are scaled so hidden pre-activations have roughly unit variance.
Teacher sample_teacher(std::mt19937_64& rng, std::size_t d, std::size_t hidden,
                       Activation activation);

// In-place shift and scale to zero mean and unit population variance.
// Returns false (leaving v unchanged) when v is constant.
bool standardize_in_place(std::vector<double>& v);

struct SyntheticTask {
  Matrix x;               // n x d, standard normal
  std::vector<double> y;  // n, zero mean and unit variance
};

SyntheticTask sample_task(std::mt19937_64& rng, const PriorConfig& prior);

// Splits the rows of a task into a leading context half and a query rest.
struct TaskSplit {
  ContextBatch batch;
  std::vector<double> y_query;
};
TaskSplit split_task(const SyntheticTask& task);

// Deterministic generator for task `index` of step `step` under `seed`.
std::mt19937_64 task_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t index);

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t step, std::vector<double> partial_curve)
      : Error(ErrorCode::DivergenceDetected,
              "non-finite loss at step " + std::to_string(step)),
        curve_(std::move(partial_curve)) {}
  const std::vector<double>& partial_curve() const noexcept { return curve_; }

 private:
  std::vector<double> curve_;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

// Runs `steps` Adam updates on `params`; each step averages the query loss of
// prior.tasks_per_step fresh tasks, each split half context, half query, with
// the support built from the context targets. Returns the per-step mean loss.
// Throws TrainingDiverged when the loss or a gradient turns non-finite; the
// offending step is not applied.
std::vector<double> pretrain(ModelParams& params, const PriorConfig& prior, std::size_t steps,
                             double lr, std::uint64_t seed, const StepCallback& on_step = {});

// Mean squared error of decoded predictions and of the context-mean predictor
// on one task split, in standardized target units.
struct IclScore {
  double model_mse = 0.0;
  double mean_mse = 0.0;
};
IclScore score_icl(const ModelParams& params, const SyntheticTask& task);

}  // namespace mtpfn
