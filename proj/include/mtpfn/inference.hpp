#pragma once

// Prediction by conditioning: a task's training rows become the context of a
// single forward pass, with no parameter updates. The same standardization
// and support rule as in fine-tuning are used.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mtpfn/matrix.hpp"
#include "mtpfn/model.hpp"
#include "mtpfn/support_bar.hpp"
#include "mtpfn/targets.hpp"

namespace mtpfn {

struct InferenceConfig {
  // Larger contexts are subsampled to this many rows, deterministically by seed.
  std::size_t context_cap = 4096;
  std::uint64_t seed = 0;
  // Query rows per forward pass.
  std::size_t query_chunk = 2048;
};

// Conditioned model for one task. Holds a reference to the parameters, which
// must outlive it; immutable after construction.
class Predictor {
 public:
  Predictor(const ModelParams& params, SupportSpec support, double mean, double std, Matrix x_ctx,
            std::vector<double> y_ctx_std)
      : params_(&params),
        support_(std::move(support)),
        mean_(mean),
        std_(std),
        x_ctx_(std::move(x_ctx)),
        y_ctx_(std::move(y_ctx_std)) {}

  const ModelParams& params() const noexcept { return *params_; }
  const SupportSpec& support() const noexcept { return support_; }
  double mean() const noexcept { return mean_; }
  double std() const noexcept { return std_; }
  const Matrix& x_context() const noexcept { return x_ctx_; }
  const std::vector<double>& y_context() const noexcept { return y_ctx_; }

 private:
  const ModelParams* params_;
  SupportSpec support_;
  double mean_;
  double std_;
  Matrix x_ctx_;
  std::vector<double> y_ctx_;
};

// x_train holds standardized features; y_train is in original units and is
// standardized with (mean, std). Throws PreconditionFailed (fewer than 2
// rows, std <= 0), ShapeMismatch, AllValuesEqual.
Predictor fit_context(const ModelParams& params, const Matrix& x_train,
                      std::span<const double> y_train, double mean, double std,
                      const InferenceConfig& cfg = {});

// Predictions in original target units. Throws FeatureDimensionMismatch.
std::vector<double> predict(const Predictor& pred, const Matrix& x_test,
                            const InferenceConfig& cfg = {});

// M x T predictions; task i uses its own labels as context and
// bundle[i] (or bundle[0] when the bundle has a single parameter set).
Matrix predict_all_tasks(std::span<const ModelParams> bundle, const Matrix& x_train,
                         const Matrix& y_train, const TargetStats& stats, const Matrix& x_test,
                         const InferenceConfig& cfg = {});

}  // namespace mtpfn
