#include "mtpfn/inference.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

#include "mtpfn/error.hpp"
#include "mtpfn/objective.hpp"

namespace mtpfn {

Predictor fit_context(const ModelParams& params, const Matrix& x_train,
                      std::span<const double> y_train, double mean, double std,
                      const InferenceConfig& cfg) {
  if (x_train.rows < 2) throw Error(ErrorCode::PreconditionFailed, "context needs at least 2 rows");
  if (y_train.size() != x_train.rows) {
    throw Error(ErrorCode::ShapeMismatch, "context targets differ from context rows");
  }
  if (!(std > 0.0)) throw Error(ErrorCode::PreconditionFailed, "target std must be > 0");
  if (cfg.context_cap < 2) throw Error(ErrorCode::PreconditionFailed, "context_cap must be >= 2");

  std::vector<std::size_t> rows(x_train.rows);
  std::iota(rows.begin(), rows.end(), 0);
  if (rows.size() > cfg.context_cap) {
    std::mt19937_64 rng(cfg.seed);
    for (std::size_t i = 0; i < cfg.context_cap; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, rows.size() - 1);
      std::swap(rows[i], rows[pick(rng)]);
    }
    rows.resize(cfg.context_cap);
    std::sort(rows.begin(), rows.end());
  }
  std::vector<double> y_std(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) y_std[i] = (y_train[rows[i]] - mean) / std;
  SupportSpec support = build_support(y_std, params.config.k_bins);
  Matrix x_ctx = rows.size() == x_train.rows ? x_train : select_rows(x_train, rows);
  return Predictor(params, std::move(support), mean, std, std::move(x_ctx), std::move(y_std));
}

std::vector<double> predict(const Predictor& pred, const Matrix& x_test,
                            const InferenceConfig& cfg) {
  std::vector<double> out;
  if (x_test.rows == 0) return out;
  if (x_test.cols != pred.x_context().cols) {
    throw Error(ErrorCode::FeatureDimensionMismatch,
                "test rows have " + std::to_string(x_test.cols) + " features, context has " +
                    std::to_string(pred.x_context().cols));
  }
  out.reserve(x_test.rows);
  const std::size_t chunk = std::max<std::size_t>(cfg.query_chunk, 1);
  ContextBatch batch;
  batch.x_train = pred.x_context();
  batch.y_train = pred.y_context();
  for (std::size_t r0 = 0; r0 < x_test.rows; r0 += chunk) {
    const std::size_t r1 = std::min(x_test.rows, r0 + chunk);
    batch.x_query = Matrix(r1 - r0, x_test.cols);
    std::copy(x_test.data.begin() + static_cast<std::ptrdiff_t>(r0 * x_test.cols),
              x_test.data.begin() + static_cast<std::ptrdiff_t>(r1 * x_test.cols),
              batch.x_query.data.begin());
    const Matrix probs = support_probs(forward(pred.params(), batch), pred.support());
    for (double z : decode_rows(probs, pred.support())) out.push_back(z * pred.std() + pred.mean());
  }
  return out;
}

Matrix predict_all_tasks(std::span<const ModelParams> bundle, const Matrix& x_train,
                         const Matrix& y_train, const TargetStats& stats, const Matrix& x_test,
                         const InferenceConfig& cfg) {
  const std::size_t t = y_train.cols;
  if (bundle.empty()) throw Error(ErrorCode::PreconditionFailed, "empty parameter bundle");
  if (bundle.size() != 1 && bundle.size() != t) {
    throw Error(ErrorCode::ShapeMismatch, "bundle must hold 1 or T parameter sets");
  }
  if (stats.tasks() != t) throw Error(ErrorCode::ShapeMismatch, "target stats do not match T");
  Matrix out(x_test.rows, t);
  for (std::size_t i = 0; i < t; ++i) {
    const ModelParams& p = bundle.size() == 1 ? bundle[0] : bundle[i];
    const Predictor pred = fit_context(p, x_train, y_train.column(i), stats.mean[i], stats.std[i], cfg);
    const std::vector<double> col = predict(pred, x_test, cfg);
    for (std::size_t r = 0; r < x_test.rows; ++r) out(r, i) = col[r];
  }
  return out;
}

}  // namespace mtpfn
