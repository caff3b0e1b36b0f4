#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtpfn/matrix.hpp"

namespace mtpfn {

// Mean absolute percentage error, 100/N sum |(y - yhat) / y|.
// Throws ZeroTrueValue, ShapeMismatch, EmptyBatch.
double mae_pct(std::span<const double> y, std::span<const double> yhat);

// Percentage of rows with |(y - yhat) / yhat| <= eps. The relative error is
// taken against the prediction. Throws ZeroPredictedValue, InvalidConfig
// (eps <= 0), ShapeMismatch, EmptyBatch.
double pam(std::span<const double> y, std::span<const double> yhat, double eps);

// 1 - Var(y - yhat) / Var(y) with population variances.
// Throws ZeroTargetVariance, PreconditionFailed (N < 2), ShapeMismatch.
double explained_variance(std::span<const double> y, std::span<const double> yhat);

// 100/T sum_i (baseline_i - method_i) / baseline_i, in percent.
// Throws ZeroBaseline, ShapeMismatch, EmptyBatch.
double mtl_gain(std::span<const double> method_mae, std::span<const double> baseline_mae);

// Ranks 1..n with ties given their average rank.
std::vector<double> average_ranks(std::span<const double> v);

// T x T Spearman correlations of the columns of y.
// Throws DegenerateColumn, PreconditionFailed (N < 3).
Matrix spearman_matrix(const Matrix& y);

struct TaskMetrics {
  double mae_pct = 0.0;
  std::vector<double> pam;  // one entry per threshold, in eps_list order
  double ev = 0.0;
};

struct MetricsReport {
  std::vector<double> eps_list;
  std::vector<TaskMetrics> tasks;
  std::optional<double> delta_m;  // against a baseline, when one is given

  std::vector<double> mae_column() const;
};

// Per-task metrics of M x T predictions against truth.
MetricsReport evaluate(const Matrix& y, const Matrix& yhat, std::span<const double> eps_list);

// Column label for a PAM threshold: 0.05 -> "pam5", 0.025 -> "pam2_5".
std::string pam_label(double eps);

}  // namespace mtpfn
