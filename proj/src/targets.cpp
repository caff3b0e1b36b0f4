#include "mtpfn/targets.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "mtpfn/error.hpp"

namespace mtpfn {

namespace {

void check_stats(const TargetStats& stats, std::size_t cols) {
  if (stats.mean.size() != cols || stats.std.size() != cols) {
    throw Error(ErrorCode::ShapeMismatch, "target stats cover " +
                                              std::to_string(stats.mean.size()) + " tasks, data has " +
                                              std::to_string(cols));
  }
  for (std::size_t i = 0; i < cols; ++i) {
    if (!(stats.std[i] > 0.0)) {
      throw Error(ErrorCode::ZeroVarianceTask, "task " + std::to_string(i) + " has zero variance");
    }
  }
}

}  // namespace

TargetStats compute_target_stats(const Matrix& y, std::span<const std::size_t> rows) {
  if (rows.empty()) throw Error(ErrorCode::EmptyBatch, "no rows for target statistics");
  TargetStats s;
  s.mean.assign(y.cols, 0.0);
  s.std.assign(y.cols, 0.0);
  const double n = static_cast<double>(rows.size());
  for (std::size_t c = 0; c < y.cols; ++c) {
    double sum = 0.0;
    for (std::size_t r : rows) sum += y(r, c);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t r : rows) ss += (y(r, c) - mean) * (y(r, c) - mean);
    s.mean[c] = mean;
    s.std[c] = std::sqrt(ss / n);
  }
  check_stats(s, y.cols);
  return s;
}

TargetStats compute_target_stats(const Matrix& y) {
  std::vector<std::size_t> rows(y.rows);
  std::iota(rows.begin(), rows.end(), 0);
  return compute_target_stats(y, rows);
}

Matrix standardize_targets(const Matrix& y, const TargetStats& stats) {
  check_stats(stats, y.cols);
  Matrix out(y.rows, y.cols);
  for (std::size_t r = 0; r < y.rows; ++r) {
    for (std::size_t c = 0; c < y.cols; ++c) out(r, c) = (y(r, c) - stats.mean[c]) / stats.std[c];
  }
  return out;
}

Matrix destandardize_targets(const Matrix& y_std, const TargetStats& stats) {
  check_stats(stats, y_std.cols);
  Matrix out(y_std.rows, y_std.cols);
  for (std::size_t r = 0; r < y_std.rows; ++r) {
    for (std::size_t c = 0; c < y_std.cols; ++c) {
      out(r, c) = y_std(r, c) * stats.std[c] + stats.mean[c];
    }
  }
  return out;
}

std::vector<double> average_targets(const Matrix& y_std) {
  if (y_std.cols == 0) throw Error(ErrorCode::ShapeMismatch, "no tasks to average");
  std::vector<double> out(y_std.rows);
  for (std::size_t r = 0; r < y_std.rows; ++r) {
    const auto row = y_std.row(r);
    out[r] = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(y_std.cols);
  }
  return out;
}

double sse(std::span<const double> y, double z) {
  double s = 0.0;
  for (double v : y) s += (v - z) * (v - z);
  return s;
}

}  // namespace mtpfn
