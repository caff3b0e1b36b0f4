#pragma once

// Per-task target statistics and the centroid target used by multitask
// fine-tuning. Tasks are standardized before averaging so that tasks measured
// on different scales contribute equally.

#include <cstddef>
#include <span>
#include <vector>

#include "mtpfn/matrix.hpp"

namespace mtpfn {

struct TargetStats {
  std::vector<double> mean;
  std::vector<double> std;  // population standard deviation, > 0

  std::size_t tasks() const noexcept { return mean.size(); }

  friend bool operator==(const TargetStats&, const TargetStats&) = default;
};

// Statistics of the given rows of y. Throws ZeroVarianceTask, EmptyBatch.
TargetStats compute_target_stats(const Matrix& y, std::span<const std::size_t> rows);
TargetStats compute_target_stats(const Matrix& y);

// Throws ShapeMismatch, ZeroVarianceTask.
Matrix standardize_targets(const Matrix& y, const TargetStats& stats);
Matrix destandardize_targets(const Matrix& y_std, const TargetStats& stats);

// Row means: the least-squares centroid of each row's T standardized targets.
std::vector<double> average_targets(const Matrix& y_std);

// sum_i (y_i - z)^2
double sse(std::span<const double> y, double z);

}  // namespace mtpfn
