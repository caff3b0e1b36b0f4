#pragma once

// Single-task baseline: one independent one-hidden-layer ReLU network per
// task, trained with minibatch Adam on the standardized target.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mtpfn/matrix.hpp"

namespace mtpfn {

struct MlpConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 50;
  double lr = 1e-3;
  std::size_t batch_size = 32;

  // Throws InvalidConfig.
  void validate() const;
};

struct Mlp {
  std::size_t d = 0;
  std::size_t hidden = 0;
  // [w1 (d x hidden), b1 (hidden), w2 (hidden), b2]
  std::vector<double> values;

  std::vector<double> predict(const Matrix& x) const;
};

// Throws EmptyBatch, ShapeMismatch, InvalidConfig.
Mlp train_mlp(const Matrix& x, std::span<const double> y, const MlpConfig& cfg, std::uint64_t seed);

// One model per column of y_std; task i is seeded from (seed, i) alone.
std::vector<Mlp> train_stl_mlp(const Matrix& x, const Matrix& y_std, const MlpConfig& cfg,
                               std::uint64_t seed);

// M x T standardized predictions, column i from models[i].
Matrix predict_stl(const std::vector<Mlp>& models, const Matrix& x);

}  // namespace mtpfn
