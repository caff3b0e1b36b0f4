#pragma once

// Discretized regression targets: a fixed support of K bins, soft encoding of
// scalar targets, softmax decoding and the bin cross-entropy used for training.

#include <cstddef>
#include <span>
#include <vector>

namespace mtpfn {

using BinDistribution = std::vector<double>;

class SupportSpec {
 public:
  SupportSpec() = default;

  // Validates ordering: borders strictly increasing, one more border than
  // centers, each center strictly inside its bin. Throws InvalidConfig.
  SupportSpec(std::vector<double> centers, std::vector<double> borders,
              std::size_t requested_k = 0);

  // Bins whose borders are the midpoints between adjacent centers; the outer
  // borders sit half a neighbouring gap beyond the edge centers.
  static SupportSpec from_centers(std::vector<double> centers);

  std::size_t k() const noexcept { return centers_.size(); }
  // K asked for at construction; larger than k() when duplicate quantiles
  // were merged.
  std::size_t requested_k() const noexcept { return requested_k_; }
  bool degraded() const noexcept { return requested_k_ > centers_.size(); }

  const std::vector<double>& centers() const noexcept { return centers_; }
  const std::vector<double>& borders() const noexcept { return borders_; }
  double min_center() const noexcept { return centers_.front(); }
  double max_center() const noexcept { return centers_.back(); }

  friend bool operator==(const SupportSpec&, const SupportSpec&) = default;

 private:
  std::vector<double> centers_;
  std::vector<double> borders_;
  std::size_t requested_k_ = 0;
};

// Equal-mass quantile borders (linear interpolation between order
// statistics), outer borders pushed 1% of the value range past the extremes,
// centers at border midpoints. Coinciding quantiles are merged, so the result
// may have fewer than k bins (see SupportSpec::degraded).
// Throws AllValuesEqual, NonFiniteInput, InvalidConfig (k < 2 or empty).
SupportSpec build_support(std::span<const double> values, std::size_t k);

// Linear split between the two bracketing centers; clamps to the edge bins.
BinDistribution encode_target(double y, const SupportSpec& spec);
void encode_target_into(double y, const SupportSpec& spec, std::span<double> out);

BinDistribution softmax_probs(std::span<const double> logits);
void softmax_into(std::span<const double> logits, std::span<double> out);

// -sum_k p_k log q_k
double reg_loss(std::span<const double> p, std::span<const double> q);
// d reg_loss(p, softmax(z)) / dz = softmax(z) - p
std::vector<double> reg_loss_grad(std::span<const double> p, std::span<const double> logits);

double decode_expectation(std::span<const double> q, const SupportSpec& spec);

double entropy(std::span<const double> p);

}  // namespace mtpfn
