#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mtpfn {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment estimates for one parameter vector.
struct OptState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  AdamHyper hyper;

  OptState() = default;
  explicit OptState(std::size_t n, AdamHyper h = {}) : m(n, 0.0), v(n, 0.0), hyper(h) {}
};

// Bias-corrected adaptive-moment update in place. A gradient with any
// non-finite entry is rejected with NonFiniteGradient before anything is
// modified.
void optimizer_step(OptState& state, std::span<double> params, std::span<const double> grads,
                    double lr);

}  // namespace mtpfn
