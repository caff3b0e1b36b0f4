#include "mtpfn/optimizer.hpp"

#include <cmath>
#include <string>

#include "mtpfn/error.hpp"
#include "mtpfn/kernels.hpp"

namespace mtpfn {

void optimizer_step(OptState& state, std::span<double> params, std::span<const double> grads,
                    double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state, params and grads differ in size");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw Error(ErrorCode::NonFiniteGradient,
                  "gradient entry " + std::to_string(i) + " is not finite; step rejected");
    }
  }
  const auto t = static_cast<double>(state.step + 1);
  const AdamHyper& h = state.hyper;
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  kernels::active().adam(params.size(), params.data(), state.m.data(), state.v.data(), grads.data(),
                         lr, h.beta1, h.beta2, h.eps, bc1, bc2);
  ++state.step;
}

}  // namespace mtpfn
