#include "mtpfn/support_bar.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtpfn/error.hpp"

namespace mtpfn {

SupportSpec::SupportSpec(std::vector<double> centers, std::vector<double> borders,
                         std::size_t requested_k)
    : centers_(std::move(centers)), borders_(std::move(borders)), requested_k_(requested_k) {
  if (centers_.size() < 2) throw Error(ErrorCode::InvalidConfig, "support needs at least 2 bins");
  if (borders_.size() != centers_.size() + 1) {
    throw Error(ErrorCode::InvalidConfig, "support needs K+1 borders");
  }
  for (std::size_t k = 0; k < centers_.size(); ++k) {
    if (!(borders_[k] < centers_[k] && centers_[k] < borders_[k + 1])) {
      throw Error(ErrorCode::InvalidConfig,
                  "support center " + std::to_string(k) + " is not inside its bin");
    }
  }
  if (requested_k_ < centers_.size()) requested_k_ = centers_.size();
}

SupportSpec SupportSpec::from_centers(std::vector<double> centers) {
  if (centers.size() < 2) throw Error(ErrorCode::InvalidConfig, "support needs at least 2 bins");
  std::vector<double> borders(centers.size() + 1);
  for (std::size_t k = 1; k < centers.size(); ++k) {
    borders[k] = 0.5 * (centers[k - 1] + centers[k]);
  }
  borders.front() = centers.front() - 0.5 * (centers[1] - centers[0]);
  const std::size_t n = centers.size();
  borders.back() = centers[n - 1] + 0.5 * (centers[n - 1] - centers[n - 2]);
  return SupportSpec(std::move(centers), std::move(borders));
}

SupportSpec build_support(std::span<const double> values, std::size_t k) {
  if (values.empty()) throw Error(ErrorCode::InvalidConfig, "cannot build a support from no values");
  if (k < 2) throw Error(ErrorCode::InvalidConfig, "support needs k >= 2");
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "non-finite support value");
  }
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();
  if (!(hi > lo)) throw Error(ErrorCode::AllValuesEqual, "cannot build a support");
  const double pad = 0.01 * (hi - lo);

  auto quantile = [&](double f) {
    const double h = f * static_cast<double>(sorted.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(h));
    if (i + 1 >= sorted.size()) return sorted.back();
    return sorted[i] + (h - static_cast<double>(i)) * (sorted[i + 1] - sorted[i]);
  };

  std::vector<double> borders;
  borders.reserve(k + 1);
  borders.push_back(lo - pad);
  for (std::size_t i = 1; i < k; ++i) {
    const double b = quantile(static_cast<double>(i) / static_cast<double>(k));
    if (b > borders.back()) borders.push_back(b);
  }
  const double top = hi + pad;
  if (top > borders.back()) {
    borders.push_back(top);
  } else {
    borders.back() = top;
  }
  std::vector<double> centers(borders.size() - 1);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    centers[i] = 0.5 * (borders[i] + borders[i + 1]);
  }
  return SupportSpec(std::move(centers), std::move(borders), k);
}

void encode_target_into(double y, const SupportSpec& spec, std::span<double> out) {
  if (!std::isfinite(y)) throw Error(ErrorCode::NonFiniteTarget, "target is not finite");
  const auto& c = spec.centers();
  const std::size_t k = c.size();
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(k), 0.0);
  if (y <= c.front()) {
    out[0] = 1.0;
    return;
  }
  if (y >= c.back()) {
    out[k - 1] = 1.0;
    return;
  }
  // First center strictly greater than y; y lies in [c[j-1], c[j]).
  const auto it = std::upper_bound(c.begin(), c.end(), y);
  const auto j = static_cast<std::size_t>(it - c.begin());
  if (y == c[j - 1]) {
    out[j - 1] = 1.0;
    return;
  }
  const double lower = (c[j] - y) / (c[j] - c[j - 1]);
  out[j - 1] = lower;
  out[j] = 1.0 - lower;
}

BinDistribution encode_target(double y, const SupportSpec& spec) {
  BinDistribution p(spec.k());
  encode_target_into(y, spec, p);
  return p;
}

void softmax_into(std::span<const double> logits, std::span<double> out) {
  double mx = -INFINITY;
  for (double z : logits) {
    if (!std::isfinite(z)) throw Error(ErrorCode::NonFiniteInput, "non-finite logit");
    mx = std::max(mx, z);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] *= inv;
}

BinDistribution softmax_probs(std::span<const double> logits) {
  BinDistribution q(logits.size());
  softmax_into(logits, q);
  return q;
}

double reg_loss(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error(ErrorCode::ShapeMismatch, "reg_loss size mismatch");
  double loss = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] == 0.0) continue;
    if (q[k] <= 0.0) {
      throw Error(ErrorCode::ZeroProbabilityUnderSupport,
                  "bin " + std::to_string(k) + " has zero predicted probability");
    }
    loss -= p[k] * std::log(q[k]);
  }
  return loss;
}

std::vector<double> reg_loss_grad(std::span<const double> p, std::span<const double> logits) {
  if (p.size() != logits.size()) throw Error(ErrorCode::ShapeMismatch, "reg_loss_grad size mismatch");
  std::vector<double> g = softmax_probs(logits);
  for (std::size_t k = 0; k < g.size(); ++k) g[k] -= p[k];
  return g;
}

double decode_expectation(std::span<const double> q, const SupportSpec& spec) {
  const auto& c = spec.centers();
  double y = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) y += q[k] * c[k];
  // Rounding can push a near-one-hot expectation a few ulps past the edges.
  return std::clamp(y, c.front(), c.back());
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double pk : p) {
    if (pk > 0.0) h -= pk * std::log(pk);
  }
  return h;
}

}  // namespace mtpfn
