#include "mtpfn/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtpfn/error.hpp"

namespace mtpfn {

Matrix support_probs(const Matrix& logits, const SupportSpec& spec) {
  const std::size_t k = spec.k();
  if (logits.cols < k) {
    throw Error(ErrorCode::ShapeMismatch, "support has more bins (" + std::to_string(k) +
                                              ") than the model head (" +
                                              std::to_string(logits.cols) + ")");
  }
  Matrix probs(logits.rows, k);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    softmax_into(logits.row(i).first(k), probs.row(i));
  }
  return probs;
}

std::vector<double> decode_rows(const Matrix& probs, const SupportSpec& spec) {
  std::vector<double> out(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) out[i] = decode_expectation(probs.row(i), spec);
  return out;
}

QueryLoss query_loss(const Matrix& logits, std::span<const double> y_query,
                     const SupportSpec& spec) {
  if (logits.rows == 0) throw Error(ErrorCode::EmptyBatch, "no query rows");
  if (y_query.size() != logits.rows) {
    throw Error(ErrorCode::ShapeMismatch, "query targets differ from logit rows");
  }
  QueryLoss out;
  out.probs = support_probs(logits, spec);
  out.dlogits = Matrix(logits.rows, logits.cols);
  const std::size_t k = spec.k();
  const double inv_n = 1.0 / static_cast<double>(logits.rows);
  BinDistribution p(k);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    encode_target_into(y_query[i], spec, p);
    const auto q = out.probs.row(i);
    // Log-sum-exp form keeps the loss finite when a bin probability underflows.
    const auto z = logits.row(i).first(k);
    const double zmax = *std::max_element(z.begin(), z.end());
    double se = 0.0;
    for (double v : z) se += std::exp(v - zmax);
    const double lse = zmax + std::log(se);
    for (std::size_t j = 0; j < k; ++j) {
      if (p[j] != 0.0) out.loss -= p[j] * (z[j] - lse);
    }
    auto d = out.dlogits.row(i);
    for (std::size_t j = 0; j < k; ++j) d[j] = (q[j] - p[j]) * inv_n;
  }
  out.loss *= inv_n;
  return out;
}

}  // namespace mtpfn
