#pragma once

// Bin cross-entropy of query rows under a support, shared by pre-training and
// fine-tuning. A support built from few distinct values can have fewer bins
// than the model head; only the first spec.k() logits are then used and the
// remaining logits get a zero gradient.

#include <span>

#include "mtpfn/matrix.hpp"
#include "mtpfn/support_bar.hpp"

namespace mtpfn {

// n x spec.k() softmax of the leading logits of each row.
Matrix support_probs(const Matrix& logits, const SupportSpec& spec);

// Expected value of each row of probs over the support centers.
std::vector<double> decode_rows(const Matrix& probs, const SupportSpec& spec);

struct QueryLoss {
  double loss = 0.0;  // mean over query rows
  Matrix probs;       // n_query x spec.k()
  Matrix dlogits;     // n_query x logits.cols, gradient of `loss`
};

// Throws ShapeMismatch, EmptyBatch.
QueryLoss query_loss(const Matrix& logits, std::span<const double> y_query,
                     const SupportSpec& spec);

}  // namespace mtpfn
