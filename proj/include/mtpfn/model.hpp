#pragma once

// Desk-scale prior-fitted transformer for in-context tabular regression.
//
// Every table cell becomes a token: a row holds D feature tokens followed by
// one target-slot token. Each pre-norm block applies
//   1. attention among the D+1 tokens of a row,
//   2. attention down each token column across rows, masked so that train rows
//      see only train rows and a query row sees the train rows and itself,
//   3. a GELU feed-forward layer,
// each with a residual connection. Logits over the K support bins are read
// from the target-slot token of every query row. There are no positional
// parameters, so query logits do not depend on the order of train rows or of
// feature columns.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtpfn/matrix.hpp"

namespace mtpfn {

struct ModelConfig {
  std::size_t embed_dim = 64;
  std::size_t n_blocks = 3;
  std::size_t n_heads = 4;
  std::size_t ff_dim = 128;
  std::size_t k_bins = 32;
  std::size_t max_features = 64;

  std::size_t head_dim() const noexcept { return embed_dim / n_heads; }
  // Throws InvalidConfig.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParamEntry {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const noexcept { return rows * cols; }
};

struct AttentionOffsets {
  std::size_t ln_g, ln_b, wq, bq, wk, bk, wv, bv, wo, bo;
};

struct BlockOffsets {
  AttentionOffsets col;
  AttentionOffsets row;
  std::size_t ff_ln_g, ff_ln_b, w1, b1, w2, b2;
};

// Flat storage plan for all learnable arrays. Matrices are stored
// input-major (fan_in x fan_out) so a layer is `y = x * W + b`.
class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& config);

  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  std::size_t total_size() const noexcept { return total_; }
  // Throws InvalidConfig for an unknown name.
  const ParamEntry& entry(std::string_view name) const;

  std::size_t x_w = 0, x_b = 0, y_w = 0, y_b = 0, query_token = 0;
  std::vector<BlockOffsets> blocks;
  std::size_t out_ln_g = 0, out_ln_b = 0, head_w = 0, head_b = 0;

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols);

  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

struct ModelParams {
  ModelConfig config;
  ParamLayout layout;
  std::vector<double> values;

  explicit ModelParams(const ModelConfig& cfg)
      : config(cfg), layout(cfg), values(layout.total_size(), 0.0) {}

  std::span<double> tensor(std::string_view name);
  std::span<const double> tensor(std::string_view name) const;
};

// Gradient record with the same flat layout as ModelParams::values.
using ParamGrads = std::vector<double>;

// Standardized context and query rows for one forward pass.
struct ContextBatch {
  Matrix x_train;               // n_train x D
  std::vector<double> y_train;  // n_train
  Matrix x_query;               // n_query x D

  std::size_t n_train() const noexcept { return x_train.rows; }
  std::size_t n_query() const noexcept { return x_query.rows; }
  std::size_t n_features() const noexcept { return x_train.cols; }
  // Throws FeatureCountExceedsMax, ShapeMismatch, NonFiniteInput.
  void validate(const ModelConfig& config) const;
};

// Deterministic fan-in uniform initialization; layer-norm scales 1, offsets 0,
// output head zero so the initial logits are all zero.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Activations saved by a forward pass for the backward pass. Tokens are
// ordered row-major over (table row, token column).
struct ForwardCache {
  struct Attention {
    Matrix xhat;                // layer-norm normalized input
    std::vector<double> rstd;   // per token
    Matrix u;                   // layer-norm output
    Matrix q, k, v;
    Matrix mixed;               // concatenated head outputs before W_o
    std::vector<double> probs;  // per group, per head: members x (keys + 1)
  };
  struct Block {
    Matrix input;  // token states entering the block
    Attention col;
    Attention row;
    Matrix ff_xhat;
    std::vector<double> ff_rstd;
    Matrix ff_u;
    Matrix ff_pre;  // W1 output before GELU
    Matrix ff_act;
  };
  std::size_t n_train = 0;
  std::size_t n_query = 0;
  std::size_t n_cols = 0;  // D + 1
  std::vector<Block> blocks;
  Matrix final_states;  // token states after the last block
  Matrix out_xhat;      // query target-slot tokens, normalized
  std::vector<double> out_rstd;
  Matrix out_u;
};

// Returns n_query x k_bins logits. When cache is non-null it is filled for
// backward().
Matrix forward(const ModelParams& params, const ContextBatch& batch, ForwardCache* cache = nullptr);

// Reverse-mode gradient of sum_{i,k} dlogits(i,k) * logits(i,k).
ParamGrads backward(const ModelParams& params, const ContextBatch& batch,
                    const ForwardCache& cache, const Matrix& dlogits);
ParamGrads backward(const ModelParams& params, const ContextBatch& batch, const Matrix& dlogits);

}  // namespace mtpfn
