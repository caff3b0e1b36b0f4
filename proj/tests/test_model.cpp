#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "mtpfn/error.hpp"
#include "mtpfn/kernels.hpp"
#include "mtpfn/model.hpp"
#include "mtpfn/support_bar.hpp"
#include "oracles.hpp"

using namespace mtpfn;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.embed_dim = 16;
  c.n_blocks = 1;
  c.n_heads = 2;
  c.ff_dim = 24;
  c.k_bins = 8;
  c.max_features = 8;
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = tiny_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.n_blocks = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_NOTHROW(ModelConfig{}.validate());
}

TEST_CASE("layout has no positional parameters and covers every entry once") {
  ModelConfig cfg{};
  cfg.max_features = 37;
  const ParamLayout lay(cfg);
  std::size_t covered = 0;
  std::set<std::string> names;
  for (const auto& e : lay.entries()) {
    CHECK(e.offset == covered);
    covered += e.size();
    names.insert(e.name);
    CHECK(e.name.find("pos") == std::string::npos);
    // No array is sized by a row or feature count.
    CHECK(e.rows != cfg.max_features);
    CHECK(e.cols != cfg.max_features);
  }
  CHECK(covered == lay.total_size());
  CHECK(names.size() == lay.entries().size());
}

TEST_CASE("init_params determinism and zero head") {
  const ModelConfig cfg = tiny_config();
  const ModelParams a = init_params(cfg, 1);
  const ModelParams b = init_params(cfg, 1);
  const ModelParams c = init_params(cfg, 2);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  for (double w : a.tensor("head.w")) CHECK(w == 0.0);
  for (double g : a.tensor("blocks.0.col.ln_g")) CHECK(g == 1.0);
  for (double g : a.tensor("blocks.0.row.ln_b")) CHECK(g == 0.0);

  std::mt19937_64 rng(3);
  const ContextBatch batch = oracle::random_batch(rng, 4, 3, 2);
  const Matrix logits = forward(a, batch);
  REQUIRE(logits.rows == 2);
  REQUIRE(logits.cols == 8);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto q = softmax_probs(logits.row(i));
    for (double x : q) CHECK(x == doctest::Approx(1.0 / 8.0).epsilon(1e-15));
  }
}

TEST_CASE("forward shape and validation errors") {
  ModelConfig cfg = tiny_config();
  cfg.max_features = 3;
  const ModelParams p = init_params(cfg, 0);
  std::mt19937_64 rng(1);
  CHECK(forward(p, oracle::random_batch(rng, 4, 3, 2)).rows == 2);
  try {
    forward(p, oracle::random_batch(rng, 4, 4, 2));
    FAIL("expected FeatureCountExceedsMax");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FeatureCountExceedsMax);
  }
  ContextBatch bad = oracle::random_batch(rng, 4, 3, 2);
  bad.x_query(0, 1) = NAN;
  CHECK_THROWS_AS(forward(p, bad), Error);
  ContextBatch empty_query = oracle::random_batch(rng, 4, 3, 0);
  CHECK(forward(p, empty_query).rows == 0);
}

TEST_CASE("backward matches central finite differences") {
  for (std::size_t blocks : {1u, 2u}) {
    ModelConfig cfg = tiny_config();
    cfg.n_blocks = blocks;
    const ModelParams p = oracle::scrambled_params(cfg, 17 + blocks);
    std::mt19937_64 rng(23 + blocks);
    const ContextBatch batch = oracle::random_batch(rng, 6, 3, 2);
    const Matrix dlogits = oracle::random_matrix(rng, 2, cfg.k_bins);
    const ParamGrads g = backward(p, batch, dlogits);
    // One sample from every named array plus random extras.
    std::vector<std::size_t> picks;
    std::mt19937_64 pick_rng(99);
    for (const auto& e : p.layout.entries()) {
      std::uniform_int_distribution<std::size_t> u(0, e.size() - 1);
      picks.push_back(e.offset + u(pick_rng));
    }
    std::uniform_int_distribution<std::size_t> any(0, p.values.size() - 1);
    for (int i = 0; i < 20; ++i) picks.push_back(any(pick_rng));
    for (std::size_t idx : picks) {
      const double fd = oracle::central_difference(p, batch, dlogits, idx, 1e-4);
      CAPTURE(idx);
      // Key biases have an exactly zero gradient (softmax shift); the floor
      // sits above finite-difference roundoff for those.
      CHECK(oracle::relative_error(g[idx], fd, 1e-6) <= 1e-4);
    }
  }
}

TEST_CASE("zero dlogits give zero gradients") {
  const ModelConfig cfg = tiny_config();
  const ModelParams p = oracle::scrambled_params(cfg, 5);
  std::mt19937_64 rng(5);
  const ContextBatch batch = oracle::random_batch(rng, 5, 2, 3);
  const ParamGrads g = backward(p, batch, Matrix(3, cfg.k_bins));
  for (double x : g) CHECK(x == 0.0);
}

TEST_CASE("gradient of a duplicated query row is the sum of per-copy gradients") {
  const ModelConfig cfg = tiny_config();
  const ModelParams p = oracle::scrambled_params(cfg, 8);
  std::mt19937_64 rng(8);
  ContextBatch single = oracle::random_batch(rng, 5, 3, 1);
  ContextBatch dup = single;
  dup.x_query = Matrix(2, 3);
  for (std::size_t c = 0; c < 3; ++c) dup.x_query(0, c) = dup.x_query(1, c) = single.x_query(0, c);
  const Matrix d1 = oracle::random_matrix(rng, 1, cfg.k_bins);
  const Matrix d2 = oracle::random_matrix(rng, 1, cfg.k_bins);
  Matrix both(2, cfg.k_bins);
  for (std::size_t k = 0; k < cfg.k_bins; ++k) {
    both(0, k) = d1(0, k);
    both(1, k) = d2(0, k);
  }
  const ParamGrads gd = backward(p, dup, both);
  const ParamGrads g1 = backward(p, single, d1);
  const ParamGrads g2 = backward(p, single, d2);
  for (std::size_t i = 0; i < gd.size(); ++i) {
    CHECK(std::abs(gd[i] - (g1[i] + g2[i])) <= 1e-10 * (1.0 + std::abs(gd[i])));
  }
}

TEST_CASE("query logits are invariant to train-row and feature-column order") {
  ModelConfig cfg;  // desk-scale default
  const ModelParams p = oracle::scrambled_params(cfg, 31);
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const ContextBatch base = oracle::random_batch(rng, 12, 5, 4);
    const Matrix ref = forward(p, base);

    ContextBatch rows = base;
    const auto rp = oracle::random_permutation(rng, base.n_train());
    rows.x_train = oracle::permute_rows(base.x_train, rp);
    for (std::size_t i = 0; i < rp.size(); ++i) rows.y_train[i] = base.y_train[rp[i]];
    CHECK(oracle::max_abs_diff(ref, forward(p, rows)) <= 1e-6);

    ContextBatch cols = base;
    const auto cp = oracle::random_permutation(rng, base.n_features());
    cols.x_train = oracle::permute_cols(base.x_train, cp);
    cols.x_query = oracle::permute_cols(base.x_query, cp);
    CHECK(oracle::max_abs_diff(ref, forward(p, cols)) <= 1e-6);
  }
}

TEST_CASE("masking: query rows neither see each other nor leak into train tokens") {
  const ModelConfig cfg = tiny_config();
  ModelConfig two = cfg;
  two.n_blocks = 2;
  const ModelParams p = oracle::scrambled_params(two, 12);
  std::mt19937_64 rng(12);
  const ContextBatch base = oracle::random_batch(rng, 6, 3, 3);
  ForwardCache c0;
  const Matrix l0 = forward(p, base, &c0);

  ContextBatch changed = base;
  for (std::size_t c = 0; c < 3; ++c) changed.x_query(1, c) += 5.0;
  ForwardCache c1;
  const Matrix l1 = forward(p, changed, &c1);
  for (std::size_t k = 0; k < two.k_bins; ++k) {
    CHECK(l0(0, k) == l1(0, k));
    CHECK(l0(2, k) == l1(2, k));
  }
  CHECK(l0(1, 0) != l1(1, 0));
  const std::size_t train_tokens = base.n_train() * (base.n_features() + 1);
  for (std::size_t b = 0; b < two.n_blocks; ++b) {
    for (std::size_t i = 0; i < train_tokens * two.embed_dim; ++i) {
      REQUIRE(c0.blocks[b].input.data[i] == c1.blocks[b].input.data[i]);
    }
  }
  for (std::size_t i = 0; i < train_tokens * two.embed_dim; ++i) {
    REQUIRE(c0.final_states.data[i] == c1.final_states.data[i]);
  }
}

TEST_CASE("forward is deterministic and backends agree") {
  const ModelConfig cfg{};
  const ModelParams p = oracle::scrambled_params(cfg, 4);
  std::mt19937_64 rng(4);
  const ContextBatch batch = oracle::random_batch(rng, 30, 7, 9);
  const Matrix a = forward(p, batch);
  CHECK(a == forward(p, batch));
  if (kernels::backend_available(kernels::Backend::Avx2)) {
    const auto saved = kernels::active_backend();
    kernels::set_backend(kernels::Backend::Scalar);
    const Matrix s = forward(p, batch);
    kernels::set_backend(kernels::Backend::Avx2);
    const Matrix v = forward(p, batch);
    kernels::set_backend(saved);
    CHECK(oracle::max_abs_diff(s, v) <= 1e-9);
  }
}
