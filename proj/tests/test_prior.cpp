#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "mtpfn/prior.hpp"
#include "oracles.hpp"

using namespace mtpfn;
using oracle::error_code_of;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.embed_dim = 16;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.ff_dim = 32;
  cfg.k_bins = 16;
  cfg.max_features = 8;
  return cfg;
}

PriorConfig small_prior() {
  PriorConfig p;
  p.d_min = 1;
  p.d_max = 3;
  p.n_min = 16;
  p.n_max = 24;
  p.tasks_per_step = 4;
  return p;
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(begin),
                         v.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
         static_cast<double>(end - begin);
}

}  // namespace

TEST_CASE("sample_task shape and standardized targets") {
  PriorConfig p;
  p.d_min = p.d_max = 3;
  p.n_min = p.n_max = 100;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const SyntheticTask t = sample_task(rng, p);
    CHECK(t.x.rows == 100);
    CHECK(t.x.cols == 3);
    REQUIRE(t.y.size() == 100);
    const double mean = mean_of(t.y, 0, 100);
    double var = 0.0;
    for (double y : t.y) var += (y - mean) * (y - mean);
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::abs(std::sqrt(var / 100.0) - 1.0) <= 1e-9);
  }
}

TEST_CASE("sample_task draws sizes within the configured ranges") {
  const PriorConfig p;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const SyntheticTask t = sample_task(rng, p);
    CHECK(t.x.cols >= p.d_min);
    CHECK(t.x.cols <= p.d_max);
    CHECK(t.x.rows >= p.n_min);
    CHECK(t.x.rows <= p.n_max);
  }
}

TEST_CASE("same rng seed gives the same task") {
  const PriorConfig p;
  auto a = task_rng(7, 3, 1);
  auto b = task_rng(7, 3, 1);
  const SyntheticTask ta = sample_task(a, p);
  const SyntheticTask tb = sample_task(b, p);
  CHECK(ta.x.data == tb.x.data);
  CHECK(ta.y == tb.y);
  auto c = task_rng(7, 3, 2);
  CHECK(sample_task(c, p).y != ta.y);
}

TEST_CASE("every activation yields a finite non-constant teacher") {
  std::mt19937_64 rng(3);
  const Matrix x = oracle::random_matrix(rng, 50, 4);
  for (Activation a : {Activation::Tanh, Activation::Sine, Activation::PiecewiseLinear}) {
    const Teacher t = sample_teacher(rng, 4, 16, a);
    std::vector<double> y = t.apply(x);
    REQUIRE(y.size() == 50);
    for (double v : y) CHECK(std::isfinite(v));
    CHECK(standardize_in_place(y));
  }
}

TEST_CASE("standardize_in_place rejects constants") {
  std::vector<double> c(5, 2.0);
  CHECK_FALSE(standardize_in_place(c));
  CHECK(c == std::vector<double>(5, 2.0));
}

TEST_CASE("split_task halves the rows") {
  PriorConfig p;
  p.n_min = p.n_max = 21;
  std::mt19937_64 rng(4);
  const SyntheticTask t = sample_task(rng, p);
  const TaskSplit s = split_task(t);
  CHECK(s.batch.x_train.rows == 10);
  CHECK(s.batch.x_query.rows == 11);
  CHECK(s.batch.y_train.size() == 10);
  CHECK(s.y_query.size() == 11);
  CHECK(s.y_query.front() == t.y[10]);
}

TEST_CASE("prior config validation") {
  PriorConfig p;
  p.d_min = 0;
  CHECK(error_code_of([&] { p.validate(); }) == ErrorCode::InvalidConfig);
  p = {};
  p.n_min = 50;
  p.n_max = 40;
  CHECK(error_code_of([&] { p.validate(); }) == ErrorCode::InvalidConfig);
  p = {};
  p.noise_min = -0.1;
  CHECK(error_code_of([&] { p.validate(); }) == ErrorCode::InvalidConfig);
  p = {};
  p.tasks_per_step = 0;
  CHECK(error_code_of([&] { p.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("zero steps leave params unchanged") {
  ModelParams p = init_params(tiny_model(), 5);
  const auto before = p.values;
  CHECK(pretrain(p, small_prior(), 0, 1e-3, 0).empty());
  CHECK(p.values == before);
}

TEST_CASE("same seed gives identical loss curves and params") {
  ModelParams a = init_params(tiny_model(), 5);
  ModelParams b = init_params(tiny_model(), 5);
  std::vector<double> seen;
  const auto ca = pretrain(a, small_prior(), 20, 1e-3, 9, [&](std::size_t, double l) { seen.push_back(l); });
  const auto cb = pretrain(b, small_prior(), 20, 1e-3, 9);
  CHECK(ca == cb);
  CHECK(seen == ca);
  CHECK(a.values == b.values);
  ModelParams c = init_params(tiny_model(), 5);
  CHECK(pretrain(c, small_prior(), 20, 1e-3, 10) != ca);
}

TEST_CASE("divergence aborts before applying the offending step") {
  ModelParams p = init_params(tiny_model(), 5);
  const auto& head = p.layout.entry("head.b");
  p.values[head.offset] = std::nan("");
  const auto before = p.values;
  try {
    pretrain(p, small_prior(), 10, 1e-3, 0);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.code() == ErrorCode::DivergenceDetected);
    CHECK(e.partial_curve().empty());
  }
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (i != head.offset) CHECK(p.values[i] == before[i]);
  }
}

TEST_CASE("pretrain rejects a bad learning rate") {
  ModelParams p = init_params(tiny_model(), 5);
  CHECK(error_code_of([&] { pretrain(p, small_prior(), 1, 0.0, 0); }) == ErrorCode::InvalidConfig);
  CHECK(error_code_of([&] { pretrain(p, small_prior(), 1, INFINITY, 0); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("pre-training lowers the loss") {
  // Scaled-down trainability check: tiny model and small tasks, three seeds.
  const std::size_t steps = 2000;
  for (std::uint64_t seed : {0, 1, 2}) {
    ModelParams p = init_params(tiny_model(), seed);
    const auto curve = pretrain(p, small_prior(), steps, 3e-3, seed);
    const double first = mean_of(curve, 0, steps / 10);
    const double last = mean_of(curve, steps - steps / 10, steps);
    CAPTURE(seed);
    CHECK(last < first);
  }
}
