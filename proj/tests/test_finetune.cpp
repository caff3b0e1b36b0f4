#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "mtpfn/dataio.hpp"
#include "mtpfn/finetune.hpp"
#include "mtpfn/targets.hpp"
#include "oracles.hpp"

using namespace mtpfn;
using oracle::error_code_of;

namespace {

using V = std::vector<double>;

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

FineTuneData small_data(std::size_t tasks = 5, std::uint64_t seed = 0) {
  SynthConfig sc;
  sc.n = 60;
  sc.d = 4;
  sc.seed = seed;
  sc.strength_tasks = tasks > 1 ? tasks - 1 : 1;
  sc.elongation_tasks = 1;
  const TabularDataset ds = gen_synthetic_steel(sc);
  FineTuneData data;
  std::vector<std::size_t> all(ds.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Prepared p = impute_and_stats(ds, all);
  data.x = standardize_features(p.data.x, p.features);
  data.y_std = standardize_targets(ds.y, p.targets);
  if (tasks == 1) {
    Matrix one(data.y_std.rows, 1);
    for (std::size_t r = 0; r < one.rows; ++r) one(r, 0) = data.y_std(r, 0);
    data.y_std = one;
  }
  return data;
}

FineTuneConfig det_config(std::size_t steps) {
  FineTuneConfig cfg;
  cfg.deterministic = true;
  cfg.max_steps = steps;
  cfg.lr = 1e-3;
  cfg.seed = 3;
  return cfg;
}

std::vector<V> trajectory(FineTuneRun& run, std::size_t steps) {
  std::vector<V> out;
  for (std::size_t i = 0; i < steps; ++i) {
    run.step();
    out.push_back(run.params().values);
  }
  return out;
}

}  // namespace

TEST_CASE("target standardization") {
  const Matrix y(4, 2, {1, 10, 2, 10, 3, 30, 6, 30});
  const TargetStats s = compute_target_stats(y);
  CHECK(s.mean == V{3.0, 20.0});
  CHECK(s.std[1] == 10.0);
  const Matrix z = standardize_targets(y, s);
  for (std::size_t c = 0; c < 2; ++c) {
    const V col = z.column(c);
    double m = 0.0, v = 0.0;
    for (double x : col) m += x / 4.0;
    for (double x : col) v += (x - m) * (x - m) / 4.0;
    CHECK(std::abs(m) <= 1e-9);
    CHECK(std::abs(std::sqrt(v) - 1.0) <= 1e-9);
  }
  const Matrix back = destandardize_targets(z, s);
  CHECK(oracle::max_abs_diff(back, y) <= 1e-9);

  const Matrix flat(3, 1, {2, 2, 2});
  CHECK(error_code_of([&] { compute_target_stats(flat); }) == ErrorCode::ZeroVarianceTask);
  TargetStats bad = s;
  bad.std[0] = 0.0;
  CHECK(error_code_of([&] { standardize_targets(y, bad); }) == ErrorCode::ZeroVarianceTask);
  CHECK(error_code_of([&] { standardize_targets(flat, s); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("stats come from the given rows") {
  const Matrix y(4, 1, {1, 3, 100, -50});
  const std::vector<std::size_t> rows = {0, 1};
  const TargetStats s = compute_target_stats(y, rows);
  CHECK(s.mean[0] == 2.0);
  CHECK(s.std[0] == 1.0);
}

TEST_CASE("average_targets and sse examples") {
  CHECK(average_targets(Matrix(1, 3, {1, 2, 3})) == V{2.0});
  const Matrix one(3, 1, {0.5, -2.0, 7.0});
  CHECK(average_targets(one) == one.data);
  CHECK(sse(V{0, 10}, 5.0) == 50.0);
  CHECK(sse(V{0, 10}, 4.0) == 52.0);
  CHECK(sse(V{3.5, 3.5, 3.5}, 3.5) == 0.0);
}

TEST_CASE("the row mean minimizes the squared error") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n;
  std::uniform_int_distribution<std::size_t> pick_t(2, 8);
  std::uniform_real_distribution<double> delta(-3.0, 3.0);
  for (int row = 0; row < 1000; ++row) {
    const std::size_t t = pick_t(rng);
    Matrix y(1, t);
    for (double& v : y.data) v = n(rng);
    const double m = average_targets(y)[0];
    const double best = sse(y.data, m);
    for (int k = 0; k < 100; ++k) {
      double z = m + delta(rng);
      if (z == m) z += 1e-3;
      REQUIRE(sse(y.data, z) > best);
    }
    for (double d : {1e-3, 0.37, 2.5}) {
      const double td2 = static_cast<double>(t) * d * d;
      CHECK(std::abs(sse(y.data, m + d) - best - td2) <= 1e-9);
      CHECK(std::abs(sse(y.data, m - d) - best - td2) <= 1e-9);
    }
  }
}

TEST_CASE("adapter with zero heads outputs its head biases") {
  AdapterParams a = init_adapter(3, 15, 1);
  const std::size_t hb = 2 * a.hidden + a.tasks * a.hidden;
  a.values[hb + 0] = 0.5;
  a.values[hb + 1] = -1.0;
  a.values[hb + 2] = 2.0;
  const Matrix out = adapter_forward(a, V{-3.0, 0.0, 0.1, 9.0});
  REQUIRE(out.rows == 4);
  REQUIRE(out.cols == 3);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(out(r, 0) == 0.5);
    CHECK(out(r, 1) == -1.0);
    CHECK(out(r, 2) == 2.0);
  }
  const Matrix empty = adapter_forward(a, V{});
  CHECK(empty.rows == 0);
  CHECK(empty.cols == 3);
}

TEST_CASE("adapter gradients match finite differences") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n;
  AdapterParams a(4, 6);
  for (double& v : a.values) v = n(rng);
  const V ybar = {0.3, -1.2, 2.0, 0.0, 0.7};
  const Matrix dout = oracle::random_matrix(rng, ybar.size(), 4);
  auto objective = [&](const AdapterParams& p, const V& x) {
    const Matrix out = adapter_forward(p, x);
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += dout.data[i] * out.data[i];
    return s;
  };
  const AdapterGrads g = adapter_backward(a, ybar, dout);
  const double h = 1e-6;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    AdapterParams up = a, dn = a;
    up.values[i] += h;
    dn.values[i] -= h;
    const double fd = (objective(up, ybar) - objective(dn, ybar)) / (2.0 * h);
    CAPTURE(i);
    CHECK(oracle::relative_error(g.params[i], fd, 1e-6) <= 1e-6);
  }
  for (std::size_t i = 0; i < ybar.size(); ++i) {
    V up = ybar, dn = ybar;
    up[i] += h;
    dn[i] -= h;
    const double fd = (objective(a, up) - objective(a, dn)) / (2.0 * h);
    CHECK(oracle::relative_error(g.input[i], fd, 1e-6) <= 1e-6);
  }
}

TEST_CASE("task_loss and total_loss examples") {
  CHECK(task_loss(V{1, 2}, V{1, 2}) == 0.0);
  CHECK(task_loss(V{0, 0}, V{1, 3}) == 5.0);
  CHECK(task_loss(V{0, 0}, V{2, 6}) == 4.0 * task_loss(V{0, 0}, V{1, 3}));
  CHECK(error_code_of([] { task_loss(V{}, V{}); }) == ErrorCode::EmptyBatch);
  CHECK(total_loss(0.7, V{3.0, 9.0}, 0.0) == 0.7);
  CHECK(total_loss(1.0, V{0.2, 0.4}, 1.0) == doctest::Approx(1.3).epsilon(1e-15));
  CHECK(total_loss(1.0, V{0.2, 0.4}, 2.0) - 1.0 ==
        doctest::Approx(2.0 * (total_loss(1.0, V{0.2, 0.4}, 1.0) - 1.0)).epsilon(1e-15));
}

TEST_CASE("strategy names") {
  CHECK(parse_strategy("nft") == FineTuneStrategy::none());
  CHECK(parse_strategy("sft") == FineTuneStrategy::single());
  CHECK(parse_strategy("mft") == FineTuneStrategy::average());
  CHECK(parse_strategy("maft").short_name() == "maft");
  CHECK(error_code_of([] { parse_strategy("stl"); }) == ErrorCode::ConfigError);
}

TEST_CASE("training signal") {
  FineTuneData d;
  d.x = Matrix(3, 1);
  d.y_std = Matrix(3, 2, {1, -1, 0, 0, -1, 1});
  CHECK(training_signal(d, FineTuneStrategy::average(), 0, false) == V{0, 0, 0});
  CHECK(training_signal(d, FineTuneStrategy::average(), 0, true) == V{1, 0, -1});
  CHECK(training_signal(d, FineTuneStrategy::single(1), 1, false) == V{-1, 0, 1});
}

TEST_CASE("fine-tuning is deterministic per seed") {
  const FineTuneData data = small_data();
  const ModelParams p0 = init_params(tiny_model(), 1);
  for (auto kind : {StrategyKind::SingleTask, StrategyKind::MultiTaskAvg, StrategyKind::MultiTaskAdapter}) {
    FineTuneRun a(p0, data, kind, 2, det_config(10));
    FineTuneRun b(p0, data, kind, 2, det_config(10));
    V la, lb;
    for (int i = 0; i < 10; ++i) {
      la.push_back(a.step());
      lb.push_back(b.step());
    }
    CHECK(la == lb);
    CHECK(a.params().values == b.params().values);
  }
}

TEST_CASE("adapter fine-tuning with lambda 0 reduces to target averaging") {
  const FineTuneData data = small_data();
  const ModelParams p0 = init_params(tiny_model(), 1);
  FineTuneConfig cfg = det_config(20);
  cfg.lambda = 0.0;
  FineTuneRun mft(p0, data, StrategyKind::MultiTaskAvg, 0, cfg);
  FineTuneRun maft(p0, data, StrategyKind::MultiTaskAdapter, 0, cfg);
  CHECK(trajectory(mft, 20) == trajectory(maft, 20));
}

TEST_CASE("averaging a single task reduces to single-task fine-tuning") {
  const FineTuneData data = small_data(1);
  REQUIRE(data.tasks() == 1);
  const ModelParams p0 = init_params(tiny_model(), 1);
  FineTuneRun mft(p0, data, StrategyKind::MultiTaskAvg, 0, det_config(20));
  FineTuneRun sft(p0, data, StrategyKind::SingleTask, 0, det_config(20));
  CHECK(trajectory(mft, 20) == trajectory(sft, 20));
}

TEST_CASE("a positive lambda trains the adapter and changes the trajectory") {
  const FineTuneData data = small_data();
  const ModelParams p0 = init_params(tiny_model(), 1);
  FineTuneRun maft(p0, data, StrategyKind::MultiTaskAdapter, 0, det_config(5));
  REQUIRE(maft.adapter().has_value());
  const V a0 = maft.adapter()->values;
  maft.step();
  CHECK(maft.adapter()->values != a0);
  FineTuneRun mft(p0, data, StrategyKind::MultiTaskAvg, 0, det_config(5));
  CHECK(trajectory(mft, 3) != trajectory(maft, 3));
}

TEST_CASE("fine-tuning lowers the loss on correlated data") {
  const FineTuneData data = small_data();
  ModelConfig mc = tiny_model();
  const ModelParams p0 = init_params(mc, 4);
  FineTuneConfig cfg = det_config(300);
  cfg.batch_rows = 24;
  for (auto kind : {StrategyKind::MultiTaskAvg, StrategyKind::MultiTaskAdapter}) {
    FineTuneRun run(p0, data, kind, 0, cfg);
    V losses;
    for (int i = 0; i < 300; ++i) losses.push_back(run.step());
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 30; ++i) {
      first += losses[static_cast<std::size_t>(i)];
      last += losses[losses.size() - 1 - static_cast<std::size_t>(i)];
    }
    CHECK(last < first);
  }
}

TEST_CASE("run_strategy bundles") {
  const FineTuneData data = small_data();
  const ModelParams p0 = init_params(tiny_model(), 1);

  const FineTunedBundle nft = run_strategy(p0, data, FineTuneStrategy::none(), det_config(5));
  REQUIRE(nft.params.size() == 1);
  CHECK(nft.params[0].values == p0.values);
  CHECK(nft.total_steps() == 0);

  const FineTunedBundle zero = run_strategy(p0, data, FineTuneStrategy::average(), det_config(0));
  CHECK(zero.params[0].values == p0.values);
  CHECK(zero.total_steps() == 0);

  const FineTunedBundle sft = run_strategy(p0, data, FineTuneStrategy::single(), det_config(3));
  CHECK(sft.params.size() == 5);
  CHECK(sft.runs.size() == 5);
  CHECK(sft.total_steps() == 15);
  CHECK(&sft.for_task(3) == &sft.params[3]);
  const FineTunedBundle one = finetune_sft(p0, data, 3, det_config(3));
  CHECK(one.params.size() == 1);
  CHECK(one.params[0].values == sft.params[3].values);

  for (const auto& s : {FineTuneStrategy::average(), FineTuneStrategy::adapter()}) {
    const FineTunedBundle b = run_strategy(p0, data, s, det_config(3));
    CHECK(b.params.size() == 1);
    CHECK(b.runs.size() == 1);
    CHECK(b.total_steps() == 3);
    CHECK(&b.for_task(4) == &b.params[0]);
  }

  CHECK(error_code_of([&] { run_strategy(p0, data, FineTuneStrategy::single(5), det_config(1)); }) ==
        ErrorCode::InvalidConfig);
}

TEST_CASE("budget mode stops once the budget is spent") {
  const FineTuneData data = small_data();
  const ModelParams p0 = init_params(tiny_model(), 1);
  FineTuneConfig cfg;
  cfg.budget_seconds = 0.3;
  const FineTunedBundle b = run_strategy(p0, data, FineTuneStrategy::average(), cfg);
  REQUIRE(b.runs.size() == 1);
  const RunInfo& r = b.runs[0];
  CHECK(r.steps > 0);
  CHECK(r.elapsed_seconds >= 0.3);
  const double per_step = r.elapsed_seconds / static_cast<double>(r.steps);
  // One extra step may start just before the deadline; allow scheduler jitter on top.
  CHECK(r.elapsed_seconds <= 0.3 + 2.0 * per_step + 0.1);

  cfg.budget_seconds = 0.0;
  CHECK(run_strategy(p0, data, FineTuneStrategy::average(), cfg).total_steps() == 0);
}

TEST_CASE("config validation") {
  FineTuneConfig c;
  c.lambda = -1.0;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);
  c = {};
  c.context_fraction = 1.0;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);
  c = {};
  c.batch_rows = 1;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);
}
