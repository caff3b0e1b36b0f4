#include "mtpfn/finetune.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "mtpfn/error.hpp"
#include "mtpfn/objective.hpp"
#include "mtpfn/targets.hpp"

namespace mtpfn {

std::string_view FineTuneStrategy::short_name() const noexcept {
  switch (kind) {
    case StrategyKind::NoFineTune: return "nft";
    case StrategyKind::SingleTask: return "sft";
    case StrategyKind::MultiTaskAvg: return "mft";
    case StrategyKind::MultiTaskAdapter: return "maft";
  }
  return "?";
}

FineTuneStrategy parse_strategy(std::string_view name) {
  if (name == "nft") return FineTuneStrategy::none();
  if (name == "sft") return FineTuneStrategy::single();
  if (name == "mft") return FineTuneStrategy::average();
  if (name == "maft") return FineTuneStrategy::adapter();
  throw Error(ErrorCode::ConfigError,
              "unknown strategy '" + std::string(name) + "' (expected nft, sft, mft or maft)");
}

void FineTuneConfig::validate() const {
  if (!(lr > 0.0) || !(adapter_lr > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "learning rates must be > 0");
  }
  if (batch_rows < 2) throw Error(ErrorCode::InvalidConfig, "batch_rows must be >= 2");
  if (budget_seconds && !(*budget_seconds >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "budget_seconds must be >= 0");
  }
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidConfig, "lambda must be >= 0");
  if (adapter_hidden < 1) throw Error(ErrorCode::InvalidConfig, "adapter_hidden must be >= 1");
  if (!(context_fraction > 0.0 && context_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "context_fraction must lie in (0, 1)");
  }
}

AdapterParams::AdapterParams(std::size_t tasks_, std::size_t hidden_)
    : hidden(hidden_), tasks(tasks_), values(2 * hidden_ + tasks_ * hidden_ + tasks_, 0.0) {}

AdapterParams init_adapter(std::size_t tasks, std::size_t hidden, std::uint64_t seed) {
  AdapterParams a(tasks, hidden);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  for (std::size_t j = 0; j < hidden; ++j) a.values[j] = w(rng);
  return a;
}

Matrix adapter_forward(const AdapterParams& adapter, std::span<const double> ybar) {
  Matrix out(ybar.size(), adapter.tasks);
  std::vector<double> h(adapter.hidden);
  const auto w = adapter.w();
  const auto b = adapter.b();
  for (std::size_t n = 0; n < ybar.size(); ++n) {
    for (std::size_t j = 0; j < adapter.hidden; ++j) h[j] = std::tanh(w[j] * ybar[n] + b[j]);
    for (std::size_t i = 0; i < adapter.tasks; ++i) {
      const auto hw = adapter.head_w(i);
      double s = adapter.head_b(i);
      for (std::size_t j = 0; j < adapter.hidden; ++j) s += hw[j] * h[j];
      out(n, i) = s;
    }
  }
  return out;
}

AdapterGrads adapter_backward(const AdapterParams& adapter, std::span<const double> ybar,
                              const Matrix& dout) {
  if (dout.rows != ybar.size() || dout.cols != adapter.tasks) {
    throw Error(ErrorCode::ShapeMismatch, "adapter gradient shape mismatch");
  }
  const std::size_t hd = adapter.hidden;
  AdapterGrads g;
  g.params.assign(adapter.values.size(), 0.0);
  g.input.assign(ybar.size(), 0.0);
  double* dw = g.params.data();
  double* db = dw + hd;
  double* dhw = db + hd;
  double* dhb = dhw + adapter.tasks * hd;
  const auto w = adapter.w();
  const auto b = adapter.b();
  std::vector<double> h(hd), dh(hd);
  for (std::size_t n = 0; n < ybar.size(); ++n) {
    for (std::size_t j = 0; j < hd; ++j) h[j] = std::tanh(w[j] * ybar[n] + b[j]);
    std::fill(dh.begin(), dh.end(), 0.0);
    for (std::size_t i = 0; i < adapter.tasks; ++i) {
      const double d = dout(n, i);
      const auto hw = adapter.head_w(i);
      for (std::size_t j = 0; j < hd; ++j) {
        dhw[i * hd + j] += d * h[j];
        dh[j] += d * hw[j];
      }
      dhb[i] += d;
    }
    double din = 0.0;
    for (std::size_t j = 0; j < hd; ++j) {
      const double da = dh[j] * (1.0 - h[j] * h[j]);
      dw[j] += da * ybar[n];
      db[j] += da;
      din += da * w[j];
    }
    g.input[n] = din;
  }
  return g;
}

double task_loss(std::span<const double> pred, std::span<const double> y) {
  if (pred.empty()) throw Error(ErrorCode::EmptyBatch, "task loss over no rows");
  if (pred.size() != y.size()) throw Error(ErrorCode::ShapeMismatch, "task loss length mismatch");
  double s = 0.0;
  for (std::size_t n = 0; n < pred.size(); ++n) s += (pred[n] - y[n]) * (pred[n] - y[n]);
  return s / static_cast<double>(pred.size());
}

double total_loss(double l_reg, std::span<const double> task_losses, double lambda) {
  if (task_losses.empty()) throw Error(ErrorCode::EmptyBatch, "no task losses");
  double s = 0.0;
  for (double l : task_losses) s += l;
  return l_reg + lambda * (s / static_cast<double>(task_losses.size()));
}

std::vector<double> training_signal(const FineTuneData& data, const FineTuneStrategy& strategy,
                                    std::size_t task, bool flip_anticorrelated) {
  if (data.tasks() == 0) throw Error(ErrorCode::ShapeMismatch, "dataset has no tasks");
  switch (strategy.kind) {
    case StrategyKind::SingleTask:
      if (task >= data.tasks()) {
        throw Error(ErrorCode::InvalidConfig, "task index " + std::to_string(task) + " >= T");
      }
      return data.y_std.column(task);
    case StrategyKind::MultiTaskAvg:
    case StrategyKind::MultiTaskAdapter: {
      if (!flip_anticorrelated) return average_targets(data.y_std);
      Matrix aligned = data.y_std;
      for (std::size_t c = 1; c < aligned.cols; ++c) {
        double cov = 0.0;
        for (std::size_t r = 0; r < aligned.rows; ++r) cov += aligned(r, 0) * aligned(r, c);
        if (cov < 0.0) {
          for (std::size_t r = 0; r < aligned.rows; ++r) aligned(r, c) = -aligned(r, c);
        }
      }
      return average_targets(aligned);
    }
    case StrategyKind::NoFineTune: break;
  }
  throw Error(ErrorCode::InvalidConfig, "no training signal without fine-tuning");
}

FineTuneRun::FineTuneRun(ModelParams params, const FineTuneData& data, StrategyKind kind,
                         std::size_t task, const FineTuneConfig& cfg)
    : params_(std::move(params)),
      data_(data),
      kind_(kind),
      cfg_(cfg),
      opt_(params_.values.size()),
      rng_(cfg.seed) {
  cfg_.validate();
  if (kind == StrategyKind::NoFineTune) {
    throw Error(ErrorCode::InvalidConfig, "nothing to run for nft");
  }
  if (data.rows() < 2) throw Error(ErrorCode::EmptyBatch, "fine-tuning needs at least 2 rows");
  if (data.y_std.rows != data.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "feature and target row counts differ");
  }
  signal_ = training_signal(data, FineTuneStrategy{kind, task}, task, cfg.flip_anticorrelated);
  support_ = build_support(signal_, params_.config.k_bins);
  if (kind == StrategyKind::MultiTaskAdapter) {
    // Separate stream so the row sampler matches the other strategies.
    adapter_ = init_adapter(data.tasks(), cfg.adapter_hidden, cfg.seed ^ 0xada97e5ULL);
    adapter_opt_ = OptState(adapter_->values.size());
  }
  order_.resize(data.rows());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
}

double FineTuneRun::step() {
  const std::size_t n = data_.rows();
  const std::size_t b = std::min(cfg_.batch_rows, n);
  // Partial Fisher-Yates: the first b entries of order_ become the batch.
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order_[i], order_[pick(rng_)]);
  }
  const auto rounded = static_cast<std::size_t>(
      std::llround(cfg_.context_fraction * static_cast<double>(b)));
  const std::size_t n_ctx = std::clamp<std::size_t>(rounded, 1, b - 1);
  const std::size_t n_q = b - n_ctx;
  const std::span<const std::size_t> ctx_rows(order_.data(), n_ctx);
  const std::span<const std::size_t> q_rows(order_.data() + n_ctx, n_q);

  ContextBatch batch;
  batch.x_train = select_rows(data_.x, ctx_rows);
  batch.x_query = select_rows(data_.x, q_rows);
  batch.y_train.resize(n_ctx);
  for (std::size_t i = 0; i < n_ctx; ++i) batch.y_train[i] = signal_[ctx_rows[i]];
  std::vector<double> y_q(n_q);
  for (std::size_t i = 0; i < n_q; ++i) y_q[i] = signal_[q_rows[i]];

  ForwardCache cache;
  const Matrix logits = forward(params_, batch, &cache);
  QueryLoss ql = query_loss(logits, y_q, support_);
  double loss = ql.loss;

  if (kind_ == StrategyKind::MultiTaskAdapter && cfg_.lambda > 0.0) {
    const std::size_t t = data_.tasks();
    const std::vector<double> ybar = decode_rows(ql.probs, support_);
    const Matrix pred = adapter_forward(*adapter_, ybar);
    std::vector<double> losses(t);
    Matrix dout(n_q, t);
    const double scale = cfg_.lambda / static_cast<double>(t) * 2.0 / static_cast<double>(n_q);
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> yi(n_q), pi(n_q);
      for (std::size_t r = 0; r < n_q; ++r) {
        yi[r] = data_.y_std(q_rows[r], i);
        pi[r] = pred(r, i);
        dout(r, i) = scale * (pi[r] - yi[r]);
      }
      losses[i] = task_loss(pi, yi);
    }
    loss = total_loss(ql.loss, losses, cfg_.lambda);
    const AdapterGrads ag = adapter_backward(*adapter_, ybar, dout);
    // d ybar / d z_k = q_k (c_k - ybar) through the decoded expectation.
    const auto& centers = support_.centers();
    for (std::size_t r = 0; r < n_q; ++r) {
      auto d = ql.dlogits.row(r);
      const auto q = ql.probs.row(r);
      for (std::size_t k = 0; k < support_.k(); ++k) {
        d[k] += ag.input[r] * q[k] * (centers[k] - ybar[r]);
      }
    }
    optimizer_step(adapter_opt_, adapter_->values, ag.params, cfg_.adapter_lr);
  }

  const ParamGrads grads = backward(params_, batch, cache, ql.dlogits);
  optimizer_step(opt_, params_.values, grads, cfg_.lr);
  ++steps_;
  return loss;
}

std::size_t FineTunedBundle::total_steps() const noexcept {
  std::size_t s = 0;
  for (const auto& r : runs) s += r.steps;
  return s;
}

double FineTunedBundle::total_seconds() const noexcept {
  double s = 0.0;
  for (const auto& r : runs) s += r.elapsed_seconds;
  return s;
}

const ModelParams& FineTunedBundle::for_task(std::size_t task) const {
  if (params.empty()) throw Error(ErrorCode::PreconditionFailed, "bundle holds no parameters");
  if (params.size() == 1) return params.front();
  if (task >= params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "bundle has no parameters for task " + std::to_string(task));
  }
  return params[task];
}

namespace {

struct RunOutput {
  ModelParams params;
  RunInfo info;
  std::optional<AdapterParams> adapter;
};

RunOutput execute(const ModelParams& params, const FineTuneData& data, StrategyKind kind,
                  std::size_t task, const FineTuneConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  FineTuneRun run(params, data, kind, task, cfg);
  const bool timed = !cfg.deterministic && cfg.budget_seconds.has_value();
  RunInfo info;
  info.task = task;
  for (;;) {
    if (timed) {
      const double elapsed = std::chrono::duration<double>(clock::now() - start).count();
      if (elapsed >= *cfg.budget_seconds) break;
    } else if (run.steps_done() >= cfg.max_steps) {
      break;
    }
    info.losses.push_back(run.step());
  }
  info.steps = run.steps_done();
  info.final_loss = info.losses.empty() ? 0.0 : info.losses.back();
  info.elapsed_seconds = std::chrono::duration<double>(clock::now() - start).count();
  RunOutput out{run.take_params(), std::move(info), run.adapter()};
  return out;
}

}  // namespace

FineTunedBundle finetune_sft(const ModelParams& params, const FineTuneData& data,
                             std::size_t task, const FineTuneConfig& cfg) {
  return run_strategy(params, data, FineTuneStrategy::single(task), cfg);
}

FineTunedBundle run_strategy(const ModelParams& params, const FineTuneData& data,
                             const FineTuneStrategy& strategy, const FineTuneConfig& cfg) {
  cfg.validate();
  FineTunedBundle bundle;
  bundle.strategy = strategy;
  switch (strategy.kind) {
    case StrategyKind::NoFineTune:
      bundle.params.push_back(params);
      break;
    case StrategyKind::SingleTask: {
      std::vector<std::size_t> tasks;
      if (strategy.task_index) {
        tasks.push_back(*strategy.task_index);
      } else {
        for (std::size_t i = 0; i < data.tasks(); ++i) tasks.push_back(i);
      }
      for (std::size_t task : tasks) {
        RunOutput out = execute(params, data, StrategyKind::SingleTask, task, cfg);
        bundle.params.push_back(std::move(out.params));
        bundle.runs.push_back(std::move(out.info));
      }
      break;
    }
    case StrategyKind::MultiTaskAvg:
    case StrategyKind::MultiTaskAdapter: {
      RunOutput out = execute(params, data, strategy.kind, 0, cfg);
      bundle.params.push_back(std::move(out.params));
      bundle.runs.push_back(std::move(out.info));
      bundle.adapter = std::move(out.adapter);
      break;
    }
  }
  return bundle;
}

}  // namespace mtpfn
