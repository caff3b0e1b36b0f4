#include "mtpfn/prior.hpp"

#include <cmath>
#include <numeric>

#include "mtpfn/objective.hpp"
#include "mtpfn/optimizer.hpp"
#include "mtpfn/support_bar.hpp"

namespace mtpfn {

void PriorConfig::validate() const {
  if (d_min < 1 || n_min < 1 || teacher_hidden < 1 || tasks_per_step < 1) {
    throw Error(ErrorCode::InvalidConfig, "prior counts must be >= 1");
  }
  if (d_min > d_max || n_min > n_max || noise_min > noise_max) {
    throw Error(ErrorCode::InvalidConfig, "prior ranges must be nonempty");
  }
  if (n_min < 4) throw Error(ErrorCode::InvalidConfig, "prior tasks need at least 4 rows");
  if (noise_min < 0.0) throw Error(ErrorCode::InvalidConfig, "noise std must be >= 0");
}

std::vector<double> Teacher::apply(const Matrix& x) const {
  std::vector<double> out(x.rows);
  std::vector<double> h(hidden);
  for (std::size_t r = 0; r < x.rows; ++r) {
    std::copy(b1.begin(), b1.end(), h.begin());
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = x(r, i);
      const double* w = w1.data() + i * hidden;
      for (std::size_t j = 0; j < hidden; ++j) h[j] += xi * w[j];
    }
    double s = 0.0;
    for (std::size_t j = 0; j < hidden; ++j) {
      double a = h[j];
      switch (activation) {
        case Activation::Tanh: a = std::tanh(a); break;
        case Activation::Sine: a = std::sin(a); break;
        case Activation::PiecewiseLinear: a = a > 0.0 ? a : 0.0; break;
      }
      s += a * w2[j];
    }
    out[r] = s;
  }
  return out;
}

Teacher sample_teacher(std::mt19937_64& rng, std::size_t d, std::size_t hidden,
                       Activation activation) {
  Teacher t;
  t.d = d;
  t.hidden = hidden;
  t.activation = activation;
  std::uniform_real_distribution<double> gain(0.5, 2.0);
  const double g = gain(rng);
  std::normal_distribution<double> w_in(0.0, g / std::sqrt(static_cast<double>(d)));
  std::normal_distribution<double> bias(0.0, 0.5);
  std::normal_distribution<double> w_out(0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
  t.w1.resize(d * hidden);
  for (auto& w : t.w1) w = w_in(rng);
  t.b1.resize(hidden);
  for (auto& b : t.b1) b = bias(rng);
  t.w2.resize(hidden);
  for (auto& w : t.w2) w = w_out(rng);
  return t;
}

bool standardize_in_place(std::vector<double>& v) {
  if (v.empty()) return false;
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > 1e-12 * (1.0 + std::abs(mean)))) return false;
  for (double& x : v) x = (x - mean) / sd;
  return true;
}

SyntheticTask sample_task(std::mt19937_64& rng, const PriorConfig& prior) {
  prior.validate();
  std::uniform_int_distribution<std::size_t> pick_d(prior.d_min, prior.d_max);
  std::uniform_int_distribution<std::size_t> pick_n(prior.n_min, prior.n_max);
  std::uniform_int_distribution<int> pick_act(0, 2);
  std::uniform_real_distribution<double> pick_noise(prior.noise_min, prior.noise_max);
  std::normal_distribution<double> normal;

  SyntheticTask task;
  const std::size_t d = pick_d(rng);
  const std::size_t n = pick_n(rng);
  task.x = Matrix(n, d);
  for (auto& v : task.x.data) v = normal(rng);
  // A teacher that is constant on this sample (all hidden units dead) is
  // redrawn; the draws stay on the same stream so the task is reproducible.
  for (;;) {
    const auto act = static_cast<Activation>(pick_act(rng));
    const Teacher teacher = sample_teacher(rng, d, prior.teacher_hidden, act);
    std::vector<double> signal = teacher.apply(task.x);
    if (!standardize_in_place(signal)) continue;
    const double sigma = pick_noise(rng);
    for (auto& s : signal) s += sigma * normal(rng);
    if (!standardize_in_place(signal)) continue;
    task.y = std::move(signal);
    return task;
  }
}

TaskSplit split_task(const SyntheticTask& task) {
  const std::size_t n = task.x.rows;
  const std::size_t n_ctx = n / 2;
  TaskSplit s;
  s.batch.x_train = Matrix(n_ctx, task.x.cols);
  s.batch.x_query = Matrix(n - n_ctx, task.x.cols);
  std::copy(task.x.data.begin(), task.x.data.begin() + static_cast<std::ptrdiff_t>(n_ctx * task.x.cols),
            s.batch.x_train.data.begin());
  std::copy(task.x.data.begin() + static_cast<std::ptrdiff_t>(n_ctx * task.x.cols), task.x.data.end(),
            s.batch.x_query.data.begin());
  s.batch.y_train.assign(task.y.begin(), task.y.begin() + static_cast<std::ptrdiff_t>(n_ctx));
  s.y_query.assign(task.y.begin() + static_cast<std::ptrdiff_t>(n_ctx), task.y.end());
  return s;
}

std::mt19937_64 task_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

std::vector<double> pretrain(ModelParams& params, const PriorConfig& prior, std::size_t steps,
                             double lr, std::uint64_t seed, const StepCallback& on_step) {
  prior.validate();
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorCode::InvalidConfig, "lr must be finite and > 0");
  std::vector<double> curve;
  curve.reserve(steps);
  OptState opt(params.values.size());
  ParamGrads grads(params.values.size());
  const double inv_tasks = 1.0 / static_cast<double>(prior.tasks_per_step);
  for (std::size_t step = 0; step < steps; ++step) {
    std::fill(grads.begin(), grads.end(), 0.0);
    double loss = 0.0;
    for (std::size_t t = 0; t < prior.tasks_per_step; ++t) {
      auto rng = task_rng(seed, step, t);
      const TaskSplit s = split_task(sample_task(rng, prior));
      const SupportSpec spec = build_support(s.batch.y_train, params.config.k_bins);
      ForwardCache cache;
      const Matrix logits = forward(params, s.batch, &cache);
      for (double z : logits.data) {
        if (!std::isfinite(z)) throw TrainingDiverged(step, std::move(curve));
      }
      QueryLoss q = query_loss(logits, s.y_query, spec);
      loss += q.loss * inv_tasks;
      for (auto& g : q.dlogits.data) g *= inv_tasks;
      const ParamGrads g = backward(params, s.batch, cache, q.dlogits);
      for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += g[i];
    }
    if (!std::isfinite(loss)) throw TrainingDiverged(step, std::move(curve));
    try {
      optimizer_step(opt, params.values, grads, lr);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteGradient) throw;
      throw TrainingDiverged(step, std::move(curve));
    }
    curve.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  return curve;
}

IclScore score_icl(const ModelParams& params, const SyntheticTask& task) {
  const TaskSplit s = split_task(task);
  const SupportSpec spec = build_support(s.batch.y_train, params.config.k_bins);
  const std::vector<double> pred = decode_rows(support_probs(forward(params, s.batch), spec), spec);
  const double ctx_mean = std::accumulate(s.batch.y_train.begin(), s.batch.y_train.end(), 0.0) /
                          static_cast<double>(s.batch.y_train.size());
  IclScore out;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out.model_mse += (pred[i] - s.y_query[i]) * (pred[i] - s.y_query[i]);
    out.mean_mse += (ctx_mean - s.y_query[i]) * (ctx_mean - s.y_query[i]);
  }
  out.model_mse /= static_cast<double>(pred.size());
  out.mean_mse /= static_cast<double>(pred.size());
  return out;
}

}  // namespace mtpfn
