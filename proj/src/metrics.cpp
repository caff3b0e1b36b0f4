#include "mtpfn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mtpfn/error.hpp"

namespace mtpfn {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "metric inputs differ in length");
  if (a.empty()) throw Error(ErrorCode::EmptyBatch, "metric over no rows");
}

double population_variance(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / n;
}

}  // namespace

double mae_pct(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) throw Error(ErrorCode::ZeroTrueValue, "true value is zero at row " + std::to_string(i));
    s += std::abs((y[i] - yhat[i]) / y[i]);
  }
  return 100.0 * s / static_cast<double>(y.size());
}

double pam(std::span<const double> y, std::span<const double> yhat, double eps) {
  check_pair(y, yhat);
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidConfig, "pam threshold must be > 0");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (yhat[i] == 0.0) {
      throw Error(ErrorCode::ZeroPredictedValue, "prediction is zero at row " + std::to_string(i));
    }
    if (std::abs((y[i] - yhat[i]) / yhat[i]) <= eps) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(y.size());
}

double explained_variance(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat);
  if (y.size() < 2) throw Error(ErrorCode::PreconditionFailed, "explained variance needs N >= 2");
  const double var_y = population_variance(y);
  if (!(var_y > 0.0)) throw Error(ErrorCode::ZeroTargetVariance, "targets are constant");
  std::vector<double> resid(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) resid[i] = y[i] - yhat[i];
  return 1.0 - population_variance(resid) / var_y;
}

double mtl_gain(std::span<const double> method_mae, std::span<const double> baseline_mae) {
  check_pair(method_mae, baseline_mae);
  double s = 0.0;
  for (std::size_t i = 0; i < method_mae.size(); ++i) {
    if (!(baseline_mae[i] > 0.0)) {
      throw Error(ErrorCode::ZeroBaseline, "baseline error of task " + std::to_string(i) + " is not positive");
    }
    s += (baseline_mae[i] - method_mae[i]) / baseline_mae[i];
  }
  return 100.0 * s / static_cast<double>(method_mae.size());
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i + 1;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    // Positions i..j-1 share the mean of ranks i+1..j.
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t p = i; p < j; ++p) ranks[idx[p]] = r;
    i = j;
  }
  return ranks;
}

Matrix spearman_matrix(const Matrix& y) {
  if (y.rows < 3) throw Error(ErrorCode::PreconditionFailed, "spearman needs N >= 3");
  const std::size_t t = y.cols;
  std::vector<std::vector<double>> centered(t);
  std::vector<double> sumsq(t);
  for (std::size_t c = 0; c < t; ++c) {
    std::vector<double> r = average_ranks(y.column(c));
    const double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
    double ss = 0.0;
    for (double& x : r) {
      x -= mean;
      ss += x * x;
    }
    if (!(ss > 0.0)) {
      throw Error(ErrorCode::DegenerateColumn, "column " + std::to_string(c) + " has a single distinct value");
    }
    sumsq[c] = ss;
    centered[c] = std::move(r);
  }
  Matrix out(t, t);
  for (std::size_t a = 0; a < t; ++a) {
    out(a, a) = 1.0;
    for (std::size_t b = a + 1; b < t; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < y.rows; ++i) s += centered[a][i] * centered[b][i];
      const double rho = std::clamp(s / std::sqrt(sumsq[a] * sumsq[b]), -1.0, 1.0);
      out(a, b) = rho;
      out(b, a) = rho;
    }
  }
  return out;
}

std::vector<double> MetricsReport::mae_column() const {
  std::vector<double> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(t.mae_pct);
  return out;
}

MetricsReport evaluate(const Matrix& y, const Matrix& yhat, std::span<const double> eps_list) {
  if (y.rows != yhat.rows || y.cols != yhat.cols) {
    throw Error(ErrorCode::ShapeMismatch, "prediction and truth shapes differ");
  }
  MetricsReport report;
  report.eps_list.assign(eps_list.begin(), eps_list.end());
  for (std::size_t c = 0; c < y.cols; ++c) {
    const std::vector<double> yc = y.column(c);
    const std::vector<double> pc = yhat.column(c);
    TaskMetrics m;
    m.mae_pct = mae_pct(yc, pc);
    for (double eps : eps_list) m.pam.push_back(pam(yc, pc, eps));
    m.ev = explained_variance(yc, pc);
    report.tasks.push_back(std::move(m));
  }
  return report;
}

std::string pam_label(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", eps * 100.0);
  std::string s = std::string("pam") + buf;
  std::replace(s.begin(), s.end(), '.', '_');
  return s;
}

}  // namespace mtpfn
