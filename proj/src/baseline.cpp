#include "mtpfn/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mtpfn/error.hpp"
#include "mtpfn/kernels.hpp"
#include "mtpfn/optimizer.hpp"

namespace mtpfn {

namespace kn = kernels;

void MlpConfig::validate() const {
  if (hidden < 1 || batch_size < 1) throw Error(ErrorCode::InvalidConfig, "mlp hidden and batch_size must be >= 1");
  if (!(lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "mlp lr must be > 0");
}

namespace {

struct Offsets {
  std::size_t w1, b1, w2, b2, total;
  Offsets(std::size_t d, std::size_t h)
      : w1(0), b1(d * h), w2(d * h + h), b2(d * h + 2 * h), total(d * h + 2 * h + 1) {}
};

// Hidden activations of rows [x, x + n*d) into h_out (n x hidden).
void hidden_layer(const Mlp& m, const double* x, std::size_t n, double* h_out) {
  const Offsets o(m.d, m.hidden);
  for (std::size_t r = 0; r < n; ++r) std::copy_n(m.values.data() + o.b1, m.hidden, h_out + r * m.hidden);
  kn::gemm_nn(n, m.hidden, m.d, x, m.d, m.values.data() + o.w1, m.hidden, h_out, m.hidden, true);
  for (std::size_t i = 0; i < n * m.hidden; ++i) h_out[i] = std::max(h_out[i], 0.0);
}

}  // namespace

std::vector<double> Mlp::predict(const Matrix& x) const {
  if (x.cols != d) throw Error(ErrorCode::ShapeMismatch, "mlp input width differs from training");
  const Offsets o(d, hidden);
  std::vector<double> h(x.rows * hidden);
  hidden_layer(*this, x.data.data(), x.rows, h.data());
  std::vector<double> out(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) {
    out[r] = kn::dot(hidden, h.data() + r * hidden, values.data() + o.w2) + values[o.b2];
  }
  return out;
}

Mlp train_mlp(const Matrix& x, std::span<const double> y, const MlpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (x.rows == 0) throw Error(ErrorCode::EmptyBatch, "mlp training needs rows");
  if (y.size() != x.rows) throw Error(ErrorCode::ShapeMismatch, "mlp targets differ from rows");
  Mlp m;
  m.d = x.cols;
  m.hidden = cfg.hidden;
  const Offsets o(m.d, m.hidden);
  m.values.assign(o.total, 0.0);
  std::mt19937_64 rng(seed);
  const double a1 = std::sqrt(6.0 / static_cast<double>(m.d));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(m.hidden));
  std::uniform_real_distribution<double> u1(-a1, a1), u2(-a2, a2);
  for (std::size_t i = 0; i < m.d * m.hidden; ++i) m.values[o.w1 + i] = u1(rng);
  for (std::size_t i = 0; i < m.hidden; ++i) m.values[o.w2 + i] = u2(rng);

  OptState opt(o.total);
  std::vector<double> grads(o.total);
  std::vector<std::size_t> order(x.rows);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = std::min(cfg.batch_size, x.rows);
  std::vector<double> xb(bs * m.d), hb(bs * m.hidden), dh(bs * m.hidden), dout(bs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < x.rows; start += bs) {
      const std::size_t n = std::min(bs, x.rows - start);
      for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(x.data.data() + order[start + r] * m.d, m.d, xb.data() + r * m.d);
      }
      hidden_layer(m, xb.data(), n, hb.data());
      std::fill(grads.begin(), grads.end(), 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        const double pred = kn::dot(m.hidden, hb.data() + r * m.hidden, m.values.data() + o.w2) + m.values[o.b2];
        dout[r] = 2.0 * (pred - y[order[start + r]]) / static_cast<double>(n);
        grads[o.b2] += dout[r];
        kn::axpy(m.hidden, dout[r], hb.data() + r * m.hidden, grads.data() + o.w2);
        for (std::size_t j = 0; j < m.hidden; ++j) {
          const double g = hb[r * m.hidden + j] > 0.0 ? dout[r] * m.values[o.w2 + j] : 0.0;
          dh[r * m.hidden + j] = g;
          grads[o.b1 + j] += g;
        }
      }
      kn::gemm_tn(m.d, m.hidden, n, xb.data(), m.d, dh.data(), m.hidden, grads.data() + o.w1, m.hidden);
      optimizer_step(opt, m.values, grads, cfg.lr);
    }
  }
  return m;
}

std::vector<Mlp> train_stl_mlp(const Matrix& x, const Matrix& y_std, const MlpConfig& cfg,
                               std::uint64_t seed) {
  std::vector<Mlp> models;
  for (std::size_t t = 0; t < y_std.cols; ++t) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(t)};
    std::mt19937_64 pick(seq);
    models.push_back(train_mlp(x, y_std.column(t), cfg, pick()));
  }
  return models;
}

Matrix predict_stl(const std::vector<Mlp>& models, const Matrix& x) {
  Matrix out(x.rows, models.size());
  for (std::size_t t = 0; t < models.size(); ++t) {
    const std::vector<double> col = models[t].predict(x);
    for (std::size_t r = 0; r < x.rows; ++r) out(r, t) = col[r];
  }
  return out;
}

}  // namespace mtpfn
