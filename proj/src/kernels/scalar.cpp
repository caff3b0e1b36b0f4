#include <algorithm>
#include <cmath>

#include "mtpfn/kernels.hpp"

namespace mtpfn::kernels {
namespace {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t rs_a,
                 std::size_t cs_a, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                 bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    }
    const double* arow = a + i * rs_a;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p * cs_a];
      const double* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

double dot_scalar(std::size_t n, const double* x, const double* y) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_scalar(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void softmax_scalar(std::size_t n, double scale, double* x) {
  double mx = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] *= scale;
    mx = std::max(mx, x[i]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

void adam_scalar(std::size_t n, double* param, double* m, double* v, const double* grad, double lr,
                 double beta1, double beta2, double eps, double bias_corr1, double bias_corr2) {
  const double one_m_b1 = 1.0 - beta1;
  const double one_m_b2 = 1.0 - beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + one_m_b1 * g;
    v[i] = beta2 * v[i] + one_m_b2 * (g * g);
    const double mhat = m[i] / bias_corr1;
    const double vhat = v[i] / bias_corr2;
    param[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace

const KernelTable& scalar_table() noexcept {
  static const KernelTable table{"scalar", gemm_scalar, dot_scalar, axpy_scalar, softmax_scalar,
                                    adam_scalar};
  return table;
}

}  // namespace mtpfn::kernels
