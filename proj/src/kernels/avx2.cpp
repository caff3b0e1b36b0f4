// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma
// -ffp-contract=off and is only entered after a CPUID check. Every element
// tail uses std::fma so that a value computed in a vector lane and one
// computed in a scalar tail are identical.

#include <algorithm>
#include <cmath>

#include "mtpfn/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define MTPFN_HAVE_AVX2_TU 1
#include <immintrin.h>
#else
#define MTPFN_HAVE_AVX2_TU 0
#endif

namespace mtpfn::kernels {

#if MTPFN_HAVE_AVX2_TU
namespace {

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 8;

// 4 rows x 8 columns register tile.
inline void tile_4x8(std::size_t k, const double* a, std::size_t rs_a, std::size_t cs_a,
                     const double* b, std::size_t ldb, double* c, std::size_t ldc,
                     bool accumulate) {
  __m256d c00, c01, c10, c11, c20, c21, c30, c31;
  if (accumulate) {
    c00 = _mm256_loadu_pd(c + 0 * ldc);
    c01 = _mm256_loadu_pd(c + 0 * ldc + 4);
    c10 = _mm256_loadu_pd(c + 1 * ldc);
    c11 = _mm256_loadu_pd(c + 1 * ldc + 4);
    c20 = _mm256_loadu_pd(c + 2 * ldc);
    c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
    c30 = _mm256_loadu_pd(c + 3 * ldc);
    c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
  } else {
    c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_pd();
  }
  const double* a0 = a;
  const double* a1 = a + rs_a;
  const double* a2 = a + 2 * rs_a;
  const double* a3 = a + 3 * rs_a;
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb;
    const __m256d b0 = _mm256_loadu_pd(brow);
    const __m256d b1 = _mm256_loadu_pd(brow + 4);
    const std::size_t off = p * cs_a;
    __m256d av = _mm256_broadcast_sd(a0 + off);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a1 + off);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a2 + off);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a3 + off);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c + 0 * ldc, c00);
  _mm256_storeu_pd(c + 0 * ldc + 4, c01);
  _mm256_storeu_pd(c + 1 * ldc, c10);
  _mm256_storeu_pd(c + 1 * ldc + 4, c11);
  _mm256_storeu_pd(c + 2 * ldc, c20);
  _mm256_storeu_pd(c + 2 * ldc + 4, c21);
  _mm256_storeu_pd(c + 3 * ldc, c30);
  _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

// 1 row x 8 columns.
inline void tile_1x8(std::size_t k, const double* a, std::size_t cs_a, const double* b,
                     std::size_t ldb, double* c, bool accumulate) {
  __m256d c0 = accumulate ? _mm256_loadu_pd(c) : _mm256_setzero_pd();
  __m256d c1 = accumulate ? _mm256_loadu_pd(c + 4) : _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb;
    const __m256d av = _mm256_broadcast_sd(a + p * cs_a);
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow), c0);
    c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 4), c1);
  }
  _mm256_storeu_pd(c, c0);
  _mm256_storeu_pd(c + 4, c1);
}

// 1 row x 4 columns.
inline void tile_1x4(std::size_t k, const double* a, std::size_t cs_a, const double* b,
                     std::size_t ldb, double* c, bool accumulate) {
  __m256d c0 = accumulate ? _mm256_loadu_pd(c) : _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d av = _mm256_broadcast_sd(a + p * cs_a);
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb), c0);
  }
  _mm256_storeu_pd(c, c0);
}

// 1 row x n columns (n < 4), scalar fma.
inline void tile_1xn(std::size_t n, std::size_t k, const double* a, std::size_t cs_a,
                     const double* b, std::size_t ldb, double* c, bool accumulate) {
  for (std::size_t j = 0; j < n; ++j) {
    double acc = accumulate ? c[j] : 0.0;
    for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[p * cs_a], b[p * ldb + j], acc);
    c[j] = acc;
  }
}

void row_strip(std::size_t n, std::size_t k, const double* a, std::size_t cs_a, const double* b,
               std::size_t ldb, double* c, bool accumulate, std::size_t j0) {
  std::size_t j = j0;
  for (; j + 8 <= n; j += 8) tile_1x8(k, a, cs_a, b + j, ldb, c + j, accumulate);
  for (; j + 4 <= n; j += 4) tile_1x4(k, a, cs_a, b + j, ldb, c + j, accumulate);
  if (j < n) tile_1xn(n - j, k, a, cs_a, b + j, ldb, c + j, accumulate);
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t rs_a,
               std::size_t cs_a, const double* b, std::size_t ldb, double* c, std::size_t ldc,
               bool accumulate) {
  std::size_t i = 0;
  const std::size_t n8 = n - n % kNr;
  for (; i + kMr <= m; i += kMr) {
    const double* ai = a + i * rs_a;
    double* ci = c + i * ldc;
    for (std::size_t j = 0; j < n8; j += kNr) {
      tile_4x8(k, ai, rs_a, cs_a, b + j, ldb, ci + j, ldc, accumulate);
    }
    if (n8 < n) {
      for (std::size_t r = 0; r < kMr; ++r) {
        row_strip(n, k, ai + r * rs_a, cs_a, b, ldb, ci + r * ldc, accumulate, n8);
      }
    }
  }
  for (; i < m; ++i) row_strip(n, k, a + i * rs_a, cs_a, b, ldb, c + i * ldc, accumulate, 0);
}

double dot_avx2(std::size_t n, const double* x, const double* y) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  }
  const __m256d s = _mm256_add_pd(s0, s1);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, s);
  double total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) total = std::fma(x[i], y[i], total);
  return total;
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

// exp(x) for x <= 0: range reduction by ln 2 and a degree-13 Taylor
// polynomial on |r| <= ln(2)/2, accurate to a few ulp. Inputs below -708
// flush to zero instead of producing subnormals.
inline __m256d exp_nonpositive(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634);
  const __m256d ln2_hi = _mm256_set1_pd(6.93147180369123816490e-01);
  const __m256d ln2_lo = _mm256_set1_pd(1.90821492927058770002e-10);
  const __m256d floor_x = _mm256_set1_pd(-708.0);
  const __m256d under = _mm256_cmp_pd(x, floor_x, _CMP_LT_OQ);
  x = _mm256_max_pd(x, floor_x);
  const __m256d nf = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                     _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(nf, ln2_hi, x);
  r = _mm256_fnmadd_pd(nf, ln2_lo, r);
  static constexpr double kInvFact[] = {
      1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0,
      1.0 / 362880.0,     1.0 / 40320.0,     1.0 / 5040.0,     1.0 / 720.0,
      1.0 / 120.0,        1.0 / 24.0,        1.0 / 6.0,        0.5,
      1.0,                1.0};
  __m256d p = _mm256_set1_pd(kInvFact[0]);
  for (std::size_t i = 1; i < sizeof(kInvFact) / sizeof(kInvFact[0]); ++i) {
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kInvFact[i]));
  }
  const __m128i n32 = _mm256_cvtpd_epi32(nf);
  const __m256i bits = _mm256_slli_epi64(
      _mm256_add_epi64(_mm256_cvtepi32_epi64(n32), _mm256_set1_epi64x(1023)), 52);
  const __m256d out = _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
  return _mm256_andnot_pd(under, out);
}

void softmax_avx2(std::size_t n, double scale, double* x) {
  const __m256d vs = _mm256_set1_pd(scale);
  __m256d vmax = _mm256_set1_pd(-INFINITY);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xi = _mm256_mul_pd(_mm256_loadu_pd(x + i), vs);
    _mm256_storeu_pd(x + i, xi);
    vmax = _mm256_max_pd(vmax, xi);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, vmax);
  double mx = std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
  for (; i < n; ++i) {
    x[i] *= scale;
    mx = std::max(mx, x[i]);
  }
  const __m256d vm = _mm256_set1_pd(mx);
  __m256d vsum = _mm256_setzero_pd();
  i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d e = exp_nonpositive(_mm256_sub_pd(_mm256_loadu_pd(x + i), vm));
    _mm256_storeu_pd(x + i, e);
    vsum = _mm256_add_pd(vsum, e);
  }
  if (i < n) {
    alignas(32) double tail[4] = {-INFINITY, -INFINITY, -INFINITY, -INFINITY};
    for (std::size_t j = i; j < n; ++j) tail[j - i] = x[j] - mx;
    const __m256d e = exp_nonpositive(_mm256_load_pd(tail));
    _mm256_store_pd(tail, e);
    for (std::size_t j = i; j < n; ++j) x[j] = tail[j - i];
    vsum = _mm256_add_pd(vsum, e);
  }
  _mm256_store_pd(lanes, vsum);
  const double inv = 1.0 / ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]));
  const __m256d vinv = _mm256_set1_pd(inv);
  i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), vinv));
  for (; i < n; ++i) x[i] *= inv;
}

void adam_avx2(std::size_t n, double* param, double* m, double* v, const double* grad, double lr,
               double beta1, double beta2, double eps, double bias_corr1, double bias_corr2) {
  const double one_m_b1 = 1.0 - beta1;
  const double one_m_b2 = 1.0 - beta2;
  const __m256d vb1 = _mm256_set1_pd(beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2);
  const __m256d v1b1 = _mm256_set1_pd(one_m_b1);
  const __m256d v1b2 = _mm256_set1_pd(one_m_b2);
  const __m256d vbc1 = _mm256_set1_pd(bias_corr1);
  const __m256d vbc2 = _mm256_set1_pd(bias_corr2);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vlr = _mm256_set1_pd(lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    __m256d mi = _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(v1b1, g));
    __m256d vi = _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)),
                               _mm256_mul_pd(v1b2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d mhat = _mm256_div_pd(mi, vbc1);
    const __m256d vhat = _mm256_div_pd(vi, vbc2);
    const __m256d step =
        _mm256_mul_pd(vlr, _mm256_div_pd(mhat, _mm256_add_pd(_mm256_sqrt_pd(vhat), veps)));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + one_m_b1 * g;
    v[i] = beta2 * v[i] + one_m_b2 * (g * g);
    const double mhat = m[i] / bias_corr1;
    const double vhat = v[i] / bias_corr2;
    param[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace

const KernelTable& avx2_table() noexcept {
  static const KernelTable table{"avx2", gemm_avx2, dot_avx2, axpy_avx2, softmax_avx2,
                                    adam_avx2};
  return table;
}

#else

const KernelTable& avx2_table() noexcept { return scalar_table(); }

#endif

}  // namespace mtpfn::kernels
