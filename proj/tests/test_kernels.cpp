#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "mtpfn/kernels.hpp"

namespace kn = mtpfn::kernels;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Reference product in long double with the error scale sum |a||b| per entry.
void reference_gemm(std::size_t m, std::size_t n, std::size_t k, const std::vector<double>& a,
                    std::size_t rs, std::size_t cs, const std::vector<double>& b, std::size_t ldb,
                    const std::vector<double>& c0, std::size_t ldc, bool acc,
                    std::vector<long double>& out, std::vector<double>& scale) {
  out.assign(m * n, 0.0L);
  scale.assign(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double s = acc ? c0[i * ldc + j] : 0.0L;
      double sc = acc ? std::abs(c0[i * ldc + j]) : 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        s += static_cast<long double>(a[i * rs + p * cs]) * b[p * ldb + j];
        sc += std::abs(a[i * rs + p * cs] * b[p * ldb + j]);
      }
      out[i * n + j] = s;
      scale[i * n + j] = sc;
    }
  }
}

struct BackendGuard {
  kn::Backend saved = kn::active_backend();
  ~BackendGuard() { kn::set_backend(saved); }
};

}  // namespace

TEST_CASE("backend selection") {
  BackendGuard guard;
  CHECK(kn::backend_available(kn::Backend::Scalar));
  kn::set_backend(kn::Backend::Scalar);
  CHECK(kn::active_backend() == kn::Backend::Scalar);
  CHECK(std::string(kn::active().name) == "scalar");
  if (kn::backend_available(kn::Backend::Avx2)) {
    kn::set_backend(kn::Backend::Avx2);
    CHECK(std::string(kn::active().name) == "avx2");
  } else {
    CHECK_THROWS_AS(kn::set_backend(kn::Backend::Avx2), std::invalid_argument);
  }
}

TEST_CASE("gemm variants agree with a long double reference across shapes and strides") {
  std::mt19937_64 rng(7);
  const std::vector<std::size_t> dims = {1, 2, 3, 4, 5, 7, 8, 9, 12, 13, 16, 17, 33};
  std::vector<const kn::KernelTable*> tables = {&kn::scalar_table()};
  if (kn::backend_available(kn::Backend::Avx2)) tables.push_back(&kn::avx2_table());
  std::uniform_int_distribution<std::size_t> pick(0, dims.size() - 1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = dims[pick(rng)], n = dims[pick(rng)], k = dims[pick(rng)];
    const bool transposed = trial % 2 == 1;
    const bool acc = trial % 3 == 0;
    const std::size_t pad = trial % 5;
    // A is m x k (row-major) or stored k x m when transposed.
    const std::size_t lda = (transposed ? m : k) + pad;
    const std::size_t rs = transposed ? 1 : lda;
    const std::size_t cs = transposed ? lda : 1;
    const auto a = random_vec(rng, (transposed ? k : m) * lda);
    const std::size_t ldb = n + pad;
    const auto b = random_vec(rng, k * ldb);
    const std::size_t ldc = n + pad;
    const auto c0 = random_vec(rng, m * ldc);
    std::vector<long double> ref;
    std::vector<double> scale;
    reference_gemm(m, n, k, a, rs, cs, b, ldb, c0, ldc, acc, ref, scale);
    for (const auto* t : tables) {
      auto c = c0;
      t->gemm(m, n, k, a.data(), rs, cs, b.data(), ldb, c.data(), ldc, acc);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double err = std::abs(static_cast<double>(c[i * ldc + j] - ref[i * n + j]));
          REQUIRE(err <= 1e-14 * (scale[i * n + j] + 1.0) * static_cast<double>(k + 1));
        }
        // Padding columns untouched.
        for (std::size_t j = n; j < ldc; ++j) REQUIRE(c[i * ldc + j] == c0[i * ldc + j]);
      }
    }
  }
}

TEST_CASE("avx2 gemm rows are bitwise independent of their position in the tile") {
  if (!kn::backend_available(kn::Backend::Avx2)) return;
  std::mt19937_64 rng(11);
  const std::size_t k = 19, n = 13;
  const auto b = random_vec(rng, k * n);
  const auto row = random_vec(rng, k);
  for (std::size_t m = 1; m <= 9; ++m) {
    std::vector<double> a(m * k);
    for (std::size_t i = 0; i < m; ++i) std::copy(row.begin(), row.end(), a.begin() + i * k);
    std::vector<double> c(m * n);
    kn::avx2_table().gemm(m, n, k, a.data(), k, 1, b.data(), n, c.data(), n, false);
    for (std::size_t i = 1; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) REQUIRE(c[i * n + j] == c[j]);
    }
  }
}

TEST_CASE("dot, axpy and adam agree between backends") {
  if (!kn::backend_available(kn::Backend::Avx2)) return;
  std::mt19937_64 rng(3);
  const auto& s = kn::scalar_table();
  const auto& v = kn::avx2_table();
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 64u, 1001u}) {
    const auto x = random_vec(rng, n);
    const auto y = random_vec(rng, n);
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale += std::abs(x[i] * y[i]);
    CHECK(std::abs(s.dot(n, x.data(), y.data()) - v.dot(n, x.data(), y.data())) <=
          1e-14 * (scale + 1.0) * static_cast<double>(n + 1));

    auto y1 = y, y2 = y;
    s.axpy(n, 0.37, x.data(), y1.data());
    v.axpy(n, 0.37, x.data(), y2.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-15);

    auto p1 = x, p2 = x;
    auto m1 = random_vec(rng, n), m2 = m1;
    std::vector<double> v1(n, 0.01), v2(n, 0.01);
    s.adam(n, p1.data(), m1.data(), v1.data(), y.data(), 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001);
    v.adam(n, p2.data(), m2.data(), v2.data(), y.data(), 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001);
    for (std::size_t i = 0; i < n; ++i) {
      // No fused operations in either adam path: results are identical.
      CHECK(p1[i] == p2[i]);
      CHECK(m1[i] == m2[i]);
      CHECK(v1[i] == v2[i]);
    }
  }
}

TEST_CASE("gemm_nt matches explicit transpose") {
  std::mt19937_64 rng(5);
  const std::size_t m = 6, n = 5, k = 7;
  const auto a = random_vec(rng, m * k);
  const auto b = random_vec(rng, n * k);
  std::vector<double> c(m * n);
  kn::gemm_nt(m, n, k, a.data(), k, b.data(), k, c.data(), n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-13));
    }
  }
}

TEST_CASE("softmax rows agree between backends and sum to one") {
  std::mt19937_64 rng(13);
  std::vector<const kn::KernelTable*> tables = {&kn::scalar_table()};
  if (kn::backend_available(kn::Backend::Avx2)) tables.push_back(&kn::avx2_table());
  for (std::size_t n : {1u, 2u, 3u, 4u, 5u, 7u, 8u, 9u, 33u, 1001u}) {
    for (double spread : {1.0, 30.0, 800.0}) {
      auto x = random_vec(rng, n);
      for (auto& v : x) v *= spread;
      std::vector<long double> ref(n);
      long double mx = -INFINITY, sum = 0.0L;
      for (double v : x) mx = std::max(mx, 0.5L * v);
      for (std::size_t i = 0; i < n; ++i) sum += ref[i] = std::exp(0.5L * x[i] - mx);
      for (const auto* t : tables) {
        auto y = x;
        t->softmax(n, 0.5, y.data());
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double expect = static_cast<double>(ref[i] / sum);
          total += y[i];
          // exp amplifies the rounding of its argument by |argument|.
          const double arg = static_cast<double>(mx - 0.5L * x[i]);
          REQUIRE(std::abs(y[i] - expect) <= 1e-15 * (10.0 + arg) * expect + 1e-300);
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
      }
    }
  }
}
