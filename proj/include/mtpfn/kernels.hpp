#pragma once

// Dense double-precision kernels behind every inner loop of the model, the
// optimizer and the MLP baseline. Each kernel has a portable scalar reference
// and an AVX2+FMA variant; the variant is chosen once at runtime from CPUID
// and can be overridden (tests pin both and compare them).
//
// Within one backend every output element is produced by the same sequence of
// floating point operations regardless of matrix shape or blocking, so results
// are bitwise reproducible and independent of how a batch is tiled.

#include <cstddef>
#include <string_view>

namespace mtpfn::kernels {

enum class Backend { Scalar, Avx2 };

struct KernelTable {
  const char* name;

  // C[m x n] = (accumulate ? C : 0) + A * B.
  // A(i, p) lives at a[i * rs_a + p * cs_a]; B is row-major with leading
  // dimension ldb; C is row-major with leading dimension ldc.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t rs_a,
               std::size_t cs_a, const double* b, std::size_t ldb, double* c, std::size_t ldc,
               bool accumulate);

  double (*dot)(std::size_t n, const double* x, const double* y);

  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);

  // x <- softmax(scale * x) over n >= 1 entries, with max subtraction.
  void (*softmax)(std::size_t n, double scale, double* x);

  // One bias-corrected adaptive-moment update over n parameters.
  void (*adam)(std::size_t n, double* param, double* m, double* v, const double* grad, double lr,
               double beta1, double beta2, double eps, double bias_corr1, double bias_corr2);
};

const KernelTable& scalar_table() noexcept;
const KernelTable& avx2_table() noexcept;

bool backend_available(Backend backend) noexcept;
Backend best_backend() noexcept;

// Active table; defaults to best_backend() on first use.
const KernelTable& active() noexcept;
Backend active_backend() noexcept;
// Throws std::invalid_argument when the CPU lacks the requested backend.
void set_backend(Backend backend);
std::string_view backend_name(Backend backend) noexcept;

// Row-major convenience wrappers over the active table.

// C[m x n] (+)= A[m x k] * B[k x n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc,
                    bool accumulate = false) {
  active().gemm(m, n, k, a, lda, 1, b, ldb, c, ldc, accumulate);
}

// C[m x n] (+)= A^T * B, with A stored k x m.
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc,
                    bool accumulate = false) {
  active().gemm(m, n, k, a, 1, lda, b, ldb, c, ldc, accumulate);
}

// C[m x n] (+)= A[m x k] * B^T, with B stored n x k. Transposes B into a
// thread-local scratch buffer and runs the nn kernel.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc,
             bool accumulate = false);

inline double dot(std::size_t n, const double* x, const double* y) {
  return active().dot(n, x, y);
}

inline void axpy(std::size_t n, double alpha, const double* x, double* y) {
  active().axpy(n, alpha, x, y);
}

inline void softmax(std::size_t n, double scale, double* x) { active().softmax(n, scale, x); }

}  // namespace mtpfn::kernels
