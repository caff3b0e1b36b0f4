#include <atomic>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtpfn/kernels.hpp"

namespace mtpfn::kernels {
namespace {

bool cpu_has_avx2_fma() noexcept {
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& table_for(Backend backend) noexcept {
  return backend == Backend::Avx2 ? avx2_table() : scalar_table();
}

std::atomic<const KernelTable*> g_active{nullptr};
std::atomic<Backend> g_backend{Backend::Scalar};

}  // namespace

bool backend_available(Backend backend) noexcept {
  switch (backend) {
    case Backend::Scalar: return true;
    case Backend::Avx2: {
      static const bool has = cpu_has_avx2_fma();
      return has;
    }
  }
  return false;
}

Backend best_backend() noexcept {
  return backend_available(Backend::Avx2) ? Backend::Avx2 : Backend::Scalar;
}

const KernelTable& active() noexcept {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    const Backend b = best_backend();
    g_backend.store(b, std::memory_order_relaxed);
    t = &table_for(b);
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

Backend active_backend() noexcept {
  (void)active();
  return g_backend.load(std::memory_order_relaxed);
}

void set_backend(Backend backend) {
  if (!backend_available(backend)) {
    throw std::invalid_argument("kernel backend not supported on this CPU: " +
                                std::string(backend_name(backend)));
  }
  g_backend.store(backend, std::memory_order_relaxed);
  g_active.store(&table_for(backend), std::memory_order_release);
}

std::string_view backend_name(Backend backend) noexcept {
  return backend == Backend::Avx2 ? "avx2" : "scalar";
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b + j * ldb;
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = brow[p];
  }
  active().gemm(m, n, k, a, lda, 1, bt.data(), n, c, ldc, accumulate);
}

}  // namespace mtpfn::kernels
