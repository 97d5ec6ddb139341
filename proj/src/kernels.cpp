// Runtime kernel dispatch: cpuid detection once, MTGA_KERNELS env override,
// set_isa() for tests.

#include "mtga/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

#include "kernels_internal.hpp"

namespace mtga::kernels {

namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(_M_X64)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect_isa() {
  if (const char* env = std::getenv("MTGA_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (!cpu_has_avx2_fma())
        throw std::runtime_error("MTGA_KERNELS=avx2 requested but CPU lacks AVX2+FMA");
      return Isa::avx2;
    }
    throw std::runtime_error(std::string("MTGA_KERNELS: unknown value '") + env +
                             "' (expected 'scalar' or 'avx2')");
  }
  return cpu_has_avx2_fma() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& isa_slot() {
  static std::atomic<Isa> isa{detect_isa()};
  return isa;
}

}  // namespace

Isa active_isa() { return isa_slot().load(std::memory_order_relaxed); }

bool isa_supported(Isa isa) { return isa == Isa::scalar || cpu_has_avx2_fma(); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) throw std::runtime_error("requested kernel ISA not supported on this CPU");
  isa_slot().store(isa, std::memory_order_relaxed);
}

const char* isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, float alpha,
          const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
          std::int64_t ldc) {
  detail::GemmArgs<float> args{trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc};
  active_isa() == Isa::avx2 ? detail::gemm_avx2(args) : detail::gemm_scalar(args);
}

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
          const double* a, std::int64_t lda, const double* b, std::int64_t ldb, double beta,
          double* c, std::int64_t ldc) {
  detail::GemmArgs<double> args{trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc};
  active_isa() == Isa::avx2 ? detail::gemm_avx2(args) : detail::gemm_scalar(args);
}

#define MTGA_DISPATCH_EW3(NAME)                                                    \
  void NAME(std::int64_t n, const float* a, const float* b, float* out) {          \
    active_isa() == Isa::avx2 ? detail::NAME##_avx2_k(n, a, b, out)                \
                              : detail::NAME##_scalar_k(n, a, b, out);             \
  }                                                                                \
  void NAME(std::int64_t n, const double* a, const double* b, double* out) {       \
    active_isa() == Isa::avx2 ? detail::NAME##_avx2_k(n, a, b, out)                \
                              : detail::NAME##_scalar_k(n, a, b, out);             \
  }

MTGA_DISPATCH_EW3(add)
MTGA_DISPATCH_EW3(sub)
MTGA_DISPATCH_EW3(mul)
#undef MTGA_DISPATCH_EW3

void axpy(std::int64_t n, float alpha, const float* x, float* y) {
  active_isa() == Isa::avx2 ? detail::axpy_avx2_k(n, alpha, x, y)
                            : detail::axpy_scalar_k(n, alpha, x, y);
}
void axpy(std::int64_t n, double alpha, const double* x, double* y) {
  active_isa() == Isa::avx2 ? detail::axpy_avx2_k(n, alpha, x, y)
                            : detail::axpy_scalar_k(n, alpha, x, y);
}

void scale_shift(std::int64_t n, float alpha, float beta, const float* x, float* out) {
  active_isa() == Isa::avx2 ? detail::scale_shift_avx2_k(n, alpha, beta, x, out)
                            : detail::scale_shift_scalar_k(n, alpha, beta, x, out);
}
void scale_shift(std::int64_t n, double alpha, double beta, const double* x, double* out) {
  active_isa() == Isa::avx2 ? detail::scale_shift_avx2_k(n, alpha, beta, x, out)
                            : detail::scale_shift_scalar_k(n, alpha, beta, x, out);
}

void relu(std::int64_t n, const float* x, float* out) {
  active_isa() == Isa::avx2 ? detail::relu_avx2_k(n, x, out) : detail::relu_scalar_k(n, x, out);
}
void relu(std::int64_t n, const double* x, double* out) {
  active_isa() == Isa::avx2 ? detail::relu_avx2_k(n, x, out) : detail::relu_scalar_k(n, x, out);
}

void relu_mask_mul(std::int64_t n, const float* g, const float* x, float* out) {
  active_isa() == Isa::avx2 ? detail::relu_mask_mul_avx2_k(n, g, x, out)
                            : detail::relu_mask_mul_scalar_k(n, g, x, out);
}
void relu_mask_mul(std::int64_t n, const double* g, const double* x, double* out) {
  active_isa() == Isa::avx2 ? detail::relu_mask_mul_avx2_k(n, g, x, out)
                            : detail::relu_mask_mul_scalar_k(n, g, x, out);
}

double stable_sum(std::int64_t n, const float* x) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]);
  return acc;
}
double stable_sum(std::int64_t n, const double* x) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

}  // namespace mtga::kernels
