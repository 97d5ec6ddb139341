// Scalar reference kernels. These define the semantics; the SIMD variants are
// equivalence-tested against them.

#include <algorithm>

#include "kernels_internal.hpp"

namespace mtga::kernels::detail {

namespace {

template <typename T>
void gemm_scalar_impl(const GemmArgs<T>& g) {
  const std::int64_t m = g.m, n = g.n, k = g.k;
  // beta pass
  if (g.beta == T(0)) {
    for (std::int64_t i = 0; i < m; ++i) std::fill(g.c + i * g.ldc, g.c + i * g.ldc + n, T(0));
  } else if (g.beta != T(1)) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) g.c[i * g.ldc + j] *= g.beta;
  }
  if (g.alpha == T(0) || m == 0 || n == 0 || k == 0) return;

  auto a_at = [&](std::int64_t i, std::int64_t p) {
    return g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
  };
  // i-p-j order keeps the inner loop contiguous over B rows and C rows.
  if (!g.trans_b) {
    for (std::int64_t i = 0; i < m; ++i) {
      T* crow = g.c + i * g.ldc;
      for (std::int64_t p = 0; p < k; ++p) {
        const T aip = g.alpha * a_at(i, p);
        const T* brow = g.b + p * g.ldb;
        for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  } else {
    // op(B) = B^T, stored B is n x k; dot rows of A' with rows of B.
    for (std::int64_t i = 0; i < m; ++i) {
      T* crow = g.c + i * g.ldc;
      for (std::int64_t j = 0; j < n; ++j) {
        const T* brow = g.b + j * g.ldb;
        T acc = T(0);
        for (std::int64_t p = 0; p < k; ++p) acc += a_at(i, p) * brow[p];
        crow[j] += g.alpha * acc;
      }
    }
  }
}

}  // namespace

void gemm_scalar(const GemmArgs<float>& g) { gemm_scalar_impl(g); }
void gemm_scalar(const GemmArgs<double>& g) { gemm_scalar_impl(g); }

#define MTGA_SCALAR_EW(NAME, EXPR)                                              \
  template <typename T>                                                         \
  static void NAME##_impl(std::int64_t n, const T* a, const T* b, T* out) {     \
    for (std::int64_t i = 0; i < n; ++i) out[i] = (EXPR);                       \
  }                                                                             \
  void NAME##_k(std::int64_t n, const float* a, const float* b, float* out) {   \
    NAME##_impl(n, a, b, out);                                                  \
  }                                                                             \
  void NAME##_k(std::int64_t n, const double* a, const double* b, double* out) { \
    NAME##_impl(n, a, b, out);                                                  \
  }

MTGA_SCALAR_EW(add_scalar, a[i] + b[i])
MTGA_SCALAR_EW(sub_scalar, a[i] - b[i])
MTGA_SCALAR_EW(mul_scalar, a[i] * b[i])
#undef MTGA_SCALAR_EW

template <typename T>
static void axpy_impl(std::int64_t n, T alpha, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
void axpy_scalar_k(std::int64_t n, float alpha, const float* x, float* y) { axpy_impl(n, alpha, x, y); }
void axpy_scalar_k(std::int64_t n, double alpha, const double* x, double* y) { axpy_impl(n, alpha, x, y); }

template <typename T>
static void scale_shift_impl(std::int64_t n, T alpha, T beta, const T* x, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = alpha * x[i] + beta;
}
void scale_shift_scalar_k(std::int64_t n, float a, float b, const float* x, float* out) {
  scale_shift_impl(n, a, b, x, out);
}
void scale_shift_scalar_k(std::int64_t n, double a, double b, const double* x, double* out) {
  scale_shift_impl(n, a, b, x, out);
}

template <typename T>
static void relu_impl(std::int64_t n, const T* x, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}
void relu_scalar_k(std::int64_t n, const float* x, float* out) { relu_impl(n, x, out); }
void relu_scalar_k(std::int64_t n, const double* x, double* out) { relu_impl(n, x, out); }

template <typename T>
static void relu_mask_mul_impl(std::int64_t n, const T* g, const T* x, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? g[i] : T(0);
}
void relu_mask_mul_scalar_k(std::int64_t n, const float* g, const float* x, float* out) {
  relu_mask_mul_impl(n, g, x, out);
}
void relu_mask_mul_scalar_k(std::int64_t n, const double* g, const double* x, double* out) {
  relu_mask_mul_impl(n, g, x, out);
}

}  // namespace mtga::kernels::detail
