// AVX2 + FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma and must only be entered after the dispatcher has confirmed
// CPU support. Per-element accumulation order matches the scalar reference
// (sequential over k), so differences vs. scalar come only from FMA rounding.

#include <cstdint>
#include <vector>

#include "kernels_internal.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace mtga::kernels::detail {

namespace {

// ---------------------------------------------------------------- float gemm

// Micro-kernel: C[MR x 16] += alpha * A[MR x k] * B[k x 16].
template <int MR>
void micro_f32(std::int64_t k, float alpha, const float* a, std::int64_t lda, const float* b,
               std::int64_t ldb, float* c, std::int64_t ldc) {
  __m256 acc[MR][2];
  for (int r = 0; r < MR; ++r) {
    acc[r][0] = _mm256_setzero_ps();
    acc[r][1] = _mm256_setzero_ps();
  }
  for (std::int64_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + p * ldb);
    const __m256 b1 = _mm256_loadu_ps(b + p * ldb + 8);
    for (int r = 0; r < MR; ++r) {
      const __m256 av = _mm256_set1_ps(a[r * lda + p]);
      acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
    }
  }
  const __m256 alv = _mm256_set1_ps(alpha);
  for (int r = 0; r < MR; ++r) {
    float* crow = c + r * ldc;
    _mm256_storeu_ps(crow, _mm256_fmadd_ps(acc[r][0], alv, _mm256_loadu_ps(crow)));
    _mm256_storeu_ps(crow + 8, _mm256_fmadd_ps(acc[r][1], alv, _mm256_loadu_ps(crow + 8)));
  }
}

// Column tail (n < 16), 8 wide then scalar.
template <int MR>
void micro_f32_tail(std::int64_t k, std::int64_t n, float alpha, const float* a, std::int64_t lda,
                    const float* b, std::int64_t ldb, float* c, std::int64_t ldc) {
  std::int64_t j = 0;
  if (n >= 8) {
    __m256 acc[MR];
    for (int r = 0; r < MR; ++r) acc[r] = _mm256_setzero_ps();
    for (std::int64_t p = 0; p < k; ++p) {
      const __m256 b0 = _mm256_loadu_ps(b + p * ldb);
      for (int r = 0; r < MR; ++r)
        acc[r] = _mm256_fmadd_ps(_mm256_set1_ps(a[r * lda + p]), b0, acc[r]);
    }
    const __m256 alv = _mm256_set1_ps(alpha);
    for (int r = 0; r < MR; ++r) {
      float* crow = c + r * ldc;
      _mm256_storeu_ps(crow, _mm256_fmadd_ps(acc[r], alv, _mm256_loadu_ps(crow)));
    }
    j = 8;
  }
  for (; j < n; ++j) {
    for (int r = 0; r < MR; ++r) {
      float accs = 0.f;
      for (std::int64_t p = 0; p < k; ++p) accs += a[r * lda + p] * b[p * ldb + j];
      c[r * ldc + j] += alpha * accs;
    }
  }
}

template <typename T, typename Micro, typename MicroTail>
void gemm_nn_tiled(std::int64_t m, std::int64_t n, std::int64_t k, T alpha, const T* a,
                   std::int64_t lda, const T* b, std::int64_t ldb, T* c, std::int64_t ldc,
                   std::int64_t nr, Micro micro, MicroTail tail) {
  constexpr int kMr = 6;
  const std::int64_t n_main = (n / nr) * nr;
  std::int64_t i = 0;
  for (; i + kMr <= m; i += kMr) {
    for (std::int64_t j = 0; j < n_main; j += nr)
      micro(kMr, k, alpha, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    if (n_main < n)
      tail(kMr, k, n - n_main, alpha, a + i * lda, lda, b + n_main, ldb, c + i * ldc + n_main, ldc);
  }
  const int mr = static_cast<int>(m - i);
  if (mr > 0) {
    for (std::int64_t j = 0; j < n_main; j += nr)
      micro(mr, k, alpha, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    if (n_main < n)
      tail(mr, k, n - n_main, alpha, a + i * lda, lda, b + n_main, ldb, c + i * ldc + n_main, ldc);
  }
}

void micro_f32_dispatch(int mr, std::int64_t k, float alpha, const float* a, std::int64_t lda,
                        const float* b, std::int64_t ldb, float* c, std::int64_t ldc) {
  switch (mr) {
    case 6: micro_f32<6>(k, alpha, a, lda, b, ldb, c, ldc); break;
    case 5: micro_f32<5>(k, alpha, a, lda, b, ldb, c, ldc); break;
    case 4: micro_f32<4>(k, alpha, a, lda, b, ldb, c, ldc); break;
    case 3: micro_f32<3>(k, alpha, a, lda, b, ldb, c, ldc); break;
    case 2: micro_f32<2>(k, alpha, a, lda, b, ldb, c, ldc); break;
    default: micro_f32<1>(k, alpha, a, lda, b, ldb, c, ldc); break;
  }
}

void micro_f32_tail_dispatch(int mr, std::int64_t k, std::int64_t n, float alpha, const float* a,
                             std::int64_t lda, const float* b, std::int64_t ldb, float* c,
                             std::int64_t ldc) {
  switch (mr) {
    case 6: micro_f32_tail<6>(k, n, alpha, a, lda, b, ldb, c, ldc); break;
    case 5: micro_f32_tail<5>(k, n, alpha, a, lda, b, ldb, c, ldc); break;
    case 4: micro_f32_tail<4>(k, n, alpha, a, lda, b, ldb, c, ldc); break;
    case 3: micro_f32_tail<3>(k, n, alpha, a, lda, b, ldb, c, ldc); break;
    case 2: micro_f32_tail<2>(k, n, alpha, a, lda, b, ldb, c, ldc); break;
    default: micro_f32_tail<1>(k, n, alpha, a, lda, b, ldb, c, ldc); break;
  }
}

// --------------------------------------------------------------- double gemm

template <int MR>
void micro_f64(std::int64_t k, double alpha, const double* a, std::int64_t lda, const double* b,
               std::int64_t ldb, double* c, std::int64_t ldc) {
  __m256d acc[MR][2];
  for (int r = 0; r < MR; ++r) {
    acc[r][0] = _mm256_setzero_pd();
    acc[r][1] = _mm256_setzero_pd();
  }
  for (std::int64_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    for (int r = 0; r < MR; ++r) {
      const __m256d av = _mm256_set1_pd(a[r * lda + p]);
      acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
    }
  }
  const __m256d alv = _mm256_set1_pd(alpha);
  for (int r = 0; r < MR; ++r) {
    double* crow = c + r * ldc;
    _mm256_storeu_pd(crow, _mm256_fmadd_pd(acc[r][0], alv, _mm256_loadu_pd(crow)));
    _mm256_storeu_pd(crow + 4, _mm256_fmadd_pd(acc[r][1], alv, _mm256_loadu_pd(crow + 4)));
  }
}

template <int MR>
void micro_f64_tail(std::int64_t k, std::int64_t n, double alpha, const double* a,
                    std::int64_t lda, const double* b, std::int64_t ldb, double* c,
                    std::int64_t ldc) {
  std::int64_t j = 0;
  if (n >= 4) {
    __m256d acc[MR];
    for (int r = 0; r < MR; ++r) acc[r] = _mm256_setzero_pd();
    for (std::int64_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
      for (int r = 0; r < MR; ++r)
        acc[r] = _mm256_fmadd_pd(_mm256_set1_pd(a[r * lda + p]), b0, acc[r]);
    }
    const __m256d alv = _mm256_set1_pd(alpha);
    for (int r = 0; r < MR; ++r) {
      double* crow = c + r * ldc;
      _mm256_storeu_pd(crow, _mm256_fmadd_pd(acc[r], alv, _mm256_loadu_pd(crow)));
    }
    j = 4;
  }
  for (; j < n; ++j) {
    for (int r = 0; r < MR; ++r) {
      double accs = 0.0;
      for (std::int64_t p = 0; p < k; ++p) accs += a[r * lda + p] * b[p * ldb + j];
      c[r * ldc + j] += alpha * accs;
    }
  }
}

void micro_f64_dispatch(int mr, std::int64_t k, double alpha, const double* a, std::int64_t lda,
                        const double* b, std::int64_t ldb, double* c, std::int64_t ldc) {
  switch (mr) {
    case 6: micro_f64<6>(k, alpha, a, lda, b, ldb, c, ldc); break;
    case 5: micro_f64<5>(k, alpha, a, lda, b, ldb, c, ldc); break;
    case 4: micro_f64<4>(k, alpha, a, lda, b, ldb, c, ldc); break;
    case 3: micro_f64<3>(k, alpha, a, lda, b, ldb, c, ldc); break;
    case 2: micro_f64<2>(k, alpha, a, lda, b, ldb, c, ldc); break;
    default: micro_f64<1>(k, alpha, a, lda, b, ldb, c, ldc); break;
  }
}

void micro_f64_tail_dispatch(int mr, std::int64_t k, std::int64_t n, double alpha, const double* a,
                             std::int64_t lda, const double* b, std::int64_t ldb, double* c,
                             std::int64_t ldc) {
  switch (mr) {
    case 6: micro_f64_tail<6>(k, n, alpha, a, lda, b, ldb, c, ldc); break;
    case 5: micro_f64_tail<5>(k, n, alpha, a, lda, b, ldb, c, ldc); break;
    case 4: micro_f64_tail<4>(k, n, alpha, a, lda, b, ldb, c, ldc); break;
    case 3: micro_f64_tail<3>(k, n, alpha, a, lda, b, ldb, c, ldc); break;
    case 2: micro_f64_tail<2>(k, n, alpha, a, lda, b, ldb, c, ldc); break;
    default: micro_f64_tail<1>(k, n, alpha, a, lda, b, ldb, c, ldc); break;
  }
}

// Transposed operands are packed into row-major scratch so the NN kernel can
// run on them; packing is O(m*k), the multiply is O(m*n*k).
template <typename T>
std::vector<T>& pack_buffer_a() {
  thread_local std::vector<T> buf;
  return buf;
}
template <typename T>
std::vector<T>& pack_buffer_b() {
  thread_local std::vector<T> buf;
  return buf;
}

template <typename T>
const T* pack_transposed(const T* src, std::int64_t rows_out, std::int64_t cols_out,
                         std::int64_t ld_src, std::vector<T>& buf) {
  // src is cols_out x rows_out with leading dim ld_src; output row-major
  // rows_out x cols_out.
  buf.resize(static_cast<std::size_t>(rows_out * cols_out));
  for (std::int64_t r = 0; r < rows_out; ++r)
    for (std::int64_t c = 0; c < cols_out; ++c) buf[static_cast<std::size_t>(r * cols_out + c)] = src[c * ld_src + r];
  return buf.data();
}

template <typename T>
void beta_pass(std::int64_t m, std::int64_t n, T beta, T* c, std::int64_t ldc) {
  if (beta == T(1)) return;
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (beta == T(0))
      for (std::int64_t j = 0; j < n; ++j) crow[j] = T(0);
    else
      for (std::int64_t j = 0; j < n; ++j) crow[j] *= beta;
  }
}

template <typename T, typename Micro, typename MicroTail>
void gemm_avx2_impl(const GemmArgs<T>& g, std::int64_t nr, Micro micro, MicroTail tail) {
  beta_pass(g.m, g.n, g.beta, g.c, g.ldc);
  if (g.alpha == T(0) || g.m == 0 || g.n == 0 || g.k == 0) return;
  const T* a = g.a;
  std::int64_t lda = g.lda;
  if (g.trans_a) {
    a = pack_transposed(g.a, g.m, g.k, g.lda, pack_buffer_a<T>());
    lda = g.k;
  }
  const T* b = g.b;
  std::int64_t ldb = g.ldb;
  if (g.trans_b) {
    b = pack_transposed(g.b, g.k, g.n, g.ldb, pack_buffer_b<T>());
    ldb = g.n;
  }
  gemm_nn_tiled<T>(g.m, g.n, g.k, g.alpha, a, lda, b, ldb, g.c, g.ldc, nr, micro, tail);
}

}  // namespace

void gemm_avx2(const GemmArgs<float>& g) {
  gemm_avx2_impl<float>(g, 16, micro_f32_dispatch, micro_f32_tail_dispatch);
}
void gemm_avx2(const GemmArgs<double>& g) {
  gemm_avx2_impl<double>(g, 8, micro_f64_dispatch, micro_f64_tail_dispatch);
}

// ---------------------------------------------------------------- elementwise

void add_avx2_k(std::int64_t n, const float* a, const float* b, float* out) {
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}
void add_avx2_k(std::int64_t n, const double* a, const double* b, double* out) {
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_avx2_k(std::int64_t n, const float* a, const float* b, float* out) {
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}
void sub_avx2_k(std::int64_t n, const double* a, const double* b, double* out) {
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_avx2_k(std::int64_t n, const float* a, const float* b, float* out) {
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}
void mul_avx2_k(std::int64_t n, const double* a, const double* b, double* out) {
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy_avx2_k(std::int64_t n, float alpha, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}
void axpy_avx2_k(std::int64_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_shift_avx2_k(std::int64_t n, float alpha, float beta, const float* x, float* out) {
  const __m256 av = _mm256_set1_ps(alpha);
  const __m256 bv = _mm256_set1_ps(beta);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), bv));
  for (; i < n; ++i) out[i] = alpha * x[i] + beta;
}
void scale_shift_avx2_k(std::int64_t n, double alpha, double beta, const double* x, double* out) {
  const __m256d av = _mm256_set1_pd(alpha);
  const __m256d bv = _mm256_set1_pd(beta);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), bv));
  for (; i < n; ++i) out[i] = alpha * x[i] + beta;
}

void relu_avx2_k(std::int64_t n, const float* x, float* out) {
  const __m256 zero = _mm256_setzero_ps();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
  for (; i < n; ++i) out[i] = x[i] > 0.f ? x[i] : 0.f;
}
void relu_avx2_k(std::int64_t n, const double* x, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_mask_mul_avx2_k(std::int64_t n, const float* g, const float* x, float* out) {
  const __m256 zero = _mm256_setzero_ps();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_ps(out + i, _mm256_and_ps(_mm256_loadu_ps(g + i), mask));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.f ? g[i] : 0.f;
}
void relu_mask_mul_avx2_k(std::int64_t n, const double* g, const double* x, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(_mm256_loadu_pd(g + i), mask));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

}  // namespace mtga::kernels::detail

#else  // non-x86: never selected; provide link stubs.

namespace mtga::kernels::detail {
void gemm_avx2(const GemmArgs<float>& g) { gemm_scalar(g); }
void gemm_avx2(const GemmArgs<double>& g) { gemm_scalar(g); }
void add_avx2_k(std::int64_t n, const float* a, const float* b, float* o) { add_scalar_k(n, a, b, o); }
void add_avx2_k(std::int64_t n, const double* a, const double* b, double* o) { add_scalar_k(n, a, b, o); }
void sub_avx2_k(std::int64_t n, const float* a, const float* b, float* o) { sub_scalar_k(n, a, b, o); }
void sub_avx2_k(std::int64_t n, const double* a, const double* b, double* o) { sub_scalar_k(n, a, b, o); }
void mul_avx2_k(std::int64_t n, const float* a, const float* b, float* o) { mul_scalar_k(n, a, b, o); }
void mul_avx2_k(std::int64_t n, const double* a, const double* b, double* o) { mul_scalar_k(n, a, b, o); }
void axpy_avx2_k(std::int64_t n, float al, const float* x, float* y) { axpy_scalar_k(n, al, x, y); }
void axpy_avx2_k(std::int64_t n, double al, const double* x, double* y) { axpy_scalar_k(n, al, x, y); }
void scale_shift_avx2_k(std::int64_t n, float a, float b, const float* x, float* o) {
  scale_shift_scalar_k(n, a, b, x, o);
}
void scale_shift_avx2_k(std::int64_t n, double a, double b, const double* x, double* o) {
  scale_shift_scalar_k(n, a, b, x, o);
}
void relu_avx2_k(std::int64_t n, const float* x, float* o) { relu_scalar_k(n, x, o); }
void relu_avx2_k(std::int64_t n, const double* x, double* o) { relu_scalar_k(n, x, o); }
void relu_mask_mul_avx2_k(std::int64_t n, const float* g, const float* x, float* o) {
  relu_mask_mul_scalar_k(n, g, x, o);
}
void relu_mask_mul_avx2_k(std::int64_t n, const double* g, const double* x, double* o) {
  relu_mask_mul_scalar_k(n, g, x, o);
}
}  // namespace mtga::kernels::detail

#endif
