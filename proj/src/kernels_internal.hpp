#pragma once
// Shared declarations between the kernel variants and the dispatcher.

#include <cstdint>

namespace mtga::kernels::detail {

template <typename T>
struct GemmArgs {
  bool trans_a, trans_b;
  std::int64_t m, n, k;
  T alpha;
  const T* a;
  std::int64_t lda;
  const T* b;
  std::int64_t ldb;
  T beta;
  T* c;
  std::int64_t ldc;
};

// scalar reference
void gemm_scalar(const GemmArgs<float>& g);
void gemm_scalar(const GemmArgs<double>& g);
void add_scalar_k(std::int64_t n, const float* a, const float* b, float* out);
void add_scalar_k(std::int64_t n, const double* a, const double* b, double* out);
void sub_scalar_k(std::int64_t n, const float* a, const float* b, float* out);
void sub_scalar_k(std::int64_t n, const double* a, const double* b, double* out);
void mul_scalar_k(std::int64_t n, const float* a, const float* b, float* out);
void mul_scalar_k(std::int64_t n, const double* a, const double* b, double* out);
void axpy_scalar_k(std::int64_t n, float alpha, const float* x, float* y);
void axpy_scalar_k(std::int64_t n, double alpha, const double* x, double* y);
void scale_shift_scalar_k(std::int64_t n, float alpha, float beta, const float* x, float* out);
void scale_shift_scalar_k(std::int64_t n, double alpha, double beta, const double* x, double* out);
void relu_scalar_k(std::int64_t n, const float* x, float* out);
void relu_scalar_k(std::int64_t n, const double* x, double* out);
void relu_mask_mul_scalar_k(std::int64_t n, const float* g, const float* x, float* out);
void relu_mask_mul_scalar_k(std::int64_t n, const double* g, const double* x, double* out);

// avx2 + fma
void gemm_avx2(const GemmArgs<float>& g);
void gemm_avx2(const GemmArgs<double>& g);
void add_avx2_k(std::int64_t n, const float* a, const float* b, float* out);
void add_avx2_k(std::int64_t n, const double* a, const double* b, double* out);
void sub_avx2_k(std::int64_t n, const float* a, const float* b, float* out);
void sub_avx2_k(std::int64_t n, const double* a, const double* b, double* out);
void mul_avx2_k(std::int64_t n, const float* a, const float* b, float* out);
void mul_avx2_k(std::int64_t n, const double* a, const double* b, double* out);
void axpy_avx2_k(std::int64_t n, float alpha, const float* x, float* y);
void axpy_avx2_k(std::int64_t n, double alpha, const double* x, double* y);
void scale_shift_avx2_k(std::int64_t n, float alpha, float beta, const float* x, float* out);
void scale_shift_avx2_k(std::int64_t n, double alpha, double beta, const double* x, double* out);
void relu_avx2_k(std::int64_t n, const float* x, float* out);
void relu_avx2_k(std::int64_t n, const double* x, double* out);
void relu_mask_mul_avx2_k(std::int64_t n, const float* g, const float* x, float* out);
void relu_mask_mul_avx2_k(std::int64_t n, const double* g, const double* x, double* out);

}  // namespace mtga::kernels::detail
