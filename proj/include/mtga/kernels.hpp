#pragma once
// Arithmetic kernels behind the tensor ops. Every kernel has a scalar
// reference implementation and an AVX2+FMA variant; the active instruction
// set is picked once at startup (cpuid) and can be forced with the
// MTGA_KERNELS environment variable ("scalar" or "avx2") or set_isa().
// Reductions are always sequential so results do not depend on the variant's
// partitioning.

#include <cstdint>

namespace mtga::kernels {

enum class Isa { scalar, avx2 };

Isa active_isa();
void set_isa(Isa isa);          // throws if unsupported on this CPU
bool isa_supported(Isa isa);
const char* isa_name(Isa isa);

// C = alpha * op(A) * op(B) + beta * C, row-major.
// op(A) is M x K, op(B) is K x N, C is M x N. lda/ldb are the row strides of
// the stored (untransposed) matrices; ldc of C.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
          float beta, float* c, std::int64_t ldc);
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
          double beta, double* c, std::int64_t ldc);

// Elementwise, out may alias inputs.
void add(std::int64_t n, const float* a, const float* b, float* out);
void add(std::int64_t n, const double* a, const double* b, double* out);
void sub(std::int64_t n, const float* a, const float* b, float* out);
void sub(std::int64_t n, const double* a, const double* b, double* out);
void mul(std::int64_t n, const float* a, const float* b, float* out);
void mul(std::int64_t n, const double* a, const double* b, double* out);

// y += alpha * x
void axpy(std::int64_t n, float alpha, const float* x, float* y);
void axpy(std::int64_t n, double alpha, const double* x, double* y);

// out = alpha * x + beta
void scale_shift(std::int64_t n, float alpha, float beta, const float* x, float* out);
void scale_shift(std::int64_t n, double alpha, double beta, const double* x, double* out);

// out = max(x, 0)
void relu(std::int64_t n, const float* x, float* out);
void relu(std::int64_t n, const double* x, double* out);

// out = g * (x > 0)
void relu_mask_mul(std::int64_t n, const float* g, const float* x, float* out);
void relu_mask_mul(std::int64_t n, const double* g, const double* x, double* out);

// Sequential double-accumulated sum (not dispatched; bit-stable by design).
double stable_sum(std::int64_t n, const float* x);
double stable_sum(std::int64_t n, const double* x);

}  // namespace mtga::kernels
