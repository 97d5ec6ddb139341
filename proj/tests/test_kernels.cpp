#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mtga/kernels.hpp"
#include "mtga/rng.hpp"

using namespace mtga;

namespace {

// Long-hand reference in double, independent of the kernel code paths.
void gemm_ref(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
              const std::vector<double>& a, std::int64_t lda, const std::vector<double>& b,
              std::int64_t ldb, double beta, std::vector<double>& c, std::int64_t ldc) {
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = ta ? a[static_cast<std::size_t>(p * lda + i)] : a[static_cast<std::size_t>(i * lda + p)];
        const double bv = tb ? b[static_cast<std::size_t>(j * ldb + p)] : b[static_cast<std::size_t>(p * ldb + j)];
        acc += av * bv;
      }
      c[static_cast<std::size_t>(i * ldc + j)] = alpha * acc + beta * c[static_cast<std::size_t>(i * ldc + j)];
    }
}

template <typename T>
void run_gemm_case(kernels::Isa isa, bool ta, bool tb, std::int64_t m, std::int64_t n,
                   std::int64_t k, T alpha, T beta, double tol) {
  Rng rng(1234 + m * 7919 + n * 131 + k + static_cast<int>(ta) * 3 + static_cast<int>(tb) * 5);
  const std::int64_t lda = ta ? m : k;
  const std::int64_t ldb = tb ? k : n;
  const std::int64_t a_elems = ta ? k * lda : m * lda;
  const std::int64_t b_elems = tb ? n * ldb : k * ldb;
  std::vector<double> ad(static_cast<std::size_t>(a_elems)), bd(static_cast<std::size_t>(b_elems)),
      cd(static_cast<std::size_t>(m * n));
  for (auto& v : ad) v = rng.uniform(-1, 1);
  for (auto& v : bd) v = rng.uniform(-1, 1);
  for (auto& v : cd) v = rng.uniform(-1, 1);

  std::vector<T> at(ad.begin(), ad.end()), bt(bd.begin(), bd.end()), ct(cd.begin(), cd.end());
  // reference uses the same (cast) values the kernel sees
  std::vector<double> ad2(at.begin(), at.end()), bd2(bt.begin(), bt.end()), cref(ct.begin(), ct.end());
  gemm_ref(ta, tb, m, n, k, static_cast<double>(alpha), ad2, lda, bd2, ldb,
           static_cast<double>(beta), cref, n);

  const auto prev = kernels::active_isa();
  kernels::set_isa(isa);
  kernels::gemm(ta, tb, m, n, k, alpha, at.data(), lda, bt.data(), ldb, beta, ct.data(), n);
  kernels::set_isa(prev);

  double worst = 0.0;
  for (std::size_t i = 0; i < ct.size(); ++i) {
    const double denom = std::max(1.0, std::abs(cref[i]));
    worst = std::max(worst, std::abs(static_cast<double>(ct[i]) - cref[i]) / denom);
  }
  INFO("isa=", kernels::isa_name(isa), " ta=", ta, " tb=", tb, " m=", m, " n=", n, " k=", k);
  CHECK(worst < tol);
}

}  // namespace

TEST_CASE("gemm matches double reference for all transpose combos and sizes") {
  std::vector<kernels::Isa> isas{kernels::Isa::scalar};
  if (kernels::isa_supported(kernels::Isa::avx2)) isas.push_back(kernels::Isa::avx2);
  const std::int64_t sizes[][3] = {{1, 1, 1},   {3, 5, 7},    {6, 16, 11}, {13, 33, 8},
                                   {16, 512, 27}, {36, 128, 324}, {7, 17, 64}, {64, 32, 144}};
  for (auto isa : isas)
    for (const auto& s : sizes)
      for (bool ta : {false, true})
        for (bool tb : {false, true}) {
          run_gemm_case<float>(isa, ta, tb, s[0], s[1], s[2], 1.0f, 0.0f, 2e-5);
          run_gemm_case<double>(isa, ta, tb, s[0], s[1], s[2], 1.0, 0.0, 1e-13);
        }
}

TEST_CASE("gemm alpha/beta handling") {
  std::vector<kernels::Isa> isas{kernels::Isa::scalar};
  if (kernels::isa_supported(kernels::Isa::avx2)) isas.push_back(kernels::Isa::avx2);
  for (auto isa : isas) {
    run_gemm_case<float>(isa, false, false, 9, 21, 13, 0.5f, 1.0f, 2e-5);
    run_gemm_case<float>(isa, true, true, 9, 21, 13, -2.0f, 0.25f, 2e-5);
    run_gemm_case<double>(isa, false, true, 9, 21, 13, 1.5, 1.0, 1e-13);
    run_gemm_case<double>(isa, true, false, 9, 21, 13, -1.0, 0.5, 1e-13);
  }
}

TEST_CASE("simd and scalar elementwise kernels agree") {
  if (!kernels::isa_supported(kernels::Isa::avx2)) return;
  Rng rng(99);
  const std::int64_t n = 1037;  // not a multiple of the vector width
  std::vector<float> a(n), b(n), o1(n), o2(n);
  for (auto& v : a) v = static_cast<float>(rng.uniform(-2, 2));
  for (auto& v : b) v = static_cast<float>(rng.uniform(-2, 2));

  auto check_pair = [&](auto&& fn) {
    kernels::set_isa(kernels::Isa::scalar);
    fn(o1);
    kernels::set_isa(kernels::Isa::avx2);
    fn(o2);
    for (std::int64_t i = 0; i < n; ++i) CHECK(o1[static_cast<std::size_t>(i)] == doctest::Approx(o2[static_cast<std::size_t>(i)]).epsilon(1e-6));
  };

  check_pair([&](std::vector<float>& o) { kernels::add(n, a.data(), b.data(), o.data()); });
  check_pair([&](std::vector<float>& o) { kernels::sub(n, a.data(), b.data(), o.data()); });
  check_pair([&](std::vector<float>& o) { kernels::mul(n, a.data(), b.data(), o.data()); });
  check_pair([&](std::vector<float>& o) { kernels::relu(n, a.data(), o.data()); });
  check_pair([&](std::vector<float>& o) { kernels::relu_mask_mul(n, a.data(), b.data(), o.data()); });
  check_pair([&](std::vector<float>& o) {
    kernels::scale_shift(n, 1.5f, -0.25f, a.data(), o.data());
  });
  check_pair([&](std::vector<float>& o) {
    o = b;
    kernels::axpy(n, 0.75f, a.data(), o.data());
  });
  kernels::set_isa(kernels::Isa::avx2);
}

TEST_CASE("stable_sum is order-stable and exact on integers") {
  std::vector<float> v(1000, 1.0f);
  CHECK(kernels::stable_sum(1000, v.data()) == doctest::Approx(1000.0));
}
