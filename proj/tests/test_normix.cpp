#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mtga/normix.hpp"
#include "testers.hpp"

using namespace mtga;
using namespace mtga::normix;
using namespace mtga_test;

namespace {

Tensor<float> fixture_batch(std::int64_t n, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor_t<float>({n, 3, synthzoo::kImageH, synthzoo::kImageW}, rng, 0.05, 0.95);
}

// A model whose running stats differ visibly from fresh batch stats.
reid::EmbedNet<float> fixture_model() {
  auto net = reid::EmbedNet<float>::build("g0", 2024);
  Rng rng(55);
  for (auto& buf : net.bn_buffers) {
    for (std::int64_t c = 0; c < buf.running_mean.numel(); ++c) {
      buf.running_mean[c] = static_cast<float>(rng.uniform(-0.5, 0.5));
      buf.running_var[c] = static_cast<float>(rng.uniform(0.2, 2.0));
    }
  }
  return net;
}

}  // namespace

TEST_CASE("Beta(5,5) sampling statistics") {
  Rng rng(17);
  const int n = 100000;
  double sum = 0.0;
  int below_half = 0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_mix_coefficient(5.0, 5.0, rng);
    REQUIRE(x >= 0.0);
    REQUIRE(x <= 1.0);
    sum += x;
    below_half += (x < 0.5);
  }
  const double mean = sum / n;
  CHECK(mean >= 0.495);
  CHECK(mean <= 0.505);
  const double frac_below = static_cast<double>(below_half) / n;
  CHECK(frac_below >= 0.49);
  CHECK(frac_below <= 0.51);
}

TEST_CASE("non-positive shape parameters are rejected") {
  Rng rng(1);
  CHECK_THROWS_AS(sample_mix_coefficient(0.0, 5.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_mix_coefficient(5.0, -1.0, rng), std::invalid_argument);
}

TEST_CASE("mix_stats endpoints and midpoint") {
  auto net = fixture_model();
  auto stats = reid::capture_bn_stats(net, fixture_batch(8, 3));

  SUBCASE("lambda = 1 returns the model running stats exactly") {
    auto mixed = mix_stats(net.bn_buffers, stats, 1.0);
    for (std::size_t l = 0; l < stats.size(); ++l)
      for (std::int64_t c = 0; c < mixed.stats[l].mean.numel(); ++c) {
        CHECK(mixed.stats[l].mean[c] == net.bn_buffers[l].running_mean[c]);
        CHECK(mixed.stats[l].var[c] == net.bn_buffers[l].running_var[c]);
      }
  }
  SUBCASE("lambda = 0 returns the dataset stats exactly") {
    auto mixed = mix_stats(net.bn_buffers, stats, 0.0);
    for (std::size_t l = 0; l < stats.size(); ++l)
      for (std::int64_t c = 0; c < mixed.stats[l].mean.numel(); ++c) {
        CHECK(mixed.stats[l].mean[c] == stats[l].mean[c]);
        CHECK(mixed.stats[l].var[c] == stats[l].var[c]);
      }
  }
  SUBCASE("linear midpoint") {
    std::vector<nn::BnBuffer<float>> mb;
    mb.push_back({Tensor<float>(Shape{2}, {0.2f, 0.2f}), Tensor<float>(Shape{2}, {1.0f, 1.0f})});
    std::vector<nn::BnStats<float>> ds;
    ds.push_back({Tensor<float>(Shape{2}, {0.6f, 0.6f}), Tensor<float>(Shape{2}, {3.0f, 3.0f})});
    auto mixed = mix_stats(mb, ds, 0.5);
    CHECK(mixed.stats[0].mean[0] == doctest::Approx(0.4).epsilon(1e-7));
    CHECK(mixed.stats[0].var[0] == doctest::Approx(2.0).epsilon(1e-7));
  }
  SUBCASE("variance stays nonnegative across lambda") {
    for (double lam : {0.0, 0.1, 0.33, 0.5, 0.77, 1.0}) {
      auto mixed = mix_stats(net.bn_buffers, stats, lam);
      for (const auto& st : mixed.stats)
        for (std::int64_t c = 0; c < st.var.numel(); ++c) CHECK(st.var[c] >= 0.0f);
    }
  }
  SUBCASE("layout mismatch is an error") {
    auto bad = stats;
    bad.pop_back();
    CHECK_THROWS_AS(mix_stats(net.bn_buffers, bad, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(mix_stats(net.bn_buffers, stats, 1.5), std::invalid_argument);
  }
}

TEST_CASE("mixed forward endpoints, diversity, and parameter immutability") {
  auto net = fixture_model();
  Tensor<float> batch = fixture_batch(4, 9);
  auto data_stats = reid::capture_bn_stats(net, fixture_batch(8, 10));

  nn::ParamSet<float> params_before = net.params;

  SUBCASE("lambda=1 equals running mode within 1e-6") {
    Tensor<float> running = reid::forward_embed_running(net, batch);
    Tensor<float> mixed1 =
        forward_with_mixed_bn(net, batch, mix_stats(net.bn_buffers, data_stats, 1.0));
    for (std::int64_t i = 0; i < running.numel(); ++i)
      CHECK(std::abs(running[i] - mixed1[i]) <= 1e-6);
  }
  SUBCASE("lambda=0 equals a forward normalized by the dataset stats") {
    MixedBnState<float> direct;
    direct.lambda = 0.0;
    direct.stats = data_stats;
    Tensor<float> a = forward_with_mixed_bn(net, batch, direct);
    Tensor<float> b = forward_with_mixed_bn(net, batch, mix_stats(net.bn_buffers, data_stats, 0.0));
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-7);
  }
  SUBCASE("distinct lambdas embed distinctly") {
    Tensor<float> e1 = forward_with_mixed_bn(net, batch, mix_stats(net.bn_buffers, data_stats, 0.1));
    Tensor<float> e2 = forward_with_mixed_bn(net, batch, mix_stats(net.bn_buffers, data_stats, 0.5));
    Tensor<float> e3 = forward_with_mixed_bn(net, batch, mix_stats(net.bn_buffers, data_stats, 0.9));
    auto max_diff = [](const Tensor<float>& a, const Tensor<float>& b) {
      float m = 0;
      for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
      return m;
    };
    CHECK(max_diff(e1, e2) > 1e-6f);
    CHECK(max_diff(e2, e3) > 1e-6f);
    CHECK(max_diff(e1, e3) > 1e-6f);
  }
  SUBCASE("gamma and beta are bit-unchanged by mixing operations") {
    forward_with_mixed_bn(net, batch, mix_stats(net.bn_buffers, data_stats, 0.37));
    reid::capture_bn_stats(net, batch);
    for (std::size_t i = 0; i < net.params.size(); ++i)
      for (std::int64_t j = 0; j < net.params.values[i].numel(); ++j)
        REQUIRE(net.params.values[i][j] == params_before.values[i][j]);
  }
  SUBCASE("embedding is continuous in lambda") {
    // slope scale estimated from a coarse grid on the same fixture
    auto embed_at = [&](double lam) {
      return forward_with_mixed_bn(net, batch, mix_stats(net.bn_buffers, data_stats, lam));
    };
    double coarse_slope = 0.0;
    Tensor<float> prev = embed_at(0.0);
    for (int k = 1; k <= 10; ++k) {
      Tensor<float> cur = embed_at(k / 10.0);
      float m = 0;
      for (std::int64_t i = 0; i < cur.numel(); ++i) m = std::max(m, std::abs(cur[i] - prev[i]));
      coarse_slope = std::max(coarse_slope, static_cast<double>(m) / 0.1);
      prev = cur;
    }
    Tensor<float> a = embed_at(0.5);
    Tensor<float> b = embed_at(0.5 + 1e-4);
    float fine = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) fine = std::max(fine, std::abs(a[i] - b[i]));
    CHECK(static_cast<double>(fine) <= 5.0 * coarse_slope * 1e-4 + 1e-6);
  }
}
