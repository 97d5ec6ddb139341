// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Criteria 7-10 share one
// fixture pipeline (zoo + attack training + evaluation) driven by
// configs/fixture.json. Exit code 0 iff every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "mtga/checkpoint.hpp"
#include "mtga/meta_engine.hpp"
#include "mtga/pipeline.hpp"
#include "mtga/pre.hpp"

using namespace mtga;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;
using Clock = std::chrono::steady_clock;

struct Criterion {
  int id;
  const char* name;
  Clock::time_point t0 = Clock::now();
  bool ok = true;
  std::string detail;

  Criterion(int id_, const char* name_) : id(id_), name(name_) {}

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }

  void finish() {
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("criterion %2d (%-24s): %s  [%.1fs]%s%s\n", id, name, ok ? "PASS" : "FAIL", secs,
                detail.empty() ? "" : "  -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

double round1(double v) { return std::round(v * 10.0) / 10.0; }

std::string slurp(const std::string& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ----------------------------------------------------------- tiny helpers

Tensor<float> random_images(std::int64_t n, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<float> t = Tensor<float>::uninit({n, 3, synthzoo::kImageH, synthzoo::kImageW});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// <= 1k parameter generator for the gradient-fidelity criterion.
template <typename T>
struct ToyGen {
  nn::ParamSet<T> params;
  double epsilon = attacker::kDefaultEpsilon;
  nn::Conv2d<T> c1, c2;
  static ToyGen build(std::uint64_t seed) {
    ToyGen g;
    Rng rng(seed);
    g.c1 = nn::Conv2d<T>::create(g.params, "c1", 3, 4, 3, 1, 1, rng);
    g.c2 = nn::Conv2d<T>::create(g.params, "c2", 4, 3, 3, 1, 1, rng);
    return g;
  }
  Var<T> perturbation(const std::vector<Var<T>>& P, const Var<T>& x) const {
    return scale(tanh(c2(P, tanh(c1(P, x)))), epsilon);
  }
};

// <= 200 parameter generator for the second-order criterion.
template <typename T>
struct StubGen {
  nn::ParamSet<T> params;
  double epsilon = attacker::kDefaultEpsilon;
  nn::Conv2d<T> c1;
  static StubGen build(std::uint64_t seed) {
    StubGen g;
    Rng rng(seed);
    g.c1 = nn::Conv2d<T>::create(g.params, "c1", 3, 3, 3, 1, 1, rng);
    return g;
  }
  Var<T> perturbation(const std::vector<Var<T>>& P, const Var<T>& x) const {
    return scale(tanh(c1(P, x)), epsilon);
  }
};

struct FixturePair {
  std::vector<reid::EmbedNet<double>> models;
  synthzoo::DomainData d1, d2;
  FixturePair() {
    synthzoo::DomainSpec s1 = synthzoo::stock_domain("D1");
    s1.n_identities = 8;
    synthzoo::DomainSpec s2 = synthzoo::stock_domain("D2");
    s2.n_identities = 8;
    d1 = synthzoo::generate_domain(s1);
    d2 = synthzoo::generate_domain(s2);
    models.push_back(reid::EmbedNet<double>::build("g0", 7));
    models.push_back(reid::EmbedNet<double>::build("p0", 8));
    Rng rng(17);
    for (auto& m : models)
      for (auto& buf : m.bn_buffers)
        for (std::int64_t c = 0; c < buf.running_mean.numel(); ++c) {
          buf.running_mean[c] = rng.uniform(-0.2, 0.2);
          buf.running_var[c] = rng.uniform(0.5, 1.5);
        }
  }
  meta_engine::MetaTask<double> task(std::int64_t batch, double lambda, std::uint64_t seeds) const {
    Rng rng(seeds);
    meta_engine::MetaTask<double> t;
    t.m_mtr = &models[0];
    t.m_mte = &models[1];
    t.domain_mtr = "D1";
    t.domain_mte = "D2";
    t.x_mtr = meta_engine::pixels_as<double>(synthzoo::sample_batch(d1.train, batch, rng));
    t.x_mte = meta_engine::pixels_as<double>(synthzoo::sample_batch(d2.train, batch, rng));
    t.lambda = lambda;
    t.pre_seed = rng.next_u64();
    return t;
  }
};

// ----------------------------------------------------------- criteria 1-6

void criterion_1() {
  Criterion c(1, "metric formulas");
  c.expect(round1(evalbench::aggregate({10.8, 25.5, 38.4})) == 24.9,
           "aggregate({10.8,25.5,38.4}) != 24.9");
  c.expect(round1(evalbench::drop_rate(77.6, 24.9)) == 67.9, "drop_rate(77.6,24.9) != 67.9");
  c.expect(round1(evalbench::drop_rate(76.7, 23.3)) == 69.6, "drop_rate(76.7,23.3) != 69.6");
  c.expect(round1(evalbench::drop_rate(38.0, 18.5)) == 51.3, "drop_rate(38.0,18.5) != 51.3");
  c.finish();
}

void criterion_2() {
  Criterion c(2, "epsilon bound");
  auto gen = attacker::GeneratorNet<float>::build(attacker::kDefaultEpsilon, 2024);
  auto P = nn::make_constants(gen.params);
  NoGradGuard ng;
  Rng rng(99);
  const float eps = static_cast<float>(8.0 / 255.0);
  std::int64_t images = 0;
  float worst_gap = 0.f;
  bool in_box = true;
  while (images < 1000) {
    Tensor<float> x = random_images(50, rng);
    Var<float> xc = Var<float>::constant(x);
    Var<float> adv = attacker::apply_perturbation(xc, gen.perturbation(P, xc), Var<float>());
    for (std::int64_t i = 0; i < adv.val().numel(); ++i) {
      const float d = std::abs(adv.val()[i] - x[i]);
      worst_gap = std::max(worst_gap, d);
      in_box = in_box && adv.val()[i] >= 0.f && adv.val()[i] <= 1.f;
    }
    images += 50;
  }
  c.expect(worst_gap <= eps, "|x_adv - x|_inf = " + fmt(worst_gap) + " > 8/255");
  c.expect(in_box, "pixels escaped [0,1]");
  c.detail = "max gap " + fmt(worst_gap) + " over " + std::to_string(images) + " images";
  c.finish();
}

void criterion_3() {
  Criterion c(3, "PRE contract");
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    auto pat = pre::sample_pattern(64, 32, 1.0, 0.2, rng);
    c.expect(pat.erased_cells.size() == 2, "triggered mask erased != 2 cells");
    Tensor<float> m = pre::mask_tensor<float>(pat);
    std::int64_t zeros = 0;
    for (std::int64_t j = 0; j < m.numel(); ++j) zeros += (m[j] == 0.f);
    c.expect(zeros == 512, "triggered mask zeroed " + std::to_string(zeros) + " pixels, not 512");
    if (!c.ok) break;
  }
  int triggered = 0;
  for (int i = 0; i < 10000; ++i)
    triggered += !pre::sample_pattern(64, 32, 0.8, 0.2, rng).erased_cells.empty();
  const double frac = triggered / 10000.0;
  c.expect(frac >= 0.78 && frac <= 0.82, "trigger fraction " + fmt(frac) + " outside [0.78,0.82]");

  // gradient sparsification on a toy model, double precision
  Rng drng(32);
  const std::int64_t h = 32, w = 32;
  Tensor<double> wmat = Tensor<double>::uninit({6, 3 * h * w});
  for (std::int64_t i = 0; i < wmat.numel(); ++i) wmat[i] = drng.uniform(-0.05, 0.05);
  Var<double> wc = Var<double>::constant(wmat);
  Tensor<double> x_t = Tensor<double>::uninit({1, 3, h, w});
  for (std::int64_t i = 0; i < x_t.numel(); ++i) x_t[i] = drng.uniform(0.3, 0.7);
  Var<double> x = Var<double>::constant(x_t);
  auto embed = [&](const Var<double>& img) {
    return matmul(reshape(img, {1, 3 * h * w}), wc, false, true);
  };
  Rng prng(33);
  auto pat = pre::sample_pattern(h, w, 1.0, 0.5, prng);
  Tensor<double> delta0 = Tensor<double>::uninit({1, 3, h, w});
  for (std::int64_t i = 0; i < delta0.numel(); ++i) delta0[i] = drng.uniform(-0.02, 0.02);
  Tensor<double> emb_clean;
  {
    NoGradGuard ng;
    emb_clean = embed(x).val();
  }
  auto loss_of = [&](const Var<double>& d) {
    Var<double> x_adv = attacker::apply_perturbation(x, pre::erase(d, pat), Var<double>());
    return attacker::adversarial_loss(embed(x_adv), Var<double>::constant(emb_clean));
  };
  Var<double> d = Var<double>::leaf(delta0);
  auto grads = backward(loss_of(d));
  Tensor<double> analytic = grads.grad_or_zero(d);
  bool erased_zero = true;
  for (std::int64_t ch = 0; ch < 3; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t xx = 0; xx < w; ++xx)
        if (!pat.kept(y, xx)) erased_zero = erased_zero && analytic[(ch * h + y) * w + xx] == 0.0;
  c.expect(erased_zero, "gradient not exactly zero at erased pixels");
  double worst_rel = 0.0;
  Rng pick(34);
  for (int trial = 0; trial < 60; ++trial) {
    const std::int64_t i = static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(delta0.numel())));
    Tensor<double> dp = delta0;
    const double hstep = 1e-6;
    dp[i] = delta0[i] + hstep;
    NoGradGuard ng;
    const double fp = loss_of(Var<double>::constant(dp)).item();
    dp[i] = delta0[i] - hstep;
    const double fm = loss_of(Var<double>::constant(dp)).item();
    const double numeric = (fp - fm) / (2 * hstep);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
    if (std::abs(analytic[i] - numeric) > 1e-10)
      worst_rel = std::max(worst_rel, std::abs(analytic[i] - numeric) / denom);
  }
  c.expect(worst_rel <= 1e-4, "kept-pixel FD mismatch, worst rel " + fmt(worst_rel));
  c.detail = "trigger fraction " + fmt(frac) + ", FD worst rel " + fmt(worst_rel);
  c.finish();
}

void criterion_4() {
  Criterion c(4, "NorMix endpoints");
  auto net = reid::EmbedNet<float>::build("g0", 41);
  Rng rng(42);
  for (auto& buf : net.bn_buffers)
    for (std::int64_t ch = 0; ch < buf.running_mean.numel(); ++ch) {
      buf.running_mean[ch] = static_cast<float>(rng.uniform(-0.5, 0.5));
      buf.running_var[ch] = static_cast<float>(rng.uniform(0.2, 2.0));
    }
  Tensor<float> batch = random_images(4, rng, 0.05, 0.95);
  Tensor<float> stats_src = random_images(8, rng, 0.05, 0.95);
  auto data_stats = reid::capture_bn_stats(net, stats_src);

  Tensor<float> running = reid::forward_embed_running(net, batch);
  Tensor<float> mix1 =
      normix::forward_with_mixed_bn(net, batch, normix::mix_stats(net.bn_buffers, data_stats, 1.0));
  double worst1 = 0;
  for (std::int64_t i = 0; i < running.numel(); ++i)
    worst1 = std::max(worst1, static_cast<double>(std::abs(running[i] - mix1[i])));
  c.expect(worst1 <= 1e-6, "lambda=1 vs running gap " + fmt(worst1));

  normix::MixedBnState<float> direct;
  direct.lambda = 0.0;
  direct.stats = data_stats;
  Tensor<float> data_fwd = normix::forward_with_mixed_bn(net, batch, direct);
  Tensor<float> mix0 =
      normix::forward_with_mixed_bn(net, batch, normix::mix_stats(net.bn_buffers, data_stats, 0.0));
  double worst0 = 0;
  for (std::int64_t i = 0; i < data_fwd.numel(); ++i)
    worst0 = std::max(worst0, static_cast<double>(std::abs(data_fwd[i] - mix0[i])));
  c.expect(worst0 <= 1e-6, "lambda=0 vs dataset-stats forward gap " + fmt(worst0));

  Rng brng(43);
  double sum = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += normix::sample_mix_coefficient(5, 5, brng);
  const double mean = sum / n;
  c.expect(mean >= 0.495 && mean <= 0.505, "Beta(5,5) mean " + fmt(mean));
  c.detail = "endpoint gaps " + fmt(worst1) + " / " + fmt(worst0) + ", beta mean " + fmt(mean);
  c.finish();
}

void criterion_5() {
  Criterion c(5, "meta-gradient fidelity");
  FixturePair fix;
  auto dis = attacker::DiscriminatorNet<double>::build(52);

  {  // inner-step gradient vs FD, <= 1k params, rel tol 1e-4
    auto gen = ToyGen<double>::build(51);
    auto task = fix.task(2, 0.5, 53);
    auto theta = nn::make_leaves(gen.params);
    const double eta = 1.0;
    auto inner = meta_engine::meta_train_step(gen, theta, dis, task, eta);
    auto loss_at = [&](const nn::ParamSet<double>& ps) {
      NoGradGuard ng;
      Var<double> x = Var<double>::constant(task.x_mtr);
      auto P = nn::make_constants(ps);
      Var<double> x_adv = attacker::apply_perturbation(x, gen.perturbation(P, x), Var<double>());
      auto mp = nn::make_constants(task.m_mtr->params);
      nn::BnContext<double> ctx;
      Var<double> emb_adv = task.m_mtr->embed(mp, x_adv, ctx);
      Tensor<double> emb_clean = task.m_mtr->embed(mp, x, ctx).val();
      Var<double> l_adv = attacker::adversarial_loss(emb_adv, Var<double>::constant(emb_clean));
      Var<double> p_adv = dis.probability(nn::make_constants(dis.params), x_adv);
      return add(attacker::generator_gan_loss(p_adv), l_adv).item();
    };
    double worst = 0;
    for (std::size_t pi = 0; pi < gen.params.size(); ++pi)
      for (std::int64_t j = 0; j < gen.params.values[pi].numel(); ++j) {
        const double analytic = (theta[pi].val()[j] - inner.theta_prime[pi].val()[j]) / eta;
        nn::ParamSet<double> ps = gen.params;
        const double orig = ps.values[pi][j];
        const double h = 1e-6;
        ps.values[pi][j] = orig + h;
        const double fp = loss_at(ps);
        ps.values[pi][j] = orig - h;
        const double fm = loss_at(ps);
        const double numeric = (fp - fm) / (2 * h);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
        if (std::abs(analytic - numeric) > 1e-9)
          worst = std::max(worst, std::abs(analytic - numeric) / denom);
      }
    c.expect(worst <= 1e-4, "inner gradient worst rel " + fmt(worst));
    c.detail = "inner worst rel " + fmt(worst);
  }

  {  // full bilevel gradient with second order, <= 200 params, rel tol 1e-3
    auto gen = StubGen<double>::build(54);
    auto task = fix.task(2, 0.35, 55);
    meta_engine::MetaConfig cfg;
    cfg.pre_p = 1.0;
    cfg.pre_m = 0.25;
    const double eta = 0.05;
    auto bilevel = [&](const nn::ParamSet<double>& ps) {
      auto th = nn::make_leaves(ps);
      auto inner = meta_engine::meta_train_step(gen, th, dis, task, eta, false);
      auto phi = nn::make_constants(dis.params);
      auto test = meta_engine::meta_test_step(gen, inner.theta_prime, dis, phi, task, cfg);
      return static_cast<double>(test.l_mte.item());
    };
    auto theta = nn::make_leaves(gen.params);
    auto inner = meta_engine::meta_train_step(gen, theta, dis, task, eta, /*second_order=*/true);
    auto phi = nn::make_constants(dis.params);
    auto test = meta_engine::meta_test_step(gen, inner.theta_prime, dis, phi, task, cfg);
    auto grads = backward(test.l_mte);
    double worst = 0;
    for (std::size_t pi = 0; pi < gen.params.size(); ++pi) {
      Tensor<double> analytic = grads.grad_or_zero(theta[pi]);
      for (std::int64_t j = 0; j < analytic.numel(); ++j) {
        nn::ParamSet<double> ps = gen.params;
        const double orig = ps.values[pi][j];
        const double h = 1e-5;
        ps.values[pi][j] = orig + h;
        const double fp = bilevel(ps);
        ps.values[pi][j] = orig - h;
        const double fm = bilevel(ps);
        const double numeric = (fp - fm) / (2 * h);
        const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), 1e-12});
        if (std::abs(analytic[j] - numeric) > 1e-8)
          worst = std::max(worst, std::abs(analytic[j] - numeric) / denom);
      }
    }
    c.expect(worst <= 1e-3, "bilevel gradient worst rel " + fmt(worst));
    c.detail += ", bilevel worst rel " + fmt(worst);
  }
  c.finish();
}

void criterion_6() {
  Criterion c(6, "retrieval oracle");
  Rng rng(61);
  auto normalized = [](std::vector<double> v) {
    double n2 = 0;
    for (double x : v) n2 += x * x;
    for (double& x : v) x /= std::sqrt(n2);
    return v;
  };
  double worst = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::int64_t nq = 20, ng = 50, dim = 6;
    Tensor<float> qe = Tensor<float>::uninit({nq, dim});
    Tensor<float> ge = Tensor<float>::uninit({ng, dim});
    for (std::int64_t i = 0; i < qe.numel(); ++i)
      qe[i] = static_cast<float>(rng.uniform(-1, 1)) + (i % 2 ? 0.01f : -0.01f);
    for (std::int64_t i = 0; i < ge.numel(); ++i)
      ge[i] = static_cast<float>(rng.uniform(-1, 1)) + (i % 2 ? 0.01f : -0.01f);
    std::vector<std::int64_t> qid(nq), qcam(nq, 0), gid(ng), gcam(ng, 1);
    for (auto& v : qid) v = static_cast<std::int64_t>(rng.below(5));
    for (auto& v : gid) v = static_cast<std::int64_t>(rng.below(5));
    evalbench::MapProtocol protocol{false};

    double oracle_sum = 0;
    int counted = 0;
    for (std::int64_t q = 0; q < nq; ++q) {
      std::vector<std::pair<double, std::int64_t>> scored;
      std::vector<double> qv(static_cast<std::size_t>(dim));
      for (std::int64_t k = 0; k < dim; ++k) qv[static_cast<std::size_t>(k)] = qe.at(q, k);
      auto qn = normalized(qv);
      for (std::int64_t g = 0; g < ng; ++g) {
        std::vector<double> gv(static_cast<std::size_t>(dim));
        for (std::int64_t k = 0; k < dim; ++k) gv[static_cast<std::size_t>(k)] = ge.at(g, k);
        auto gn = normalized(gv);
        double dd = 0;
        for (std::size_t k = 0; k < qn.size(); ++k) dd += (qn[k] - gn[k]) * (qn[k] - gn[k]);
        scored.emplace_back(dd, g);
      }
      std::stable_sort(scored.begin(), scored.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      double ap = 0;
      int seen = 0, total = 0;
      for (const auto& [dd, g] : scored) total += gid[static_cast<std::size_t>(g)] == qid[static_cast<std::size_t>(q)];
      if (total == 0) continue;
      for (std::size_t k = 0; k < scored.size(); ++k)
        if (gid[static_cast<std::size_t>(scored[k].second)] == qid[static_cast<std::size_t>(q)])
          ap += static_cast<double>(++seen) / static_cast<double>(k + 1);
      oracle_sum += ap / total;
      ++counted;
    }
    const double want = oracle_sum / counted;
    const double got =
        evalbench::mean_ap_from_embeddings(qe, qid, qcam, ge, gid, gcam, protocol);
    worst = std::max(worst, std::abs(got - want));
  }
  c.expect(worst <= 1e-9, "mAP oracle gap " + fmt(worst));

  bool ranks_ok = true;
  for (int inst = 0; inst < 30; ++inst) {
    std::vector<std::vector<double>> gallery;
    for (int i = 0; i < 8; ++i) {
      std::vector<double> v(5);
      for (auto& x : v) x = rng.uniform(-1, 1) + 0.01;
      gallery.push_back(v);
    }
    std::vector<double> q(5);
    for (auto& x : q) x = rng.uniform(-1, 1) + 0.01;
    auto got = evalbench::rank_gallery(q, gallery);
    std::vector<double> dist;
    auto qn = normalized(q);
    for (const auto& g : gallery) {
      auto gn = normalized(g);
      double dd = 0;
      for (std::size_t k = 0; k < qn.size(); ++k) dd += (qn[k] - gn[k]) * (qn[k] - gn[k]);
      dist.push_back(dd);
    }
    std::vector<std::int64_t> want(8);
    for (std::int64_t i = 0; i < 8; ++i) want[static_cast<std::size_t>(i)] = i;
    std::stable_sort(want.begin(), want.end(),
                     [&](std::int64_t a, std::int64_t b) { return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)]; });
    ranks_ok = ranks_ok && got == want;
  }
  c.expect(ranks_ok, "rank_gallery disagrees with the exhaustive sort");
  c.detail = "mAP oracle gap " + fmt(worst);
  c.finish();
}

// ------------------------------------------------- criteria 7-10 (pipeline)

struct FixtureRun {
  cli::RunConfig cfg;
  fs::path work;
  double mdr_full = 0, mdr_baseline = 0, mdr_ensemble = 0, mdr_zero = 0;
  double ssim_full = 0;
  bool trained = false;
  std::string report_bytes, telemetry_bytes;
};

void criterion_7(FixtureRun& run) {
  Criterion c(7, "desk-scale efficacy");
  std::ostringstream log;
  try {
    cli::RunConfig cfg = run.cfg;
    cfg.output_dir = (run.work / "main").string();
    cfg.settings = {"cross-model&dataset"};
    cli::cmd_train_zoo(cfg, log);
    cli::cmd_train_attack(cfg, log);
    cli::RunRecord rec = cli::cmd_evaluate(cfg, false, log);
    run.mdr_full = rec.reports.at(0).mdr;
    run.ssim_full = rec.reports.at(0).mean_ssim;
    run.report_bytes = slurp(cli::OutputLayout(cfg.output_dir).report_json());
    run.telemetry_bytes = slurp(cli::OutputLayout(cfg.output_dir).telemetry_path());
    run.trained = true;

    cli::RunRecord zero = cli::cmd_evaluate(cfg, true, log);
    run.mdr_zero = zero.reports.at(0).mdr;

    // baseline row: all component flags off (single model, single domain)
    cli::RunConfig base = run.cfg;
    base.output_dir = (run.work / "baseline").string();
    base.flags.pre_enabled = base.flags.normix_enabled = base.flags.cas_enabled = false;
    base.settings = {"cross-model&dataset"};
    fs::create_directories(cli::OutputLayout(base.output_dir).models_dir());
    for (const auto& m : cli::required_models(base))
      fs::copy_file(cli::OutputLayout(cfg.output_dir).model_path(m),
                    cli::OutputLayout(base.output_dir).model_path(m),
                    fs::copy_options::overwrite_existing);
    cli::cmd_train_attack(base, log);
    run.mdr_baseline = cli::cmd_evaluate(base, false, log).reports.at(0).mdr;

    // training-progress check on the telemetry of the main run
    std::istringstream tele(run.telemetry_bytes);
    std::string line;
    std::vector<double> l_adv;
    while (std::getline(tele, line)) {
      const auto j = nlohmann::json::parse(line);
      double acc = 0;
      for (const auto& t : j.at("tasks")) acc += t.at("l_adv_mte").get<double>();
      l_adv.push_back(acc / j.at("tasks").size());
    }
    double first100 = 0, last100 = 0;
    for (int i = 0; i < 100; ++i) first100 += l_adv.at(static_cast<std::size_t>(i));
    for (int i = 0; i < 100; ++i) last100 += l_adv.at(l_adv.size() - 100 + static_cast<std::size_t>(i));
    c.expect(last100 / 100 < first100 / 100,
             "embedding-distance loss did not improve over training");

    c.expect(run.mdr_full >= 30.0, "trained mDR " + fmt(run.mdr_full) + " < 30");
    c.expect(std::abs(run.mdr_zero) <= 1e-9, "zero-generator mDR " + fmt(run.mdr_zero) + " != 0");
    c.expect(run.mdr_full >= run.mdr_baseline + 5.0,
             "full mDR " + fmt(run.mdr_full) + " not >= baseline " + fmt(run.mdr_baseline) + " + 5");
    c.detail = "mDR full " + fmt(run.mdr_full) + ", baseline " + fmt(run.mdr_baseline) +
               ", zero " + fmt(run.mdr_zero);
  } catch (const std::exception& e) {
    c.expect(false, std::string("pipeline error: ") + e.what());
  }
  c.finish();
}

void criterion_8(FixtureRun& run) {
  Criterion c(8, "meta vs ensemble");
  if (!run.trained) {
    c.expect(false, "criterion 7 pipeline unavailable");
    c.finish();
    return;
  }
  std::ostringstream log;
  try {
    cli::RunConfig ens = run.cfg;
    ens.output_dir = (run.work / "ensemble").string();
    ens.attack_mode = cli::AttackMode::ensemble;
    ens.attack_mode_explicit = true;
    ens.settings = {"cross-model&dataset"};
    fs::create_directories(cli::OutputLayout(ens.output_dir).models_dir());
    for (const auto& m : cli::required_models(ens))
      fs::copy_file(cli::OutputLayout((run.work / "main").string()).model_path(m),
                    cli::OutputLayout(ens.output_dir).model_path(m),
                    fs::copy_options::overwrite_existing);
    cli::cmd_train_attack(ens, log);
    run.mdr_ensemble = cli::cmd_evaluate(ens, false, log).reports.at(0).mdr;
    c.expect(run.mdr_full >= run.mdr_ensemble - 2.0,
             "meta mDR " + fmt(run.mdr_full) + " < ensemble " + fmt(run.mdr_ensemble) + " - 2");
    c.detail = "meta " + fmt(run.mdr_full) + " vs ensemble " + fmt(run.mdr_ensemble);
  } catch (const std::exception& e) {
    c.expect(false, std::string("pipeline error: ") + e.what());
  }
  c.finish();
}

void criterion_9(const FixtureRun& run) {
  Criterion c(9, "image quality (SSIM)");
  if (!run.trained) {
    c.expect(false, "criterion 7 pipeline unavailable");
  } else {
    c.expect(run.ssim_full >= 0.85,
             "mean SSIM " + fmt(run.ssim_full) + " < 0.85 at epsilon 8/255");
    c.detail = "mean SSIM " + fmt(run.ssim_full);
  }
  c.finish();
}

void criterion_10(const FixtureRun& run) {
  Criterion c(10, "determinism");
  if (!run.trained) {
    c.expect(false, "criterion 7 pipeline unavailable");
    c.finish();
    return;
  }
  std::ostringstream log;
  try {
    cli::RunConfig cfg = run.cfg;
    cfg.output_dir = (run.work / "repeat").string();
    cfg.settings = {"cross-model&dataset"};
    fs::create_directories(cli::OutputLayout(cfg.output_dir).models_dir());
    for (const auto& m : cli::required_models(cfg))
      fs::copy_file(cli::OutputLayout((run.work / "main").string()).model_path(m),
                    cli::OutputLayout(cfg.output_dir).model_path(m),
                    fs::copy_options::overwrite_existing);
    cli::cmd_train_attack(cfg, log);
    cli::cmd_evaluate(cfg, false, log);
    const std::string report2 = slurp(cli::OutputLayout(cfg.output_dir).report_json());
    const std::string tele2 = slurp(cli::OutputLayout(cfg.output_dir).telemetry_path());
    c.expect(report2 == run.report_bytes, "report bytes differ between identical runs");
    c.expect(tele2 == run.telemetry_bytes, "telemetry bytes differ between identical runs");
    c.detail = "report " + std::to_string(report2.size()) + " bytes compared";
  } catch (const std::exception& e) {
    c.expect(false, std::string("pipeline error: ") + e.what());
  }
  c.finish();
}

}  // namespace

int main(int argc, char** argv) {
  // fixture config: seed and scale pinned in the repository
  std::string fixture = "configs/fixture.json";
  if (argc > 1) fixture = argv[1];
  FixtureRun run;
  try {
    run.cfg = cli::load_config(fixture);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cannot load fixture config %s: %s\n", fixture.c_str(), e.what());
    return 2;
  }
  run.work = fs::temp_directory_path() / "mtga_acceptance";
  fs::remove_all(run.work);
  fs::create_directories(run.work);

  std::printf("acceptance fixture: %s (seed %llu, %lld iterations, kernels %s)\n", fixture.c_str(),
              static_cast<unsigned long long>(run.cfg.seed),
              static_cast<long long>(run.cfg.meta.iterations),
              kernels::isa_name(kernels::active_isa()));
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7(run);
  criterion_8(run);
  criterion_9(run);
  criterion_10(run);

  if (g_failures == 0) {
    std::printf("acceptance: all 10 criteria PASS\n");
    return 0;
  }
  std::printf("acceptance: %d criteria FAILED\n", g_failures);
  return 1;
}
