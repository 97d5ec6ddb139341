#pragma once
// Bilevel attack training. Each iteration samples T simulated transfer-attack
// tasks (distinct surrogate/target models and source/shifted-domain batches),
// runs a plain inner gradient step on the generator against the surrogate,
// evaluates the updated generator on the target side under perturbation
// erasing and normalization mixing, and applies one adaptive-moment outer
// step to the generator and discriminator from the averaged test losses.

#include <cmath>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "mtga/attacker.hpp"
#include "mtga/normix.hpp"
#include "mtga/pre.hpp"
#include "mtga/reid_models.hpp"
#include "mtga/threads.hpp"

namespace mtga::meta_engine {

struct MetaConfig {
  double inner_lr = 1e-4;   // inner-loop learning rate
  double outer_lr = 2e-4;   // outer-loop learning rate
  std::int64_t tasks_per_iter = 5;
  std::int64_t iterations = 2000;
  std::int64_t batch_size = 16;
  double epsilon = attacker::kDefaultEpsilon;
  double pre_p = 0.8;
  double pre_m = 0.2;
  double beta_a = 5.0;
  double beta_b = 5.0;
  bool second_order = false;
  bool pre_enabled = true;
  bool normix_enabled = true;
  bool cas_enabled = true;
  std::uint64_t rng_seed = 1;

  void check() const {
    if (inner_lr <= 0 || outer_lr <= 0) throw std::invalid_argument("learning rates must be positive");
    if (tasks_per_iter < 1) throw std::invalid_argument("tasks_per_iter must be >= 1");
    if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  }
};

template <typename T>
struct MetaTask {
  Tensor<T> x_mtr, x_mte;  // [B,3,H,W]
  std::string domain_mtr, domain_mte;
  const reid::EmbedNet<T>* m_mtr = nullptr;
  const reid::EmbedNet<T>* m_mte = nullptr;
  double lambda = 1.0;
  std::uint64_t pre_seed = 0;
};

template <typename T>
Tensor<T> pixels_as(const synthzoo::ImageBatch& b) {
  return b.pixels.template cast<T>();
}

// CAS: ordered distinct model pair, ordered distinct domain pair, one batch
// from each domain's train split, a Beta mix coefficient and a mask stream.
template <typename T>
MetaTask<T> sample_task(const std::vector<const reid::EmbedNet<T>*>& model_zoo,
                        const std::vector<const synthzoo::SplitDataset*>& data_zoo,
                        std::int64_t batch_size, Rng& rng, double beta_a = 5.0,
                        double beta_b = 5.0) {
  if (model_zoo.size() < 2) throw std::invalid_argument("sample_task: model zoo needs >= 2 members");
  if (data_zoo.size() < 2) throw std::invalid_argument("sample_task: data zoo needs >= 2 domains");
  MetaTask<T> task;
  const std::uint64_t nm = model_zoo.size();
  const std::uint64_t mi = rng.below(nm);
  std::uint64_t mj = rng.below(nm - 1);
  if (mj >= mi) ++mj;
  task.m_mtr = model_zoo[static_cast<std::size_t>(mi)];
  task.m_mte = model_zoo[static_cast<std::size_t>(mj)];

  const std::uint64_t nd = data_zoo.size();
  const std::uint64_t di = rng.below(nd);
  std::uint64_t dj = rng.below(nd - 1);
  if (dj >= di) ++dj;
  const synthzoo::SplitDataset* src = data_zoo[static_cast<std::size_t>(di)];
  const synthzoo::SplitDataset* dst = data_zoo[static_cast<std::size_t>(dj)];
  task.domain_mtr = src->data.domain;
  task.domain_mte = dst->data.domain;
  task.x_mtr = pixels_as<T>(synthzoo::sample_batch(*src, batch_size, rng));
  task.x_mte = pixels_as<T>(synthzoo::sample_batch(*dst, batch_size, rng));
  task.lambda = rng.beta(beta_a, beta_b);
  task.pre_seed = rng.next_u64();
  return task;
}

template <typename T>
struct InnerResult {
  double l_mtr = 0.0;
  std::vector<Var<T>> theta_prime;
};

namespace detail {

template <typename T>
Var<T> grad_var_or_zero(GradMap<T>& grads, const Var<T>& v) {
  if (grads.contains(v)) return grads.at(v);
  return Var<T>::constant(Tensor<T>::zeros(v.shape()));
}

}  // namespace detail

// Inner step: white-box attack loss against the surrogate on the source
// batch (no erasing, running statistics), then one plain gradient-descent
// update theta' = theta - eta * grad. In first-order mode theta' are fresh
// leaves; with second_order the update stays connected to theta.
template <typename T, typename GenNet, typename DisNet>
InnerResult<T> meta_train_step(const GenNet& gen, const std::vector<Var<T>>& theta,
                               const DisNet& dis, const MetaTask<T>& task, double eta,
                               bool second_order = false) {
  Var<T> x = Var<T>::constant(task.x_mtr);
  Var<T> delta = gen.perturbation(theta, x);
  Var<T> x_adv = attacker::apply_perturbation(x, delta, Var<T>());

  auto m_params = nn::make_constants(task.m_mtr->params);
  nn::BnContext<T> ctx;  // running stats
  Var<T> emb_adv = task.m_mtr->embed(m_params, x_adv, ctx);
  Tensor<T> emb_clean;
  {
    NoGradGuard ng;
    emb_clean = task.m_mtr->embed(m_params, x, ctx).val();
  }
  Var<T> l_adv = attacker::adversarial_loss(emb_adv, Var<T>::constant(emb_clean));
  Var<T> p_adv = dis.probability(nn::make_constants(dis.params), x_adv);
  Var<T> l_mtr = add(attacker::generator_gan_loss(p_adv), l_adv);
  if (!std::isfinite(static_cast<double>(l_mtr.item())))
    throw std::runtime_error("meta_train_step: non-finite loss (domains " + task.domain_mtr +
                             "->" + task.domain_mte + ")");

  auto grads = backward(l_mtr, /*create_graph=*/second_order);
  InnerResult<T> out;
  out.l_mtr = static_cast<double>(l_mtr.item());
  out.theta_prime.reserve(theta.size());
  for (const auto& th : theta) {
    Var<T> g = detail::grad_var_or_zero(grads, th);
    if (second_order) {
      out.theta_prime.push_back(sub(th, scale(g, eta)));
    } else {
      Tensor<T> updated(th.shape());
      const Tensor<T>& tv = th.val();
      const Tensor<T>& gv = g.val();
      for (std::int64_t i = 0; i < updated.numel(); ++i)
        updated[i] = static_cast<T>(static_cast<double>(tv[i]) - eta * static_cast<double>(gv[i]));
      out.theta_prime.push_back(Var<T>::leaf(std::move(updated)));
    }
  }
  return out;
}

template <typename T>
struct TestStepResult {
  Var<T> l_mte;        // graph over theta' (and theta when second order)
  Var<T> l_d;          // graph over the discriminator leaves
  double l_adv_part = 0.0;  // embedding-distance component, for telemetry
};

// Test step: the updated generator attacks the target-side batch; masks are
// drawn per image from the task's mask stream, and the target model runs
// with mixed normalization statistics (captured from the source batch).
// l_mte carries the generator path (discriminator frozen); l_d carries the
// discriminator path (adversarial images detached).
template <typename T, typename GenNet, typename DisNet>
TestStepResult<T> meta_test_step(const GenNet& gen, const std::vector<Var<T>>& theta_prime,
                                 const DisNet& dis, const std::vector<Var<T>>& phi,
                                 const MetaTask<T>& task, const MetaConfig& cfg) {
  Var<T> x = Var<T>::constant(task.x_mte);
  Var<T> delta = gen.perturbation(theta_prime, x);
  if (cfg.pre_enabled) {
    Rng pre_rng(task.pre_seed);
    std::vector<pre::RandomPattern> pats;
    const auto& s = x.shape();
    for (std::int64_t i = 0; i < s[0]; ++i)
      pats.push_back(pre::sample_pattern(s[2], s[3], cfg.pre_p, cfg.pre_m, pre_rng));
    delta = pre::erase(delta, pats);
  }
  Var<T> x_adv = attacker::apply_perturbation(x, delta, Var<T>());

  auto m_params = nn::make_constants(task.m_mte->params);
  Var<T> emb_adv;
  Tensor<T> emb_clean;
  if (cfg.normix_enabled) {
    auto data_stats = reid::capture_bn_stats(*task.m_mte, task.x_mtr);
    auto mixed = normix::mix_stats(task.m_mte->bn_buffers, data_stats, task.lambda);
    mixed.model_id = task.m_mte->variant_id;
    mixed.data_stats_id = task.domain_mtr;
    emb_adv = normix::forward_with_mixed_bn(*task.m_mte, m_params, x_adv, mixed);
    {
      NoGradGuard ng;
      emb_clean = normix::forward_with_mixed_bn(*task.m_mte, m_params, x, mixed).val();
    }
  } else {
    nn::BnContext<T> ctx;  // running stats
    emb_adv = task.m_mte->embed(m_params, x_adv, ctx);
    {
      NoGradGuard ng;
      emb_clean = task.m_mte->embed(m_params, x, ctx).val();
    }
  }
  Var<T> l_adv = attacker::adversarial_loss(emb_adv, Var<T>::constant(emb_clean));
  Var<T> p_adv = dis.probability(nn::make_constants(dis.params), x_adv);

  TestStepResult<T> out;
  out.l_adv_part = static_cast<double>(l_adv.item());
  out.l_mte = add(attacker::generator_gan_loss(p_adv), l_adv);

  Var<T> x_adv_det = x_adv.detach();
  Var<T> p_clean_d = dis.probability(phi, x);
  Var<T> p_adv_d = dis.probability(phi, x_adv_det);
  out.l_d = attacker::discriminator_loss(p_clean_d, p_adv_d);

  if (!std::isfinite(static_cast<double>(out.l_mte.item())) ||
      !std::isfinite(static_cast<double>(out.l_d.item())))
    throw std::runtime_error("meta_test_step: non-finite loss (domains " + task.domain_mtr + "->" +
                             task.domain_mte + ", lambda " + std::to_string(task.lambda) + ")");
  return out;
}

template <typename T>
struct TrainState {
  attacker::GeneratorNet<T> gen;
  attacker::DiscriminatorNet<T> dis;
  nn::Adam<T> opt_gen, opt_dis;
  std::int64_t iteration = 0;
};

struct TaskTelemetry {
  double l_mtr = 0, l_mte = 0, l_d = 0, l_adv_mte = 0, lambda = 0;
  std::string domain_mtr, domain_mte, model_mtr, model_mte;
};

struct IterationTelemetry {
  std::int64_t iteration = 0;
  std::vector<TaskTelemetry> tasks;
};

// One outer update over a list of tasks: averaged meta-test loss drives the
// generator step, averaged discrimination loss drives the discriminator
// step. Tasks may be evaluated concurrently; gradients are reduced in task
// order so results do not depend on the thread count.
template <typename T>
IterationTelemetry outer_update(TrainState<T>& state, const std::vector<MetaTask<T>>& tasks,
                                const MetaConfig& cfg) {
  const std::int64_t n_tasks = static_cast<std::int64_t>(tasks.size());
  if (n_tasks < 1) throw std::invalid_argument("outer_update: need at least one task");
  const double inv_t = 1.0 / static_cast<double>(n_tasks);

  struct PerTask {
    std::vector<Tensor<T>> g_theta, g_phi;
    TaskTelemetry tele;
  };
  std::vector<PerTask> results(static_cast<std::size_t>(n_tasks));

  std::exception_ptr first_error;
  std::mutex error_mu;
  parallel_for_index(n_tasks, [&](std::int64_t ti) {
    try {
      const MetaTask<T>& task = tasks[static_cast<std::size_t>(ti)];
      PerTask& out = results[static_cast<std::size_t>(ti)];

      auto theta = nn::make_leaves(state.gen.params);
      auto phi = nn::make_leaves(state.dis.params);
      InnerResult<T> inner =
          meta_train_step(state.gen, theta, state.dis, task, cfg.inner_lr, cfg.second_order);
      TestStepResult<T> test =
          meta_test_step(state.gen, inner.theta_prime, state.dis, phi, task, cfg);

      auto g_grads = backward(scale(test.l_mte, inv_t), false);
      out.g_theta.reserve(theta.size());
      for (std::size_t i = 0; i < theta.size(); ++i) {
        // First order: gradient read at theta' and applied to theta.
        // Second order: theta' is connected, so the gradient lands on theta.
        const Var<T>& key = cfg.second_order ? theta[i] : inner.theta_prime[i];
        out.g_theta.push_back(g_grads.grad_or_zero(key));
      }
      auto d_grads = backward(scale(test.l_d, inv_t), false);
      out.g_phi.reserve(phi.size());
      for (const auto& v : phi) out.g_phi.push_back(d_grads.grad_or_zero(v));

      out.tele.l_mtr = inner.l_mtr;
      out.tele.l_mte = static_cast<double>(test.l_mte.item());
      out.tele.l_d = static_cast<double>(test.l_d.item());
      out.tele.l_adv_mte = test.l_adv_part;
      out.tele.lambda = task.lambda;
      out.tele.domain_mtr = task.domain_mtr;
      out.tele.domain_mte = task.domain_mte;
      out.tele.model_mtr = task.m_mtr->variant_id;
      out.tele.model_mte = task.m_mte->variant_id;
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mu);
      if (!first_error) first_error = std::current_exception();
    }
  });
  if (first_error) std::rethrow_exception(first_error);

  std::vector<Tensor<T>> g_theta, g_phi;
  for (const auto& v : state.gen.params.values) g_theta.push_back(Tensor<T>::zeros(v.shape()));
  for (const auto& v : state.dis.params.values) g_phi.push_back(Tensor<T>::zeros(v.shape()));
  for (const auto& r : results) {
    for (std::size_t i = 0; i < g_theta.size(); ++i)
      kernels::add(g_theta[i].numel(), g_theta[i].data(), r.g_theta[i].data(), g_theta[i].data());
    for (std::size_t i = 0; i < g_phi.size(); ++i)
      kernels::add(g_phi[i].numel(), g_phi[i].data(), r.g_phi[i].data(), g_phi[i].data());
  }
  state.opt_gen.step(state.gen.params, g_theta, cfg.outer_lr);
  state.opt_dis.step(state.dis.params, g_phi, cfg.outer_lr);
  for (const auto& p : state.gen.params.values)
    for (std::int64_t i = 0; i < p.numel(); ++i)
      if (!std::isfinite(static_cast<double>(p[i])))
        throw std::runtime_error("outer_update: non-finite generator parameter after iteration " +
                                 std::to_string(state.iteration));
  ++state.iteration;

  IterationTelemetry tele;
  tele.iteration = state.iteration;
  for (auto& r : results) tele.tasks.push_back(std::move(r.tele));
  return tele;
}

using TelemetrySink = std::function<void(const IterationTelemetry&)>;

// Full training loop. Deterministic given cfg.rng_seed: the per-iteration
// task sampling consumes a derived stream, independent of thread count.
// checkpoint_hook, when given, fires every checkpoint_every iterations.
template <typename T>
TrainState<T> train(const MetaConfig& cfg,
                    const std::vector<const reid::EmbedNet<T>*>& model_zoo,
                    const std::vector<const synthzoo::SplitDataset*>& data_zoo,
                    const TelemetrySink& sink = {},
                    const std::function<void(const TrainState<T>&, std::int64_t)>& checkpoint_hook = {},
                    std::int64_t checkpoint_every = 0) {
  cfg.check();
  TrainState<T> state;
  Rng master(cfg.rng_seed);
  state.gen = attacker::GeneratorNet<T>::build(cfg.epsilon, master.split(0x6e67).next_u64());
  state.dis = attacker::DiscriminatorNet<T>::build(master.split(0x6469).next_u64());
  state.opt_gen.init_like(state.gen.params);
  state.opt_dis.init_like(state.dis.params);

  for (std::int64_t iter = 0; iter < cfg.iterations; ++iter) {
    Rng iter_rng = master.split(0x7461736bULL + static_cast<std::uint64_t>(iter));
    std::vector<MetaTask<T>> tasks;
    tasks.reserve(static_cast<std::size_t>(cfg.tasks_per_iter));
    for (std::int64_t t = 0; t < cfg.tasks_per_iter; ++t)
      tasks.push_back(
          sample_task<T>(model_zoo, data_zoo, cfg.batch_size, iter_rng, cfg.beta_a, cfg.beta_b));
    try {
      IterationTelemetry tele = outer_update(state, tasks, cfg);
      if (sink) sink(tele);
    } catch (const std::exception& e) {
      throw std::runtime_error("training aborted at iteration " + std::to_string(iter) + ": " +
                               e.what());
    }
    if (checkpoint_hook && checkpoint_every > 0 && (iter + 1) % checkpoint_every == 0)
      checkpoint_hook(state, iter + 1);
  }
  return state;
}

// Non-meta comparison loop (single-model baseline and the ensemble-trained
// variant): per iteration one batch from a randomly chosen domain, summed
// embedding-distance losses over all given models plus the GAN loss, plain
// adaptive-moment updates for generator and discriminator.
template <typename T>
TrainState<T> train_non_meta(const MetaConfig& cfg,
                             const std::vector<const reid::EmbedNet<T>*>& models,
                             const std::vector<const synthzoo::SplitDataset*>& domains,
                             const TelemetrySink& sink = {}) {
  cfg.check();
  if (models.empty() || domains.empty())
    throw std::invalid_argument("train_non_meta: need at least one model and one domain");
  TrainState<T> state;
  Rng master(cfg.rng_seed);
  state.gen = attacker::GeneratorNet<T>::build(cfg.epsilon, master.split(0x6e67).next_u64());
  state.dis = attacker::DiscriminatorNet<T>::build(master.split(0x6469).next_u64());
  state.opt_gen.init_like(state.gen.params);
  state.opt_dis.init_like(state.dis.params);

  for (std::int64_t iter = 0; iter < cfg.iterations; ++iter) {
    Rng iter_rng = master.split(0x656e73ULL + static_cast<std::uint64_t>(iter));
    const auto* dom = domains[static_cast<std::size_t>(iter_rng.below(domains.size()))];
    Tensor<T> xb = pixels_as<T>(synthzoo::sample_batch(*dom, cfg.batch_size, iter_rng));

    auto theta = nn::make_leaves(state.gen.params);
    auto phi = nn::make_leaves(state.dis.params);
    Var<T> x = Var<T>::constant(xb);
    Var<T> delta = state.gen.perturbation(theta, x);
    Var<T> x_adv = attacker::apply_perturbation(x, delta, Var<T>());

    Var<T> loss;
    double l_adv_sum = 0;
    for (const auto* m : models) {
      auto mp = nn::make_constants(m->params);
      nn::BnContext<T> ctx;
      Var<T> emb_adv = m->embed(mp, x_adv, ctx);
      Tensor<T> emb_clean;
      {
        NoGradGuard ng;
        emb_clean = m->embed(mp, x, ctx).val();
      }
      Var<T> l_adv = attacker::adversarial_loss(emb_adv, Var<T>::constant(emb_clean));
      l_adv_sum += static_cast<double>(l_adv.item());
      loss = loss.defined() ? add(loss, l_adv) : l_adv;
    }
    Var<T> p_adv = state.dis.probability(nn::make_constants(state.dis.params), x_adv);
    loss = add(loss, attacker::generator_gan_loss(p_adv));
    if (!std::isfinite(static_cast<double>(loss.item())))
      throw std::runtime_error("train_non_meta: non-finite loss at iteration " +
                               std::to_string(iter));

    auto g_grads = backward(loss, false);
    std::vector<Tensor<T>> g_theta;
    for (const auto& v : theta) g_theta.push_back(g_grads.grad_or_zero(v));

    Var<T> x_adv_det = x_adv.detach();
    Var<T> l_d = attacker::discriminator_loss(state.dis.probability(phi, x),
                                              state.dis.probability(phi, x_adv_det));
    auto d_grads = backward(l_d, false);
    std::vector<Tensor<T>> g_phi;
    for (const auto& v : phi) g_phi.push_back(d_grads.grad_or_zero(v));

    state.opt_gen.step(state.gen.params, g_theta, cfg.outer_lr);
    state.opt_dis.step(state.dis.params, g_phi, cfg.outer_lr);
    ++state.iteration;

    if (sink) {
      IterationTelemetry tele;
      tele.iteration = state.iteration;
      TaskTelemetry tt;
      tt.l_mtr = static_cast<double>(loss.item());
      tt.l_mte = tt.l_mtr;
      tt.l_d = static_cast<double>(l_d.item());
      tt.l_adv_mte = l_adv_sum;
      tt.lambda = 1.0;
      tt.domain_mtr = dom->data.domain;
      tt.domain_mte = dom->data.domain;
      tt.model_mtr = models.front()->variant_id;
      tt.model_mte = models.front()->variant_id;
      tele.tasks.push_back(std::move(tt));
      sink(tele);
    }
  }
  return state;
}

}  // namespace mtga::meta_engine
