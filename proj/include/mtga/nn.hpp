#pragma once
// Network building blocks in functional style: parameters live in a named
// ParamSet owned by the model value; forward passes take an aligned vector of
// Vars, so the same code runs with trainable leaves, frozen constants, or
// derived parameters (e.g. an inner-loop updated copy).

#include <cmath>
#include <string>
#include <vector>

#include "mtga/ops.hpp"
#include "mtga/ops_conv.hpp"
#include "mtga/rng.hpp"

namespace mtga::nn {

template <typename T>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor<T>> values;

  int add(std::string name, Tensor<T> v) {
    names.push_back(std::move(name));
    values.push_back(std::move(v));
    return static_cast<int>(values.size()) - 1;
  }

  std::size_t size() const { return values.size(); }

  std::int64_t total_elems() const {
    std::int64_t n = 0;
    for (const auto& v : values) n += v.numel();
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    out.names = names;
    for (const auto& v : values) out.values.push_back(v.template cast<U>());
    return out;
  }
};

template <typename T>
std::vector<Var<T>> make_leaves(const ParamSet<T>& p) {
  std::vector<Var<T>> vars;
  vars.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) vars.push_back(Var<T>::leaf(p.values[i], p.names[i]));
  return vars;
}

template <typename T>
std::vector<Var<T>> make_constants(const ParamSet<T>& p) {
  std::vector<Var<T>> vars;
  vars.reserve(p.size());
  for (const auto& v : p.values) vars.push_back(Var<T>::constant(v));
  return vars;
}

// ------------------------------------------------------------------- init

template <typename T>
Tensor<T> he_normal(Shape shape, std::int64_t fan_in, Rng& rng, double gain = 1.0) {
  Tensor<T> t(std::move(shape));
  const double stddev = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

// ------------------------------------------------------------------ layers

template <typename T>
struct Conv2d {
  int w = -1, b = -1;
  std::int64_t stride = 1, pad = 1;

  static Conv2d create(ParamSet<T>& ps, const std::string& name, std::int64_t in_c,
                       std::int64_t out_c, std::int64_t k, std::int64_t stride, std::int64_t pad,
                       Rng& rng, double init_gain = 1.0) {
    Conv2d l;
    l.stride = stride;
    l.pad = pad;
    l.w = ps.add(name + ".w", he_normal<T>({out_c, in_c, k, k}, in_c * k * k, rng, init_gain));
    l.b = ps.add(name + ".b", Tensor<T>::zeros({out_c}));
    return l;
  }

  Var<T> operator()(const std::vector<Var<T>>& P, const Var<T>& x) const {
    return conv2d(x, P[w], P[b], stride, pad);
  }
};

template <typename T>
struct Linear {
  int w = -1, b = -1;  // w: [out, in]

  static Linear create(ParamSet<T>& ps, const std::string& name, std::int64_t in_dim,
                       std::int64_t out_dim, Rng& rng) {
    Linear l;
    l.w = ps.add(name + ".w", he_normal<T>({out_dim, in_dim}, in_dim, rng));
    l.b = ps.add(name + ".b", Tensor<T>::zeros({out_dim}));
    return l;
  }

  Var<T> operator()(const std::vector<Var<T>>& P, const Var<T>& x) const {
    return add(matmul(x, P[w], false, true), tile_rows(P[b], x.shape()[0]));
  }
};

// Per-layer batch-norm statistics (population mean / variance over B,H,W).
template <typename T>
struct BnStats {
  Tensor<T> mean;  // [C]
  Tensor<T> var;   // [C]
};

template <typename T>
struct BnBuffer {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

enum class BnMode { running, batch, mixed };

template <typename T>
struct BnContext {
  BnMode mode = BnMode::running;
  const std::vector<BnStats<T>>* mixed = nullptr;  // normalization stats per layer (mixed)
  std::vector<BnStats<T>>* capture = nullptr;      // out-param: batch stats per layer
  std::vector<BnBuffer<T>>* update_running = nullptr;  // training: buffers to update
  double momentum = 0.1;
};

template <typename T>
struct BatchNorm2d {
  int gamma = -1, beta = -1;
  int buffer_index = -1;  // into the model's BnBuffer vector
  double eps = 1e-5;

  static BatchNorm2d create(ParamSet<T>& ps, std::vector<BnBuffer<T>>& buffers,
                            const std::string& name, std::int64_t channels) {
    BatchNorm2d l;
    l.gamma = ps.add(name + ".gamma", Tensor<T>::full({channels}, T(1)));
    l.beta = ps.add(name + ".beta", Tensor<T>::zeros({channels}));
    l.buffer_index = static_cast<int>(buffers.size());
    buffers.push_back(BnBuffer<T>{Tensor<T>::zeros({channels}), Tensor<T>::full({channels}, T(1))});
    return l;
  }

  // Normalize with the given per-channel stats (constants w.r.t. the graph),
  // then apply the trainable affine.
  Var<T> affine_normalize(const std::vector<Var<T>>& P, const Var<T>& x, const Tensor<T>& mean,
                          const Tensor<T>& var) const {
    Var<T> mu = Var<T>::constant(mean);
    Var<T> inv = recip(sqrt_guarded(add_scalar(Var<T>::constant(var), eps)));
    Var<T> scale_c = mul(P[gamma], inv);
    Var<T> shift_c = sub(P[beta], mul(mu, scale_c));
    return channel_affine(x, scale_c, shift_c);
  }

  Var<T> operator()(const std::vector<Var<T>>& P, const Var<T>& x, const BnContext<T>& ctx,
                    const std::vector<BnBuffer<T>>& buffers) const {
    const auto& s = x.shape();
    const BnBuffer<T>& buf = buffers[static_cast<std::size_t>(buffer_index)];
    switch (ctx.mode) {
      case BnMode::running:
        return affine_normalize(P, x, buf.running_mean, buf.running_var);
      case BnMode::mixed: {
        const BnStats<T>& st = (*ctx.mixed)[static_cast<std::size_t>(buffer_index)];
        return affine_normalize(P, x, st.mean, st.var);
      }
      case BnMode::batch: {
        if (s[0] * s[2] * s[3] < 2)
          throw std::invalid_argument("batch-mode batch norm needs at least 2 samples");
        const double inv_n = 1.0 / static_cast<double>(s[0] * s[2] * s[3]);
        Var<T> mu = scale(channel_sum(x), inv_n);
        Var<T> xc = channel_affine(x, Var<T>::constant(Tensor<T>::full({s[1]}, T(1))), neg(mu));
        Var<T> var = scale(channel_dot(xc, xc), inv_n);
        if (ctx.capture != nullptr)
          (*ctx.capture)[static_cast<std::size_t>(buffer_index)] =
              BnStats<T>{mu.val(), var.val()};
        if (ctx.update_running != nullptr) {
          BnBuffer<T>& upd = (*ctx.update_running)[static_cast<std::size_t>(buffer_index)];
          const double m = ctx.momentum;
          for (std::int64_t c = 0; c < s[1]; ++c) {
            upd.running_mean[c] = static_cast<T>((1.0 - m) * upd.running_mean[c] + m * mu.val()[c]);
            upd.running_var[c] = static_cast<T>((1.0 - m) * upd.running_var[c] + m * var.val()[c]);
          }
        }
        Var<T> inv = recip(sqrt_guarded(add_scalar(var, eps)));
        Var<T> xhat = channel_affine(xc, inv, Var<T>::constant(Tensor<T>::zeros({s[1]})));
        return channel_affine(xhat, P[gamma], P[beta]);
      }
    }
    throw std::logic_error("unreachable bn mode");
  }
};

// ----------------------------------------------------------------- pooling

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& s = x.shape();
  return scale(spatial_sum(x), 1.0 / static_cast<double>(s[2] * s[3]));
}

template <typename T>
Var<T> stripe_avg_pool(const Var<T>& x, std::int64_t r0, std::int64_t r1) {
  const auto& s = x.shape();
  return scale(row_range_sum(x, r0, r1), 1.0 / static_cast<double>((r1 - r0) * s[3]));
}

// -------------------------------------------------------------------- loss

// Mean cross-entropy of row logits against integer labels.
template <typename T>
Var<T> cross_entropy_logits(const Var<T>& logits, const std::vector<std::int64_t>& labels) {
  const auto& s = logits.shape();
  if (s.size() != 2 || static_cast<std::int64_t>(labels.size()) != s[0])
    throw std::invalid_argument("cross_entropy_logits: bad labels");
  // log-sum-exp with a constant row max; exact for all derivative orders.
  Tensor<T> row_max(Shape{s[0]});
  for (std::int64_t r = 0; r < s[0]; ++r) {
    T m = logits.val().at(r, 0);
    for (std::int64_t c = 1; c < s[1]; ++c) m = std::max(m, logits.val().at(r, c));
    row_max[r] = m;
  }
  Var<T> mc = Var<T>::constant(row_max);
  Var<T> shifted = sub(logits, tile_cols(mc, s[1]));
  Var<T> lse = add(log_shifted(row_sum(vexp(shifted)), 0.0), mc);
  Var<T> picked = gather_cols(logits, labels);
  return mean_all(sub(lse, picked));
}

// -------------------------------------------------------------------- adam

// Adaptive-moment update, beta1=0.9, beta2=0.999, bias-corrected.
template <typename T>
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Tensor<T>> m, v;

  void init_like(const ParamSet<T>& p) {
    m.clear();
    v.clear();
    for (const auto& x : p.values) {
      m.push_back(Tensor<T>::zeros(x.shape()));
      v.push_back(Tensor<T>::zeros(x.shape()));
    }
    t = 0;
  }

  void step(ParamSet<T>& params, const std::vector<Tensor<T>>& grads, double lr) {
    if (m.empty()) init_like(params);
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = params.values[i];
      const Tensor<T>& g = grads[i];
      Tensor<T>& mi = m[i];
      Tensor<T>& vi = v[i];
      for (std::int64_t j = 0; j < p.numel(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = beta1 * static_cast<double>(mi[j]) + (1.0 - beta1) * gj;
        const double vj = beta2 * static_cast<double>(vi[j]) + (1.0 - beta2) * gj * gj;
        mi[j] = static_cast<T>(mj);
        vi[j] = static_cast<T>(vj);
        p[j] = static_cast<T>(static_cast<double>(p[j]) -
                              lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps));
      }
    }
  }
};

}  // namespace mtga::nn
