#pragma once
// Normalization mix: convex combination of a model's running batch-norm
// statistics with statistics captured from another dataset, driving a mixed
// forward pass that embeds inputs into a shifted feature space. The affine
// (gamma, beta) parameters are taken unchanged from the model.

#include <vector>

#include "mtga/reid_models.hpp"
#include "mtga/rng.hpp"

namespace mtga::normix {

// One Beta(a, b) draw; defaults a = b = 5.
inline double sample_mix_coefficient(double a, double b, Rng& rng) { return rng.beta(a, b); }

template <typename T>
struct MixedBnState {
  std::vector<nn::BnStats<T>> stats;  // per layer (mean, var), model layout
  double lambda = 1.0;
  std::string model_id;       // whose running stats were mixed
  std::string data_stats_id;  // which dataset batch supplied the other side
};

// mean_mix = lambda * mean_model + (1 - lambda) * mean_data, and likewise for
// the variances (variance, not standard deviation, is mixed linearly, so the
// result is a convex combination of nonnegatives).
template <typename T>
MixedBnState<T> mix_stats(const std::vector<nn::BnBuffer<T>>& model_bn,
                          const std::vector<nn::BnStats<T>>& data_stats, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("mix_stats: lambda must be in [0, 1]");
  if (model_bn.size() != data_stats.size())
    throw std::invalid_argument("mix_stats: layer count mismatch");
  MixedBnState<T> out;
  out.lambda = lambda;
  out.stats.resize(model_bn.size());
  for (std::size_t i = 0; i < model_bn.size(); ++i) {
    const auto& mb = model_bn[i];
    const auto& ds = data_stats[i];
    if (!mb.running_mean.same_shape(ds.mean) || !mb.running_var.same_shape(ds.var))
      throw std::invalid_argument("mix_stats: channel count mismatch at layer " +
                                  std::to_string(i));
    Tensor<T> mean(mb.running_mean.shape());
    Tensor<T> var(mb.running_var.shape());
    for (std::int64_t c = 0; c < mean.numel(); ++c) {
      mean[c] = static_cast<T>(lambda * static_cast<double>(mb.running_mean[c]) +
                               (1.0 - lambda) * static_cast<double>(ds.mean[c]));
      var[c] = static_cast<T>(lambda * static_cast<double>(mb.running_var[c]) +
                              (1.0 - lambda) * static_cast<double>(ds.var[c]));
    }
    out.stats[i] = nn::BnStats<T>{std::move(mean), std::move(var)};
  }
  return out;
}

// Graph-level mixed forward; differentiable w.r.t. the batch.
template <typename T>
Var<T> forward_with_mixed_bn(const reid::EmbedNet<T>& net, const std::vector<Var<T>>& P,
                             const Var<T>& x, const MixedBnState<T>& mixed) {
  nn::BnContext<T> ctx;
  ctx.mode = nn::BnMode::mixed;
  ctx.mixed = &mixed.stats;
  return net.embed(P, x, ctx);
}

// Value-level convenience (no gradients).
template <typename T>
Tensor<T> forward_with_mixed_bn(const reid::EmbedNet<T>& net, const Tensor<T>& pixels,
                                const MixedBnState<T>& mixed) {
  NoGradGuard ng;
  return forward_with_mixed_bn(net, nn::make_constants(net.params), Var<T>::constant(pixels), mixed)
      .val();
}

}  // namespace mtga::normix
