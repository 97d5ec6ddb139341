#pragma once
// Generative attacker: encoder-decoder generator with a tanh-bounded output
// scaled by the L-inf budget, a small conv discriminator with clamped logits,
// perturbation application under the pixel box, and the three training
// losses (embedding-distance, generator GAN, discriminator GAN).

#include <cstdint>
#include <string>
#include <vector>

#include "mtga/nn.hpp"

namespace mtga::attacker {

inline constexpr double kDefaultEpsilon = 8.0 / 255.0;
inline constexpr double kLogitClamp = 15.0;
inline constexpr double kLogPad = 1e-12;

template <typename T>
struct GeneratorNet {
  nn::ParamSet<T> params;
  double epsilon = kDefaultEpsilon;

  nn::Conv2d<T> enc1, enc2, enc3;
  nn::Conv2d<T> res1a, res1b, res2a, res2b;
  nn::Conv2d<T> dec1, dec2, head;

  static GeneratorNet build(double epsilon, std::uint64_t seed) {
    if (!(epsilon > 0.0 && epsilon < 1.0))
      throw std::invalid_argument("generator epsilon must be in (0, 1)");
    GeneratorNet g;
    g.epsilon = epsilon;
    Rng rng(seed);
    auto& ps = g.params;
    g.enc1 = nn::Conv2d<T>::create(ps, "enc1", 3, 8, 3, 2, 1, rng);
    g.enc2 = nn::Conv2d<T>::create(ps, "enc2", 8, 16, 3, 2, 1, rng);
    g.enc3 = nn::Conv2d<T>::create(ps, "enc3", 16, 36, 3, 2, 1, rng);
    g.res1a = nn::Conv2d<T>::create(ps, "res1a", 36, 36, 3, 1, 1, rng);
    g.res1b = nn::Conv2d<T>::create(ps, "res1b", 36, 36, 3, 1, 1, rng);
    g.res2a = nn::Conv2d<T>::create(ps, "res2a", 36, 36, 3, 1, 1, rng);
    g.res2b = nn::Conv2d<T>::create(ps, "res2b", 36, 36, 3, 1, 1, rng);
    g.dec1 = nn::Conv2d<T>::create(ps, "dec1", 36, 16, 3, 1, 1, rng);
    g.dec2 = nn::Conv2d<T>::create(ps, "dec2", 16, 8, 3, 1, 1, rng);
    g.head = nn::Conv2d<T>::create(ps, "head", 8, 3, 3, 1, 1, rng, 0.2);
    return g;
  }

  // delta = epsilon * tanh(decoder(x)); |delta| < epsilon by construction.
  Var<T> perturbation(const std::vector<Var<T>>& P, const Var<T>& x) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] % 8 != 0 || s[3] % 8 != 0)
      throw std::invalid_argument("generator input must be [B,3,H,W] with H,W divisible by 8");
    Var<T> h = relu(enc1(P, x));
    h = relu(enc2(P, h));
    h = relu(enc3(P, h));
    h = relu(add(h, res1b(P, relu(res1a(P, h)))));
    h = relu(add(h, res2b(P, relu(res2a(P, h)))));
    h = relu(dec1(P, upsample_nearest2(h)));
    h = relu(dec2(P, upsample_nearest2(h)));
    return scale(tanh(head(P, upsample_nearest2(h))), epsilon);
  }
};

template <typename T>
struct DiscriminatorNet {
  nn::ParamSet<T> params;
  nn::Conv2d<T> c1, c2, c3;
  nn::Linear<T> fc;

  static DiscriminatorNet build(std::uint64_t seed) {
    DiscriminatorNet d;
    Rng rng(seed);
    auto& ps = d.params;
    d.c1 = nn::Conv2d<T>::create(ps, "c1", 3, 16, 3, 2, 1, rng);
    d.c2 = nn::Conv2d<T>::create(ps, "c2", 16, 32, 3, 2, 1, rng);
    d.c3 = nn::Conv2d<T>::create(ps, "c3", 32, 64, 3, 2, 1, rng);
    d.fc = nn::Linear<T>::create(ps, "fc", 64, 1, rng);
    return d;
  }

  // Per-image probability in (sigmoid(-15), sigmoid(15)); logits clamped.
  Var<T> probability(const std::vector<Var<T>>& P, const Var<T>& x) const {
    Var<T> h = relu(c1(P, x));
    h = relu(c2(P, h));
    h = relu(c3(P, h));
    Var<T> logits = fc(P, nn::global_avg_pool(h));  // [B,1]
    Var<T> clamped = clamp(logits, -kLogitClamp, kLogitClamp);
    return reshape(sigmoid(clamped), Shape{x.shape()[0]});
  }
};

// Value-level perturbation batch: the generator output for a batch together
// with its bound.
template <typename T>
struct PerturbationBatch {
  Tensor<T> delta;  // [B,3,H,W], |delta| <= epsilon elementwise
  double epsilon = kDefaultEpsilon;
};

template <typename T>
PerturbationBatch<T> generate_perturbation(const GeneratorNet<T>& gen, const Tensor<T>& pixels) {
  NoGradGuard ng;
  PerturbationBatch<T> out;
  out.epsilon = gen.epsilon;
  out.delta = gen.perturbation(nn::make_constants(gen.params), Var<T>::constant(pixels)).val();
  return out;
}

// x_adv = clamp(x + mask .* delta, 0, 1). Pass an undefined Var for no mask.
// x is the benign batch (treated as a constant box anchor even when it is a
// graph node); delta carries the gradient path.
template <typename T>
Var<T> apply_perturbation(const Var<T>& x, const Var<T>& delta, const Var<T>& mask) {
  check_same_shape(x.val(), delta.val(), "apply_perturbation");
  Var<T> d = mask.defined() ? mul(delta, mask) : delta;
  return clamp(add(x, d), 0.0, 1.0);
}

// Value-level convenience (no gradients, no mask).
template <typename T>
Tensor<T> apply_perturbation(const Tensor<T>& x, const Tensor<T>& delta) {
  NoGradGuard ng;
  return apply_perturbation(Var<T>::constant(x), Var<T>::constant(delta), Var<T>()).val();
}

// Mean Euclidean embedding distance, negated: minimizing drives adversarial
// embeddings away from the benign ones. The benign side is detached.
template <typename T>
Var<T> adversarial_loss(const Var<T>& emb_adv, const Var<T>& emb_clean) {
  Var<T> clean = emb_clean.detach();
  Var<T> diff = sub(emb_adv, clean);
  Var<T> dist = sqrt_guarded(row_sum(mul(diff, diff)));
  return neg(mean_all(dist));
}

// L_G = mean log(1 - D(x_adv) + pad); minimized by the generator.
template <typename T>
Var<T> generator_gan_loss(const Var<T>& prob_adv) {
  return mean_all(log_shifted(add_scalar(neg(prob_adv), 1.0), kLogPad));
}

// Negated discriminator objective: descending on this maximizes
// log D(x) + log(1 - D(x_adv)).
template <typename T>
Var<T> discriminator_loss(const Var<T>& prob_clean, const Var<T>& prob_adv) {
  Var<T> real_term = mean_all(log_shifted(prob_clean, kLogPad));
  Var<T> fake_term = mean_all(log_shifted(add_scalar(neg(prob_adv), 1.0), kLogPad));
  return neg(add(real_term, fake_term));
}

}  // namespace mtga::attacker
