#pragma once
// Small person re-id embedding models in three families sharing a
// conv-BN-ReLU trunk: global (pooled embedding), part (horizontal stripe
// pooling with per-stripe embeddings), attention (sigmoid spatial gates).
// Every batch-norm layer exposes its state in forward order for statistics
// capture and mixing.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mtga/nn.hpp"
#include "mtga/synthzoo.hpp"

namespace mtga::reid {

enum class ArchFamily { global, part, attention };

inline const char* family_name(ArchFamily f) {
  switch (f) {
    case ArchFamily::global: return "global";
    case ArchFamily::part: return "part";
    case ArchFamily::attention: return "attention";
  }
  return "?";
}

inline ArchFamily family_from_name(const std::string& s) {
  if (s == "global") return ArchFamily::global;
  if (s == "part") return ArchFamily::part;
  if (s == "attention") return ArchFamily::attention;
  throw std::invalid_argument("unknown arch family '" + s + "'");
}

struct VariantInfo {
  ArchFamily family;
  std::vector<std::int64_t> trunk_widths;
  std::int64_t stripes = 0;    // part family
  std::int64_t attn_maps = 0;  // attention family
};

// Zoo variants {g0, p0, a0}; held-out target variants {g1, p1, a1}.
inline VariantInfo variant_info(const std::string& variant_id) {
  static const std::map<std::string, VariantInfo> registry = {
      {"g0", {ArchFamily::global, {16, 32, 64}, 0, 0}},
      {"p0", {ArchFamily::part, {16, 32, 64}, 2, 0}},
      {"a0", {ArchFamily::attention, {16, 32, 64}, 0, 1}},
      {"g1", {ArchFamily::global, {16, 32, 64, 64}, 0, 0}},
      {"p1", {ArchFamily::part, {16, 32, 64}, 3, 0}},
      {"a1", {ArchFamily::attention, {16, 32, 64}, 0, 2}},
  };
  auto it = registry.find(variant_id);
  if (it == registry.end())
    throw std::invalid_argument("unknown model variant '" + variant_id + "'");
  return it->second;
}

inline std::vector<std::string> zoo_variants() { return {"g0", "p0", "a0"}; }
inline std::vector<std::string> heldout_variants() { return {"g1", "p1", "a1"}; }
inline std::vector<std::string> all_variants() { return {"g0", "p0", "a0", "g1", "p1", "a1"}; }

inline constexpr std::int64_t kEmbedDim = 32;

template <typename T>
class EmbedNet {
 public:
  ArchFamily family = ArchFamily::global;
  std::string variant_id;
  std::string train_domain;

  nn::ParamSet<T> params;
  std::vector<nn::BnBuffer<T>> bn_buffers;

  std::vector<nn::Conv2d<T>> trunk_convs;
  std::vector<nn::BatchNorm2d<T>> trunk_bns;
  nn::Linear<T> head;                                       // global & attention
  std::vector<nn::Linear<T>> stripe_heads;                  // part
  std::vector<std::pair<std::int64_t, std::int64_t>> stripe_rows;
  std::vector<nn::Conv2d<T>> attn_convs;                    // 1x1 gates

  std::int64_t trunk_out_channels = 0;

  static EmbedNet build(const std::string& variant_id, std::uint64_t seed) {
    const VariantInfo info = variant_info(variant_id);
    EmbedNet net;
    net.family = info.family;
    net.variant_id = variant_id;
    Rng rng(seed);
    std::int64_t in_c = 3;
    std::int64_t h = synthzoo::kImageH;
    for (std::size_t i = 0; i < info.trunk_widths.size(); ++i) {
      const std::int64_t out_c = info.trunk_widths[i];
      net.trunk_convs.push_back(nn::Conv2d<T>::create(net.params, "trunk" + std::to_string(i),
                                                      in_c, out_c, 3, 2, 1, rng));
      net.trunk_bns.push_back(nn::BatchNorm2d<T>::create(net.params, net.bn_buffers,
                                                         "bn" + std::to_string(i), out_c));
      in_c = out_c;
      h /= 2;
    }
    net.trunk_out_channels = in_c;
    switch (info.family) {
      case ArchFamily::global:
        net.head = nn::Linear<T>::create(net.params, "head", in_c, kEmbedDim, rng);
        break;
      case ArchFamily::part: {
        const std::int64_t s = info.stripes;
        const std::int64_t base_rows = h / s, extra = h % s;
        std::int64_t r = 0;
        for (std::int64_t i = 0; i < s; ++i) {
          const std::int64_t rows = base_rows + (i < extra ? 1 : 0);
          net.stripe_rows.emplace_back(r, r + rows);
          r += rows;
          const std::int64_t dim = kEmbedDim / s + (i < kEmbedDim % s ? 1 : 0);
          net.stripe_heads.push_back(
              nn::Linear<T>::create(net.params, "stripe" + std::to_string(i), in_c, dim, rng));
        }
        break;
      }
      case ArchFamily::attention: {
        for (std::int64_t m = 0; m < info.attn_maps; ++m)
          net.attn_convs.push_back(
              nn::Conv2d<T>::create(net.params, "attn" + std::to_string(m), in_c, 1, 1, 1, 0, rng));
        net.head =
            nn::Linear<T>::create(net.params, "head", in_c * info.attn_maps, kEmbedDim, rng);
        break;
      }
    }
    return net;
  }

  std::size_t bn_layer_count() const { return bn_buffers.size(); }

  // Trunk + family head. The BnContext picks running / batch / mixed
  // normalization; batch mode can capture per-layer statistics and update
  // the running buffers.
  Var<T> embed(const std::vector<Var<T>>& P, const Var<T>& x, const nn::BnContext<T>& ctx) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != synthzoo::kImageH || s[3] != synthzoo::kImageW)
      throw std::invalid_argument("embed expects [B,3," + std::to_string(synthzoo::kImageH) + "," +
                                  std::to_string(synthzoo::kImageW) + "], got " + shape_str(s));
    if (ctx.mode == nn::BnMode::mixed) {
      if (ctx.mixed == nullptr || ctx.mixed->size() != bn_buffers.size())
        throw std::invalid_argument("mixed bn state has wrong layer count");
      for (std::size_t i = 0; i < bn_buffers.size(); ++i)
        if (!(*ctx.mixed)[i].mean.same_shape(bn_buffers[i].running_mean))
          throw std::invalid_argument("mixed bn state has wrong channel count at layer " +
                                      std::to_string(i));
    }
    Var<T> h = x;
    for (std::size_t i = 0; i < trunk_convs.size(); ++i)
      h = relu(trunk_bns[i](P, trunk_convs[i](P, h), ctx, bn_buffers));
    switch (family) {
      case ArchFamily::global:
        return head(P, nn::global_avg_pool(h));
      case ArchFamily::part: {
        std::vector<Var<T>> parts;
        for (std::size_t i = 0; i < stripe_heads.size(); ++i)
          parts.push_back(
              stripe_heads[i](P, nn::stripe_avg_pool(h, stripe_rows[i].first, stripe_rows[i].second)));
        return concat_cols(parts);
      }
      case ArchFamily::attention: {
        std::vector<Var<T>> pooled;
        for (const auto& ac : attn_convs) {
          Var<T> gate = sigmoid(ac(P, h));  // [B,1,h,w]
          pooled.push_back(nn::global_avg_pool(
              mul(h, broadcast_channels_like(gate, trunk_out_channels))));
        }
        return head(P, pooled.size() == 1 ? pooled[0] : concat_cols(pooled));
      }
    }
    throw std::logic_error("unreachable family");
  }
};

// Value-level running-stats embedding (no gradients).
template <typename T>
Tensor<T> forward_embed_running(const EmbedNet<T>& net, const Tensor<T>& pixels) {
  NoGradGuard ng;
  nn::BnContext<T> ctx;
  ctx.mode = nn::BnMode::running;
  return net.embed(nn::make_constants(net.params), Var<T>::constant(pixels), ctx).val();
}

// Training-style forward that records each BN layer's batch statistics in
// forward order. Requires batch size >= 2.
template <typename T>
std::vector<nn::BnStats<T>> capture_bn_stats(const EmbedNet<T>& net, const Tensor<T>& pixels) {
  if (pixels.dim(0) < 2)
    throw std::invalid_argument("capture_bn_stats requires a batch of at least 2 images");
  NoGradGuard ng;
  std::vector<nn::BnStats<T>> stats(net.bn_layer_count());
  nn::BnContext<T> ctx;
  ctx.mode = nn::BnMode::batch;
  ctx.capture = &stats;
  net.embed(nn::make_constants(net.params), Var<T>::constant(pixels), ctx);
  return stats;
}

struct TrainConfig {
  std::int64_t epochs = 20;
  std::int64_t batch_size = 32;
  double lr = 2e-3;
  double bn_momentum = 0.1;
  // pixel-noise and brightness jitter applied to training batches; keeps the
  // models from being trivially sensitive to universal high-frequency textures
  double aug_noise = 0.03;
  double aug_brightness = 0.10;
};

// Identity-classification training: embedding plus an auxiliary linear
// classifier head trained with cross-entropy; the head is discarded. BN
// running statistics are updated each step. Deterministic given seed.
template <typename T>
void train_reid_model(EmbedNet<T>& net, const synthzoo::DomainData& data, const TrainConfig& cfg,
                      std::uint64_t seed) {
  const synthzoo::ImageBatch& train = data.train.data;
  if (train.size() == 0) throw std::invalid_argument("train_reid_model: empty train split");
  net.train_domain = data.domain_id;
  if (cfg.epochs == 0) return;

  // Dense label mapping in sorted identity order.
  std::vector<std::int64_t> unique_ids = train.ids;
  std::sort(unique_ids.begin(), unique_ids.end());
  unique_ids.erase(std::unique(unique_ids.begin(), unique_ids.end()), unique_ids.end());
  std::map<std::int64_t, std::int64_t> to_class;
  for (std::size_t i = 0; i < unique_ids.size(); ++i)
    to_class[unique_ids[i]] = static_cast<std::int64_t>(i);
  const std::int64_t n_classes = static_cast<std::int64_t>(unique_ids.size());

  Rng rng(seed);
  nn::ParamSet<T> clf_params;
  nn::Linear<T> clf = nn::Linear<T>::create(clf_params, "clf", kEmbedDim, n_classes, rng);

  nn::Adam<T> opt_net, opt_clf;
  opt_net.init_like(net.params);
  opt_clf.init_like(clf_params);

  const std::int64_t n = train.size();
  const std::int64_t img_elems = 3 * synthzoo::kImageH * synthzoo::kImageW;
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::int64_t start = 0; start + 1 < n; start += cfg.batch_size) {
      const std::int64_t bs = std::min(cfg.batch_size, n - start);
      if (bs < 2) break;  // batch statistics need >= 2 samples
      Tensor<T> pixels(Shape{bs, 3, synthzoo::kImageH, synthzoo::kImageW});
      std::vector<std::int64_t> labels(static_cast<std::size_t>(bs));
      for (std::int64_t i = 0; i < bs; ++i) {
        const std::int64_t src = order[static_cast<std::size_t>(start + i)];
        const float* sp = train.pixels.data() + src * img_elems;
        T* dp = pixels.data() + i * img_elems;
        const double bright =
            cfg.aug_brightness > 0 ? rng.uniform(1.0 - cfg.aug_brightness, 1.0 + cfg.aug_brightness)
                                   : 1.0;
        for (std::int64_t j = 0; j < img_elems; ++j) {
          double v = static_cast<double>(sp[j]) * bright;
          if (cfg.aug_noise > 0) v += rng.normal(0.0, cfg.aug_noise);
          dp[j] = static_cast<T>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
        }
        labels[static_cast<std::size_t>(i)] = to_class.at(train.ids[static_cast<std::size_t>(src)]);
      }
      auto P = nn::make_leaves(net.params);
      auto C = nn::make_leaves(clf_params);
      nn::BnContext<T> ctx;
      ctx.mode = nn::BnMode::batch;
      ctx.update_running = &net.bn_buffers;
      ctx.momentum = cfg.bn_momentum;
      Var<T> emb = net.embed(P, Var<T>::constant(pixels), ctx);
      Var<T> logits = clf(C, emb);
      Var<T> loss = nn::cross_entropy_logits(logits, labels);
      if (!std::isfinite(static_cast<double>(loss.item())))
        throw std::runtime_error("train_reid_model: non-finite loss on variant " + net.variant_id +
                                 " epoch " + std::to_string(epoch));
      auto grads = backward(loss);
      std::vector<Tensor<T>> gnet, gclf;
      for (const auto& v : P) gnet.push_back(grads.grad_or_zero(v));
      for (const auto& v : C) gclf.push_back(grads.grad_or_zero(v));
      opt_net.step(net.params, gnet, cfg.lr);
      opt_clf.step(clf_params, gclf, cfg.lr);
    }
  }
}

}  // namespace mtga::reid
