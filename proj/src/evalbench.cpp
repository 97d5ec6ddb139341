#include "mtga/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mtga/image_io.hpp"
#include "mtga/threads.hpp"

namespace mtga::evalbench {

namespace {

std::vector<double> l2_normalize(const float* v, std::int64_t n) {
  double norm2 = 0.0;
  for (std::int64_t i = 0; i < n; ++i) norm2 += static_cast<double>(v[i]) * v[i];
  if (norm2 <= 0.0) throw std::invalid_argument("rank_gallery: zero-norm embedding");
  const double inv = 1.0 / std::sqrt(norm2);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = v[i] * inv;
  return out;
}

std::vector<double> l2_normalize(const std::vector<double>& v) {
  double norm2 = 0.0;
  for (double x : v) norm2 += x * x;
  if (norm2 <= 0.0) throw std::invalid_argument("rank_gallery: zero-norm embedding");
  const double inv = 1.0 / std::sqrt(norm2);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * inv;
  return out;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

std::vector<std::int64_t> rank_gallery(const std::vector<double>& query_embedding,
                                       const std::vector<std::vector<double>>& gallery_embeddings) {
  const std::vector<double> q = l2_normalize(query_embedding);
  std::vector<std::pair<double, std::int64_t>> scored;
  scored.reserve(gallery_embeddings.size());
  for (std::size_t i = 0; i < gallery_embeddings.size(); ++i) {
    if (gallery_embeddings[i].size() != q.size())
      throw std::invalid_argument("rank_gallery: embedding dimension mismatch");
    scored.emplace_back(sq_dist(q, l2_normalize(gallery_embeddings[i])),
                        static_cast<std::int64_t>(i));
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::int64_t> out;
  out.reserve(scored.size());
  for (const auto& [d, i] : scored) out.push_back(i);
  return out;
}

double average_precision(const std::vector<int>& relevance_in_rank_order) {
  std::int64_t total_relevant = 0;
  for (int r : relevance_in_rank_order) total_relevant += (r != 0);
  if (total_relevant == 0)
    throw std::invalid_argument("average_precision: no relevant items (caller must exclude)");
  double ap = 0.0;
  std::int64_t seen = 0;
  for (std::size_t k = 0; k < relevance_in_rank_order.size(); ++k) {
    if (relevance_in_rank_order[k] != 0) {
      ++seen;
      ap += static_cast<double>(seen) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(total_relevant);
}

double mean_ap_from_embeddings(const Tensor<float>& query_emb,
                               const std::vector<std::int64_t>& query_ids,
                               const std::vector<std::int64_t>& query_cams,
                               const Tensor<float>& gallery_emb,
                               const std::vector<std::int64_t>& gallery_ids,
                               const std::vector<std::int64_t>& gallery_cams,
                               const MapProtocol& protocol) {
  if (query_emb.ndim() != 2 || gallery_emb.ndim() != 2)
    throw std::invalid_argument("mean_ap: embeddings must be 2-d");
  const std::int64_t nq = query_emb.dim(0), ng = gallery_emb.dim(0), dim = query_emb.dim(1);
  if (nq == 0 || ng == 0) throw std::invalid_argument("mean_ap: empty query or gallery set");
  if (gallery_emb.dim(1) != dim) throw std::invalid_argument("mean_ap: dimension mismatch");

  std::vector<std::vector<double>> gnorm(static_cast<std::size_t>(ng));
  for (std::int64_t i = 0; i < ng; ++i)
    gnorm[static_cast<std::size_t>(i)] = l2_normalize(gallery_emb.data() + i * dim, dim);

  std::vector<double> aps(static_cast<std::size_t>(nq), -1.0);
  parallel_for_index(nq, [&](std::int64_t qi) {
    const std::vector<double> q = l2_normalize(query_emb.data() + qi * dim, dim);
    std::vector<std::pair<double, std::int64_t>> scored;
    scored.reserve(static_cast<std::size_t>(ng));
    for (std::int64_t i = 0; i < ng; ++i) {
      if (protocol.same_camera_exclusion &&
          gallery_ids[static_cast<std::size_t>(i)] == query_ids[static_cast<std::size_t>(qi)] &&
          gallery_cams[static_cast<std::size_t>(i)] == query_cams[static_cast<std::size_t>(qi)])
        continue;
      scored.emplace_back(sq_dist(q, gnorm[static_cast<std::size_t>(i)]), i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<int> rel;
    rel.reserve(scored.size());
    std::int64_t total_rel = 0;
    for (const auto& [d, gi] : scored) {
      const int r =
          gallery_ids[static_cast<std::size_t>(gi)] == query_ids[static_cast<std::size_t>(qi)];
      total_rel += r;
      rel.push_back(r);
    }
    if (total_rel > 0) aps[static_cast<std::size_t>(qi)] = average_precision(rel);
  });

  double sum = 0.0;
  std::int64_t counted = 0;
  for (double ap : aps)
    if (ap >= 0.0) {
      sum += ap;
      ++counted;
    }
  if (counted == 0) throw std::runtime_error("mean_ap: every query was excluded (no relevant items)");
  return sum / static_cast<double>(counted);
}

namespace {

Tensor<float> embed_in_chunks(const reid::EmbedNet<float>& model, const Tensor<float>& pixels) {
  const std::int64_t n = pixels.dim(0);
  const std::int64_t img = pixels.numel() / std::max<std::int64_t>(n, 1);
  const std::int64_t chunk = 64;
  Tensor<float> out(Shape{n, reid::kEmbedDim});
  for (std::int64_t start = 0; start < n; start += chunk) {
    const std::int64_t bs = std::min(chunk, n - start);
    Tensor<float> part(Shape{bs, pixels.dim(1), pixels.dim(2), pixels.dim(3)});
    std::copy_n(pixels.data() + start * img, bs * img, part.data());
    Tensor<float> emb = reid::forward_embed_running(model, part);
    std::copy_n(emb.data(), bs * reid::kEmbedDim, out.data() + start * reid::kEmbedDim);
  }
  return out;
}

}  // namespace

double mean_ap(const reid::EmbedNet<float>& model, const synthzoo::ImageBatch& query_set,
               const synthzoo::ImageBatch& gallery_set, const MapProtocol& protocol) {
  Tensor<float> qe = embed_in_chunks(model, query_set.pixels);
  Tensor<float> ge = embed_in_chunks(model, gallery_set.pixels);
  return mean_ap_from_embeddings(qe, query_set.ids, query_set.cams, ge, gallery_set.ids,
                                 gallery_set.cams, protocol);
}

double aggregate(const std::vector<double>& maps) {
  if (maps.empty()) throw std::invalid_argument("aggregate: empty list");
  double sum = 0.0;
  for (double m : maps) sum += m;
  return sum / static_cast<double>(maps.size());
}

double drop_rate(double aap_clean, double aap_adv) {
  if (!(aap_clean > 0.0)) throw std::invalid_argument("drop_rate: clean aAP must be positive");
  return 100.0 * (aap_clean - aap_adv) / aap_clean;
}

// ---------------------------------------------------------------------- ssim

namespace {

std::vector<double> gaussian_window_11() {
  std::vector<double> w(121);
  const double sigma = 1.5;
  double sum = 0.0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      const double dy = y - 5, dx = x - 5;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>(y * 11 + x)] = v;
      sum += v;
    }
  for (auto& v : w) v /= sum;
  return w;
}

}  // namespace

double ssim(const Tensor<float>& x, const Tensor<float>& y) {
  if (!x.same_shape(y)) throw std::invalid_argument("ssim: shape mismatch");
  if (x.ndim() != 3 || x.dim(0) != 3) throw std::invalid_argument("ssim expects [3,H,W]");
  const std::int64_t h = x.dim(1), w = x.dim(2);
  if (h < 11 || w < 11) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  static const std::vector<double> win = gaussian_window_11();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  double total = 0.0;
  for (std::int64_t c = 0; c < 3; ++c) {
    const float* xa = x.data() + c * h * w;
    const float* ya = y.data() + c * h * w;
    double acc = 0.0;
    std::int64_t count = 0;
    for (std::int64_t oy = 0; oy + 11 <= h; ++oy)
      for (std::int64_t ox = 0; ox + 11 <= w; ++ox) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int ky = 0; ky < 11; ++ky)
          for (int kx = 0; kx < 11; ++kx) {
            const double wv = win[static_cast<std::size_t>(ky * 11 + kx)];
            const double xv = xa[(oy + ky) * w + ox + kx];
            const double yv = ya[(oy + ky) * w + ox + kx];
            mx += wv * xv;
            my += wv * yv;
            mxx += wv * xv * xv;
            myy += wv * yv * yv;
            mxy += wv * xv * yv;
          }
        const double vx = mxx - mx * mx;
        const double vy = myy - my * my;
        const double cov = mxy - mx * my;
        const double num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
        acc += num / den;
        ++count;
      }
    total += acc / static_cast<double>(count);
  }
  return total / 3.0;
}

double mean_ssim_batch(const Tensor<float>& a, const Tensor<float>& b) {
  check_same_shape(a, b, "mean_ssim_batch");
  const std::int64_t n = a.dim(0);
  const std::int64_t img = a.numel() / std::max<std::int64_t>(n, 1);
  std::vector<double> scores(static_cast<std::size_t>(n));
  parallel_for_index(n, [&](std::int64_t i) {
    Tensor<float> xa(Shape{a.dim(1), a.dim(2), a.dim(3)});
    Tensor<float> xb(Shape{a.dim(1), a.dim(2), a.dim(3)});
    std::copy_n(a.data() + i * img, img, xa.data());
    std::copy_n(b.data() + i * img, img, xb.data());
    scores[static_cast<std::size_t>(i)] = ssim(xa, xb);
  });
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(n);
}

// ------------------------------------------------------------------ settings

std::vector<AttackSetting> default_settings() {
  auto zoo_on = [](const std::string& dom) {
    std::vector<TargetRef> t;
    for (const auto& v : reid::zoo_variants()) t.push_back({v, dom});
    return t;
  };
  auto heldout_on = [](const std::string& dom) {
    std::vector<TargetRef> t;
    for (const auto& v : reid::heldout_variants()) t.push_back({v, dom});
    return t;
  };
  return {
      {"cross-dataset", "D4", zoo_on("D4")},
      {"cross-dataset&test", "D5", zoo_on("D4")},
      {"cross-model", "D1", heldout_on("D1")},
      {"cross-model&test", "D1", heldout_on("D4")},
      {"cross-model&dataset", "D4", heldout_on("D4")},
      {"cross-model&dataset&test", "D5", heldout_on("D4")},
  };
}

AttackSetting setting_by_name(const std::string& name) {
  for (auto& s : default_settings())
    if (s.name == name) return s;
  throw std::invalid_argument("unknown attack setting '" + name + "'");
}

Tensor<float> attack_queries(const attacker::GeneratorNet<float>& gen,
                             const Tensor<float>& query_pixels) {
  NoGradGuard ng;
  const std::int64_t n = query_pixels.dim(0);
  const std::int64_t img = query_pixels.numel() / std::max<std::int64_t>(n, 1);
  const std::int64_t chunk = 64;
  Tensor<float> out(query_pixels.shape());
  auto P = nn::make_constants(gen.params);
  for (std::int64_t start = 0; start < n; start += chunk) {
    const std::int64_t bs = std::min(chunk, n - start);
    Tensor<float> part(Shape{bs, query_pixels.dim(1), query_pixels.dim(2), query_pixels.dim(3)});
    std::copy_n(query_pixels.data() + start * img, bs * img, part.data());
    Var<float> x = Var<float>::constant(part);
    Var<float> adv = attacker::apply_perturbation(x, gen.perturbation(P, x), Var<float>());
    std::copy_n(adv.val().data(), bs * img, out.data() + start * img);
  }
  return out;
}

SettingReport run_setting(const AttackSetting& setting, const attacker::GeneratorNet<float>& gen,
                          const EvalAssets& assets, const MapProtocol& protocol) {
  if (assets.models == nullptr || assets.domains == nullptr)
    throw std::invalid_argument("run_setting: assets not provided");
  auto dit = assets.domains->find(setting.query_domain);
  if (dit == assets.domains->end())
    throw std::runtime_error("run_setting: missing domain '" + setting.query_domain + "'");
  const synthzoo::DomainData& dd = dit->second;

  SettingReport rep;
  rep.name = setting.name;
  rep.query_domain = setting.query_domain;

  synthzoo::ImageBatch adv_queries = dd.query.data;
  adv_queries.pixels = attack_queries(gen, dd.query.data.pixels);
  rep.mean_ssim = mean_ssim_batch(adv_queries.pixels, dd.query.data.pixels);

  std::vector<double> clean, adv;
  for (const auto& target : setting.targets) {
    auto mit = assets.models->find(ModelKey{target.variant, target.train_domain});
    if (mit == assets.models->end())
      throw std::runtime_error("run_setting: missing trained model '" + target.variant + "@" +
                               target.train_domain + "'");
    TargetReport tr;
    tr.target = target;
    tr.map_clean = mean_ap(mit->second, dd.query.data, dd.gallery.data, protocol);
    tr.map_adv = mean_ap(mit->second, adv_queries, dd.gallery.data, protocol);
    clean.push_back(tr.map_clean);
    adv.push_back(tr.map_adv);
    rep.targets.push_back(tr);
  }
  rep.aap_clean = aggregate(clean);
  rep.aap_adv = aggregate(adv);
  rep.mdr = drop_rate(rep.aap_clean, rep.aap_adv);
  return rep;
}

void write_setting_plot(const SettingReport& report, const std::string& path) {
  const std::int64_t n = static_cast<std::int64_t>(report.targets.size());
  const std::int64_t bar_w = 14, group_gap = 12, margin = 8, plot_h = 100;
  const std::int64_t w = margin * 2 + n * (2 * bar_w + group_gap);
  const std::int64_t h = plot_h + 2 * margin;
  Tensor<float> canvas(Shape{3, h, w}, 1.0f);
  auto fill = [&](std::int64_t x0, std::int64_t x1, std::int64_t y0, std::int64_t y1, float r,
                  float g, float b) {
    for (std::int64_t y = y0; y < y1; ++y)
      for (std::int64_t x = x0; x < x1; ++x) {
        canvas[(0 * h + y) * w + x] = r;
        canvas[(1 * h + y) * w + x] = g;
        canvas[(2 * h + y) * w + x] = b;
      }
  };
  // baseline axis
  fill(margin / 2, w - margin / 2, h - margin, h - margin + 1, 0.2f, 0.2f, 0.2f);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t x0 = margin + i * (2 * bar_w + group_gap);
    const auto clean_h = static_cast<std::int64_t>(plot_h * report.targets[static_cast<std::size_t>(i)].map_clean);
    const auto adv_h = static_cast<std::int64_t>(plot_h * report.targets[static_cast<std::size_t>(i)].map_adv);
    fill(x0, x0 + bar_w, h - margin - clean_h, h - margin, 0.20f, 0.45f, 0.80f);
    fill(x0 + bar_w + 2, x0 + 2 * bar_w + 2, h - margin - adv_h, h - margin, 0.85f, 0.35f, 0.25f);
  }
  write_png(path, to_rgb8(canvas));
}

}  // namespace mtga::evalbench
