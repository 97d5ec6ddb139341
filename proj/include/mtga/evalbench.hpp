#pragma once
// Retrieval evaluation: gallery ranking on L2-normalized embeddings,
// average precision / mAP under a cross-camera protocol, aAP and drop-rate
// aggregation over victim models, the six black-box attack settings, and
// SSIM image-quality scoring of adversarial queries.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mtga/attacker.hpp"
#include "mtga/reid_models.hpp"
#include "mtga/synthzoo.hpp"

namespace mtga::evalbench {

// Ascending Euclidean distance after L2 normalization; ties broken by
// ascending gallery index. Throws on zero-norm embeddings.
std::vector<std::int64_t> rank_gallery(const std::vector<double>& query_embedding,
                                       const std::vector<std::vector<double>>& gallery_embeddings);

// AP = (1/R) * sum over relevant ranks k of (relevant in top-k) / k.
// Requires at least one relevant flag.
double average_precision(const std::vector<int>& relevance_in_rank_order);

struct MapProtocol {
  bool same_camera_exclusion = true;
};

// Embedding-level mAP: queries with zero relevant gallery items (after the
// protocol filter) are excluded; throws if every query is excluded.
double mean_ap_from_embeddings(const Tensor<float>& query_emb,
                               const std::vector<std::int64_t>& query_ids,
                               const std::vector<std::int64_t>& query_cams,
                               const Tensor<float>& gallery_emb,
                               const std::vector<std::int64_t>& gallery_ids,
                               const std::vector<std::int64_t>& gallery_cams,
                               const MapProtocol& protocol);

// Embeds both sets with running statistics, then scores.
double mean_ap(const reid::EmbedNet<float>& model, const synthzoo::ImageBatch& query_set,
               const synthzoo::ImageBatch& gallery_set, const MapProtocol& protocol);

// Arithmetic mean of per-model mAPs.
double aggregate(const std::vector<double>& maps);

// 100 * (clean - adv) / clean; requires clean > 0.
double drop_rate(double aap_clean, double aap_adv);

// Single-scale SSIM, 11x11 Gaussian window sigma 1.5, C1=0.01^2, C2=0.03^2,
// computed per channel on [0,1] images and averaged.
double ssim(const Tensor<float>& x, const Tensor<float>& y);

// ------------------------------------------------------------- settings

struct TargetRef {
  std::string variant;
  std::string train_domain;
};

struct AttackSetting {
  std::string name;
  std::string query_domain;
  std::vector<TargetRef> targets;
};

// The six black-box settings. D1 stands for the zoo training domain, D4 for
// the held-out target training domain, D5 for the unseen query domain. Zoo
// architectures are {g0,p0,a0}; held-out architectures are {g1,p1,a1}.
std::vector<AttackSetting> default_settings();
AttackSetting setting_by_name(const std::string& name);

struct TargetReport {
  TargetRef target;
  double map_clean = 0.0;
  double map_adv = 0.0;
};

struct SettingReport {
  std::string name;
  std::string query_domain;
  std::vector<TargetReport> targets;
  double aap_clean = 0.0;
  double aap_adv = 0.0;
  double mdr = 0.0;        // percent
  double mean_ssim = 0.0;  // adversarial vs benign queries
};

using ModelKey = std::pair<std::string, std::string>;  // (variant, train_domain)

struct EvalAssets {
  const std::map<ModelKey, reid::EmbedNet<float>>* models = nullptr;
  const std::map<std::string, synthzoo::DomainData>* domains = nullptr;
};

// Adversarial queries via x + G(x) clamped to the pixel box (no erasing, no
// statistics mixing at evaluation time).
Tensor<float> attack_queries(const attacker::GeneratorNet<float>& gen,
                             const Tensor<float>& query_pixels);

SettingReport run_setting(const AttackSetting& setting, const attacker::GeneratorNet<float>& gen,
                          const EvalAssets& assets, const MapProtocol& protocol);

// Mean SSIM between matched rows of two [B,3,H,W] batches.
double mean_ssim_batch(const Tensor<float>& a, const Tensor<float>& b);

// Bar chart of clean vs adversarial mAP per target, written as a PNG.
void write_setting_plot(const SettingReport& report, const std::string& path);

}  // namespace mtga::evalbench
