#pragma once
// Run configuration: JSON file with strict schema (unknown keys rejected),
// defaults filled for everything absent, byte-stable round trip of the
// resolved form.

#include <string>
#include <vector>

#include <json.hpp>

#include "mtga/meta_engine.hpp"
#include "mtga/synthzoo.hpp"

namespace mtga::cli {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingArtifact : std::runtime_error {
  explicit MissingArtifact(const std::string& msg) : std::runtime_error(msg) {}
};

struct ModelRef {
  std::string variant;
  std::string train_domain;
  bool operator==(const ModelRef&) const = default;
};

struct RunFlags {
  bool pre_enabled = true;
  bool normix_enabled = true;
  bool cas_enabled = true;
  bool second_order = false;
  bool same_camera_exclusion = true;
  bool operator==(const RunFlags&) const = default;
};

// How the attacker is trained: "meta" is the full bilevel loop; "ensemble"
// is the joint multi-model multi-dataset loop; "baseline" is single-model,
// single-dataset training. "auto" resolves to meta when cas_enabled, else
// baseline.
enum class AttackMode { meta, ensemble, baseline };

struct ZooTrainConfig {
  std::int64_t epochs = 20;
  std::int64_t batch_size = 32;
  double lr = 2e-3;
  double aug_noise = 0.03;
  double aug_brightness = 0.10;
  bool operator==(const ZooTrainConfig&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "runs/out";
  meta_engine::MetaConfig meta;  // rng_seed and flags are overwritten from seed/flags on resolve
  RunFlags flags;
  AttackMode attack_mode = AttackMode::meta;
  bool attack_mode_explicit = false;
  std::vector<synthzoo::DomainSpec> domains;
  std::vector<std::string> data_zoo;
  std::vector<ModelRef> model_zoo;
  std::vector<ModelRef> targets;
  std::vector<std::string> settings;
  ZooTrainConfig zoo_train;
  std::int64_t checkpoint_every = 500;

  // meta config with seed and flags folded in
  meta_engine::MetaConfig resolved_meta() const;
  // baseline/ensemble/meta after "auto" resolution
  AttackMode resolved_mode() const;
};

RunConfig default_config();
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

// Parse errors carry 1-based line numbers; unknown keys are named.
RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& cfg);

}  // namespace mtga::cli
