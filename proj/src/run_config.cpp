#include "mtga/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mtga/evalbench.hpp"

namespace mtga::cli {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (allowed.count(key) == 0)
      throw ConfigError("unknown key '" + key + "' in " + context);
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

synthzoo::DomainSpec domain_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"domain_id", "hue_shift", "brightness", "contrast", "noise_sigma",
              "background_palette", "n_identities", "images_per_identity", "n_cameras",
              "rng_seed"},
             "domains[]");
  if (!j.contains("domain_id")) throw ConfigError("domains[]: missing 'domain_id'");
  synthzoo::DomainSpec spec;
  const std::string id = j.at("domain_id").get<std::string>();
  // stock presets seed the defaults when the id is one of D1..D5
  bool stock = false;
  for (const auto& s : synthzoo::stock_domain_ids()) stock = stock || s == id;
  if (stock) spec = synthzoo::stock_domain(id);
  spec.domain_id = id;
  spec.style.hue_shift = get_or(j, "hue_shift", spec.style.hue_shift);
  spec.style.brightness = get_or(j, "brightness", spec.style.brightness);
  spec.style.contrast = get_or(j, "contrast", spec.style.contrast);
  spec.style.noise_sigma = get_or(j, "noise_sigma", spec.style.noise_sigma);
  if (j.contains("background_palette")) {
    spec.style.background_palette.clear();
    for (const auto& c : j.at("background_palette")) {
      if (!c.is_array() || c.size() != 3)
        throw ConfigError("domains[]: background_palette entries must be [r,g,b]");
      spec.style.background_palette.push_back({c[0].get<double>(), c[1].get<double>(),
                                               c[2].get<double>()});
    }
  }
  spec.n_identities = get_or<std::int64_t>(j, "n_identities", spec.n_identities);
  spec.images_per_identity = get_or<std::int64_t>(j, "images_per_identity", spec.images_per_identity);
  spec.n_cameras = get_or<std::int64_t>(j, "n_cameras", spec.n_cameras);
  spec.rng_seed = get_or<std::uint64_t>(j, "rng_seed", spec.rng_seed);
  try {
    synthzoo::validate(spec);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("domains[]: ") + e.what());
  }
  return spec;
}

nlohmann::json domain_to_json(const synthzoo::DomainSpec& spec) {
  nlohmann::json j;
  j["domain_id"] = spec.domain_id;
  j["hue_shift"] = spec.style.hue_shift;
  j["brightness"] = spec.style.brightness;
  j["contrast"] = spec.style.contrast;
  j["noise_sigma"] = spec.style.noise_sigma;
  nlohmann::json palette = nlohmann::json::array();
  for (const auto& c : spec.style.background_palette) palette.push_back({c[0], c[1], c[2]});
  j["background_palette"] = palette;
  j["n_identities"] = spec.n_identities;
  j["images_per_identity"] = spec.images_per_identity;
  j["n_cameras"] = spec.n_cameras;
  j["rng_seed"] = spec.rng_seed;
  return j;
}

ModelRef model_ref_from_json(const nlohmann::json& j, const char* context) {
  check_keys(j, {"variant", "train_domain"}, context);
  if (!j.contains("variant") || !j.contains("train_domain"))
    throw ConfigError(std::string(context) + ": entries need 'variant' and 'train_domain'");
  ModelRef ref{j.at("variant").get<std::string>(), j.at("train_domain").get<std::string>()};
  reid::variant_info(ref.variant);  // validates the id
  return ref;
}

AttackMode mode_from_string(const std::string& s) {
  if (s == "meta") return AttackMode::meta;
  if (s == "ensemble") return AttackMode::ensemble;
  if (s == "baseline") return AttackMode::baseline;
  throw ConfigError("attack_mode must be one of meta|ensemble|baseline, got '" + s + "'");
}

const char* mode_to_string(AttackMode m) {
  switch (m) {
    case AttackMode::meta: return "meta";
    case AttackMode::ensemble: return "ensemble";
    case AttackMode::baseline: return "baseline";
  }
  return "?";
}

}  // namespace

meta_engine::MetaConfig RunConfig::resolved_meta() const {
  meta_engine::MetaConfig m = meta;
  m.rng_seed = seed;
  m.pre_enabled = flags.pre_enabled;
  m.normix_enabled = flags.normix_enabled;
  m.cas_enabled = flags.cas_enabled;
  m.second_order = flags.second_order;
  return m;
}

AttackMode RunConfig::resolved_mode() const {
  if (attack_mode_explicit) return attack_mode;
  return flags.cas_enabled ? AttackMode::meta : AttackMode::baseline;
}

RunConfig default_config() {
  RunConfig cfg;
  for (const auto& id : synthzoo::stock_domain_ids()) cfg.domains.push_back(synthzoo::stock_domain(id));
  cfg.data_zoo = {"D1", "D2", "D3"};
  for (const auto& v : reid::zoo_variants()) cfg.model_zoo.push_back({v, "D1"});
  for (const auto& v : reid::zoo_variants()) cfg.targets.push_back({v, "D4"});
  for (const auto& v : reid::heldout_variants()) cfg.targets.push_back({v, "D1"});
  for (const auto& v : reid::heldout_variants()) cfg.targets.push_back({v, "D4"});
  for (const auto& s : evalbench::default_settings()) cfg.settings.push_back(s.name);
  return cfg;
}

RunConfig config_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"seed", "output_dir", "meta", "flags", "attack_mode", "domains", "data_zoo",
              "model_zoo", "targets", "settings", "zoo_train", "checkpoint_every"},
             "config");
  RunConfig cfg = default_config();
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir);
  cfg.checkpoint_every = get_or<std::int64_t>(j, "checkpoint_every", cfg.checkpoint_every);

  if (j.contains("meta")) {
    const auto& m = j.at("meta");
    check_keys(m,
               {"iterations", "tasks_per_iter", "batch_size", "inner_lr", "outer_lr", "epsilon",
                "pre_p", "pre_m", "beta_a", "beta_b"},
               "meta");
    cfg.meta.iterations = get_or<std::int64_t>(m, "iterations", cfg.meta.iterations);
    cfg.meta.tasks_per_iter = get_or<std::int64_t>(m, "tasks_per_iter", cfg.meta.tasks_per_iter);
    cfg.meta.batch_size = get_or<std::int64_t>(m, "batch_size", cfg.meta.batch_size);
    cfg.meta.inner_lr = get_or<double>(m, "inner_lr", cfg.meta.inner_lr);
    cfg.meta.outer_lr = get_or<double>(m, "outer_lr", cfg.meta.outer_lr);
    cfg.meta.epsilon = get_or<double>(m, "epsilon", cfg.meta.epsilon);
    cfg.meta.pre_p = get_or<double>(m, "pre_p", cfg.meta.pre_p);
    cfg.meta.pre_m = get_or<double>(m, "pre_m", cfg.meta.pre_m);
    cfg.meta.beta_a = get_or<double>(m, "beta_a", cfg.meta.beta_a);
    cfg.meta.beta_b = get_or<double>(m, "beta_b", cfg.meta.beta_b);
  }
  if (j.contains("flags")) {
    const auto& f = j.at("flags");
    check_keys(f,
               {"pre_enabled", "normix_enabled", "cas_enabled", "second_order",
                "same_camera_exclusion"},
               "flags");
    cfg.flags.pre_enabled = get_or<bool>(f, "pre_enabled", cfg.flags.pre_enabled);
    cfg.flags.normix_enabled = get_or<bool>(f, "normix_enabled", cfg.flags.normix_enabled);
    cfg.flags.cas_enabled = get_or<bool>(f, "cas_enabled", cfg.flags.cas_enabled);
    cfg.flags.second_order = get_or<bool>(f, "second_order", cfg.flags.second_order);
    cfg.flags.same_camera_exclusion =
        get_or<bool>(f, "same_camera_exclusion", cfg.flags.same_camera_exclusion);
  }
  if (j.contains("attack_mode")) {
    cfg.attack_mode = mode_from_string(j.at("attack_mode").get<std::string>());
    cfg.attack_mode_explicit = true;
  }
  if (j.contains("domains")) {
    cfg.domains.clear();
    for (const auto& d : j.at("domains")) cfg.domains.push_back(domain_from_json(d));
  }
  if (j.contains("data_zoo")) cfg.data_zoo = j.at("data_zoo").get<std::vector<std::string>>();
  if (j.contains("model_zoo")) {
    cfg.model_zoo.clear();
    for (const auto& m : j.at("model_zoo")) cfg.model_zoo.push_back(model_ref_from_json(m, "model_zoo"));
  }
  if (j.contains("targets")) {
    cfg.targets.clear();
    for (const auto& m : j.at("targets")) cfg.targets.push_back(model_ref_from_json(m, "targets"));
  }
  if (j.contains("settings")) {
    cfg.settings = j.at("settings").get<std::vector<std::string>>();
    for (const auto& s : cfg.settings) evalbench::setting_by_name(s);
  }
  if (j.contains("zoo_train")) {
    const auto& z = j.at("zoo_train");
    check_keys(z, {"epochs", "batch_size", "lr", "aug_noise", "aug_brightness"}, "zoo_train");
    cfg.zoo_train.epochs = get_or<std::int64_t>(z, "epochs", cfg.zoo_train.epochs);
    cfg.zoo_train.batch_size = get_or<std::int64_t>(z, "batch_size", cfg.zoo_train.batch_size);
    cfg.zoo_train.lr = get_or<double>(z, "lr", cfg.zoo_train.lr);
    cfg.zoo_train.aug_noise = get_or<double>(z, "aug_noise", cfg.zoo_train.aug_noise);
    cfg.zoo_train.aug_brightness = get_or<double>(z, "aug_brightness", cfg.zoo_train.aug_brightness);
  }

  // referenced domains must exist
  std::set<std::string> known;
  for (const auto& d : cfg.domains) known.insert(d.domain_id);
  for (const auto& z : cfg.data_zoo)
    if (known.count(z) == 0) throw ConfigError("data_zoo references unknown domain '" + z + "'");
  for (const auto& m : cfg.model_zoo)
    if (known.count(m.train_domain) == 0)
      throw ConfigError("model_zoo references unknown domain '" + m.train_domain + "'");
  for (const auto& m : cfg.targets)
    if (known.count(m.train_domain) == 0)
      throw ConfigError("targets references unknown domain '" + m.train_domain + "'");
  for (const auto& sname : cfg.settings) {
    const auto s = evalbench::setting_by_name(sname);
    if (known.count(s.query_domain) == 0)
      throw ConfigError("setting '" + sname + "' needs domain '" + s.query_domain + "'");
  }
  if (cfg.data_zoo.size() < 2 && cfg.flags.cas_enabled && cfg.resolved_mode() == AttackMode::meta)
    throw ConfigError("meta training needs at least 2 data-zoo domains");
  try {
    cfg.resolved_meta().check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("meta: ") + e.what());
  }
  return cfg;
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["meta"] = {{"iterations", cfg.meta.iterations},
               {"tasks_per_iter", cfg.meta.tasks_per_iter},
               {"batch_size", cfg.meta.batch_size},
               {"inner_lr", cfg.meta.inner_lr},
               {"outer_lr", cfg.meta.outer_lr},
               {"epsilon", cfg.meta.epsilon},
               {"pre_p", cfg.meta.pre_p},
               {"pre_m", cfg.meta.pre_m},
               {"beta_a", cfg.meta.beta_a},
               {"beta_b", cfg.meta.beta_b}};
  j["flags"] = {{"pre_enabled", cfg.flags.pre_enabled},
                {"normix_enabled", cfg.flags.normix_enabled},
                {"cas_enabled", cfg.flags.cas_enabled},
                {"second_order", cfg.flags.second_order},
                {"same_camera_exclusion", cfg.flags.same_camera_exclusion}};
  j["attack_mode"] = mode_to_string(cfg.resolved_mode());
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : cfg.domains) domains.push_back(domain_to_json(d));
  j["domains"] = domains;
  j["data_zoo"] = cfg.data_zoo;
  auto refs = [](const std::vector<ModelRef>& ms) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : ms) arr.push_back({{"variant", m.variant}, {"train_domain", m.train_domain}});
    return arr;
  };
  j["model_zoo"] = refs(cfg.model_zoo);
  j["targets"] = refs(cfg.targets);
  j["settings"] = cfg.settings;
  j["zoo_train"] = {{"epochs", cfg.zoo_train.epochs},
                    {"batch_size", cfg.zoo_train.batch_size},
                    {"lr", cfg.zoo_train.lr},
                    {"aug_noise", cfg.zoo_train.aug_noise},
                    {"aug_brightness", cfg.zoo_train.aug_brightness}};
  return j;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  const std::string text = buf.str();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < e.byte && i < text.size(); ++i)
      if (text[i] == '\n') ++line;
    throw ConfigError("parse error in " + path + " at line " + std::to_string(line) + ": " +
                      e.what());
  }
  return config_from_json(j);
}

void save_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write config: " + path);
  os << to_json(cfg).dump(2) << "\n";
}

}  // namespace mtga::cli
