#include "mtga/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mtga/checkpoint.hpp"
#include "mtga/threads.hpp"

namespace mtga::cli {

namespace fs = std::filesystem;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::uint64_t model_seed(std::uint64_t base, const ModelRef& m) {
  std::uint64_t h = base ^ 0x5eedc0de12345678ULL;
  for (char c : m.variant + "@" + m.train_domain) h = splitmix64(h) ^ static_cast<std::uint64_t>(c);
  return splitmix64(h);
}

const synthzoo::DomainSpec& find_domain_spec(const RunConfig& cfg, const std::string& id) {
  for (const auto& d : cfg.domains)
    if (d.domain_id == id) return d;
  throw ConfigError("no domain spec for '" + id + "'");
}

// field names follow the report schema: mAP_clean/mAP_adv per target,
// aAP_clean/aAP_adv/mDR/mean_ssim per setting
nlohmann::json setting_report_json(const evalbench::SettingReport& r) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : r.targets)
    targets.push_back({{"variant", t.target.variant},
                       {"train_domain", t.target.train_domain},
                       {"mAP_clean", t.map_clean},
                       {"mAP_adv", t.map_adv}});
  return {{"name", r.name},          {"query_domain", r.query_domain}, {"targets", targets},
          {"aAP_clean", r.aap_clean}, {"aAP_adv", r.aap_adv},          {"mDR", r.mdr},
          {"mean_ssim", r.mean_ssim}};
}

}  // namespace

std::map<std::string, synthzoo::DomainData> build_domains(const RunConfig& cfg,
                                                          const std::vector<std::string>& only) {
  std::map<std::string, synthzoo::DomainData> out;
  std::vector<const synthzoo::DomainSpec*> wanted;
  for (const auto& d : cfg.domains) {
    if (!only.empty() && std::find(only.begin(), only.end(), d.domain_id) == only.end()) continue;
    wanted.push_back(&d);
  }
  std::vector<synthzoo::DomainData> generated(wanted.size());
  parallel_for_index(static_cast<std::int64_t>(wanted.size()), [&](std::int64_t i) {
    generated[static_cast<std::size_t>(i)] = synthzoo::generate_domain(*wanted[static_cast<std::size_t>(i)]);
  });
  for (auto& g : generated) {
    std::string id = g.domain_id;
    out.emplace(std::move(id), std::move(g));
  }
  return out;
}

std::vector<ModelRef> required_models(const RunConfig& cfg) {
  std::vector<ModelRef> out = cfg.model_zoo;
  for (const auto& t : cfg.targets)
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  return out;
}

attacker::GeneratorNet<float> make_zero_generator(double epsilon) {
  auto gen = attacker::GeneratorNet<float>::build(epsilon, 0);
  for (auto& v : gen.params.values)
    for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = 0.0f;
  return gen;
}

void cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  OutputLayout out(cfg.output_dir);
  fs::create_directories(out.datasets_dir());
  auto domains = build_domains(cfg);
  for (const auto& [id, data] : domains) {
    synthzoo::write_dataset(out.datasets_dir(), data);
    log << "gen-data: wrote domain " << id << " (" << data.train.data.size() << " train, "
        << data.query.data.size() << " query, " << data.gallery.data.size() << " gallery)\n";
  }
}

void cmd_train_zoo(const RunConfig& cfg, std::ostream& log) {
  OutputLayout out(cfg.output_dir);
  fs::create_directories(out.models_dir());
  const std::vector<ModelRef> models = required_models(cfg);
  std::vector<std::string> needed_domains;
  for (const auto& m : models)
    if (std::find(needed_domains.begin(), needed_domains.end(), m.train_domain) ==
        needed_domains.end())
      needed_domains.push_back(m.train_domain);
  auto domains = build_domains(cfg, needed_domains);

  std::vector<std::string> lines(models.size());
  std::exception_ptr first_error;
  std::mutex mu;
  parallel_for_index(static_cast<std::int64_t>(models.size()), [&](std::int64_t i) {
    try {
      const ModelRef& m = models[static_cast<std::size_t>(i)];
      auto net = reid::EmbedNet<float>::build(m.variant, model_seed(cfg.seed, m));
      reid::TrainConfig tc;
      tc.epochs = cfg.zoo_train.epochs;
      tc.batch_size = cfg.zoo_train.batch_size;
      tc.lr = cfg.zoo_train.lr;
      tc.aug_noise = cfg.zoo_train.aug_noise;
      tc.aug_brightness = cfg.zoo_train.aug_brightness;
      reid::train_reid_model(net, domains.at(m.train_domain), tc,
                             model_seed(cfg.seed ^ 0xf00d, m));
      ckpt::save_model(OutputLayout(cfg.output_dir).model_path(m), net);
      evalbench::MapProtocol protocol{cfg.flags.same_camera_exclusion};
      const double map = evalbench::mean_ap(net, domains.at(m.train_domain).query.data,
                                            domains.at(m.train_domain).gallery.data, protocol);
      char buf[160];
      std::snprintf(buf, sizeof(buf), "train-zoo: %s@%s clean mAP %.3f", m.variant.c_str(),
                    m.train_domain.c_str(), map);
      lines[static_cast<std::size_t>(i)] = buf;
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu);
      if (!first_error) first_error = std::current_exception();
    }
  });
  if (first_error) std::rethrow_exception(first_error);
  for (const auto& l : lines) log << l << "\n";
}

namespace {

struct LoadedZoo {
  std::vector<reid::EmbedNet<float>> models;
  std::vector<const reid::EmbedNet<float>*> ptrs;
};

LoadedZoo load_zoo(const RunConfig& cfg, const std::vector<ModelRef>& refs) {
  OutputLayout out(cfg.output_dir);
  LoadedZoo zoo;
  zoo.models.reserve(refs.size());
  for (const auto& m : refs) {
    const std::string path = out.model_path(m);
    if (!fs::exists(path))
      throw MissingArtifact("missing trained model " + m.variant + "@" + m.train_domain +
                            " (expected at " + path + "); run train-zoo first");
    zoo.models.push_back(ckpt::load_model(path));
  }
  for (const auto& m : zoo.models) zoo.ptrs.push_back(&m);
  return zoo;
}

}  // namespace

void cmd_train_attack(const RunConfig& cfg, std::ostream& log) {
  OutputLayout out(cfg.output_dir);
  fs::create_directories(out.root);
  fs::create_directories(out.checkpoints_dir());

  const AttackMode mode = cfg.resolved_mode();
  std::vector<ModelRef> zoo_refs = cfg.model_zoo;
  std::vector<std::string> zoo_domains = cfg.data_zoo;
  if (mode == AttackMode::baseline) {
    zoo_refs.resize(1);
    zoo_domains.resize(1);
  }
  LoadedZoo zoo = load_zoo(cfg, zoo_refs);
  auto domains = build_domains(cfg, zoo_domains);
  std::vector<const synthzoo::SplitDataset*> data_zoo;
  for (const auto& id : zoo_domains) data_zoo.push_back(&domains.at(id).train);

  std::ofstream tele(out.telemetry_path());
  if (!tele) throw std::runtime_error("cannot write telemetry: " + out.telemetry_path());
  auto sink = [&](const meta_engine::IterationTelemetry& t) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& task : t.tasks)
      tasks.push_back({{"l_mtr", task.l_mtr},
                       {"l_mte", task.l_mte},
                       {"l_d", task.l_d},
                       {"l_adv_mte", task.l_adv_mte},
                       {"lambda", task.lambda},
                       {"domain_mtr", task.domain_mtr},
                       {"domain_mte", task.domain_mte},
                       {"model_mtr", task.model_mtr},
                       {"model_mte", task.model_mte}});
    tele << nlohmann::json{{"iteration", t.iteration}, {"tasks", tasks}}.dump() << "\n";
  };
  auto hook = [&](const meta_engine::TrainState<float>& state, std::int64_t iter) {
    char name[64];
    std::snprintf(name, sizeof(name), "/gen_%06lld.ckpt", static_cast<long long>(iter));
    ckpt::save_generator(out.checkpoints_dir() + name, state.gen);
  };

  const meta_engine::MetaConfig mc = cfg.resolved_meta();
  meta_engine::TrainState<float> state;
  if (mode == AttackMode::meta) {
    log << "train-attack: meta mode, " << mc.iterations << " iterations x " << mc.tasks_per_iter
        << " tasks\n";
    state = meta_engine::train<float>(mc, zoo.ptrs, data_zoo, sink, hook, cfg.checkpoint_every);
  } else {
    log << "train-attack: " << (mode == AttackMode::baseline ? "baseline" : "ensemble")
        << " mode, " << mc.iterations << " iterations\n";
    state = meta_engine::train_non_meta<float>(mc, zoo.ptrs, data_zoo, sink);
  }
  ckpt::save_generator(out.generator_path(), state.gen);
  ckpt::save_discriminator(out.discriminator_path(), state.dis);
  log << "train-attack: saved " << out.generator_path() << "\n";
}

RunRecord cmd_evaluate(const RunConfig& cfg, bool zero_generator, std::ostream& log) {
  OutputLayout out(cfg.output_dir);
  fs::create_directories(out.root);
  const auto t0 = std::chrono::steady_clock::now();

  attacker::GeneratorNet<float> gen = make_zero_generator(cfg.meta.epsilon);
  if (!zero_generator) {
    if (!fs::exists(out.generator_path()))
      throw MissingArtifact("missing generator checkpoint at " + out.generator_path() +
                            "; run train-attack first");
    gen = ckpt::load_generator(out.generator_path());
  }

  std::map<evalbench::ModelKey, reid::EmbedNet<float>> models;
  for (const auto& m : cfg.targets) {
    const std::string path = out.model_path(m);
    if (!fs::exists(path))
      throw MissingArtifact("missing trained model " + m.variant + "@" + m.train_domain +
                            " (expected at " + path + "); run train-zoo first");
    models.emplace(evalbench::ModelKey{m.variant, m.train_domain}, ckpt::load_model(path));
  }

  std::vector<std::string> query_domains;
  for (const auto& sname : cfg.settings) {
    const auto s = evalbench::setting_by_name(sname);
    if (std::find(query_domains.begin(), query_domains.end(), s.query_domain) ==
        query_domains.end())
      query_domains.push_back(s.query_domain);
  }
  auto domains = build_domains(cfg, query_domains);

  RunRecord record;
  record.verb = zero_generator ? "evaluate[zero-generator]" : "evaluate";
  record.seed = cfg.seed;
  record.config_snapshot = to_json(cfg);
  record.telemetry_path = out.telemetry_path();

  fs::create_directories(out.root + "/plots");
  evalbench::EvalAssets assets{&models, &domains};
  evalbench::MapProtocol protocol{cfg.flags.same_camera_exclusion};
  for (const auto& sname : cfg.settings) {
    const auto setting = evalbench::setting_by_name(sname);
    for (const auto& t : setting.targets)
      if (models.find(evalbench::ModelKey{t.variant, t.train_domain}) == models.end())
        throw MissingArtifact("setting '" + sname + "' needs model " + t.variant + "@" +
                              t.train_domain + " listed in targets");
    evalbench::SettingReport rep = evalbench::run_setting(setting, gen, assets, protocol);
    std::string plot_name = sname;
    for (auto& ch : plot_name)
      if (ch == '&') ch = '+';
    evalbench::write_setting_plot(rep, out.root + "/plots/" + plot_name + ".png");
    char buf[200];
    std::snprintf(buf, sizeof(buf), "evaluate: %-26s aAP %.1f -> %.1f  mDR %5.1f  SSIM %.3f",
                  rep.name.c_str(), 100 * rep.aap_clean, 100 * rep.aap_adv, rep.mdr, rep.mean_ssim);
    log << buf << "\n";
    record.reports.push_back(std::move(rep));
  }
  record.timings_sec["evaluate"] = seconds_since(t0);
  write_report(record, out);
  return record;
}

void write_report(const RunRecord& record, const OutputLayout& out) {
  fs::create_directories(out.root);
  nlohmann::json j;
  j["schema_version"] = 1;
  j["verb"] = record.verb;
  j["seed"] = record.seed;
  nlohmann::json settings = nlohmann::json::array();
  for (const auto& r : record.reports) settings.push_back(setting_report_json(r));
  j["settings"] = settings;
  {
    std::ofstream os(out.report_json());
    if (!os) throw std::runtime_error("cannot write " + out.report_json());
    os << j.dump(2) << "\n";
  }
  {
    std::ofstream os(out.report_txt());
    if (!os) throw std::runtime_error("cannot write " + out.report_txt());
    os << "setting                      target       mAP_clean  mAP_adv\n";
    for (const auto& r : record.reports) {
      for (const auto& t : r.targets) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-28s %-3s@%-8s %9.1f %8.1f\n", r.name.c_str(),
                      t.target.variant.c_str(), t.target.train_domain.c_str(),
                      100 * t.map_clean, 100 * t.map_adv);
        os << buf;
      }
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "%-28s aAP %.1f -> %.1f   mDR %.1f   mean SSIM %.3f\n\n", r.name.c_str(),
                    100 * r.aap_clean, 100 * r.aap_adv, r.mdr, r.mean_ssim);
      os << buf;
    }
  }
  // run record (timings live here, not in the reports)
  nlohmann::json rec;
  rec["schema_version"] = 1;
  rec["verb"] = record.verb;
  rec["seed"] = record.seed;
  rec["config"] = record.config_snapshot;
  rec["telemetry_path"] = record.telemetry_path;
  rec["checkpoint_paths"] = record.checkpoint_paths;
  rec["report_paths"] = {out.report_json(), out.report_txt()};
  rec["timings_sec"] = record.timings_sec;
  std::ofstream os(out.run_record_path());
  os << rec.dump(2) << "\n";
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  OutputLayout out(cfg.output_dir);
  fs::create_directories(out.root);

  struct RowSpec {
    const char* label;
    const char* dir;
    bool cas, pre, normix;
  };
  const RowSpec rows[] = {
      {"baseline", "baseline", false, false, false},
      {"+CAS", "cas", true, false, false},
      {"+PRE", "cas_pre", true, true, false},
      {"+NorMix", "cas_pre_normix", true, true, true},
  };

  std::vector<AblationRow> result;
  for (const auto& row : rows) {
    RunConfig sub = cfg;
    sub.output_dir = out.root + "/ablate/" + row.dir;
    sub.flags.cas_enabled = row.cas;
    sub.flags.pre_enabled = row.pre;
    sub.flags.normix_enabled = row.normix;
    sub.attack_mode_explicit = false;  // baseline row degenerates, others run meta
    sub.settings = {"cross-model&dataset"};
    fs::create_directories(sub.output_dir);
    // share the trained zoo: point the model directory at the parent run
    fs::create_directories(OutputLayout(sub.output_dir).models_dir());
    for (const auto& m : required_models(cfg)) {
      const std::string src = out.model_path(m);
      const std::string dst = OutputLayout(sub.output_dir).model_path(m);
      if (!fs::exists(src))
        throw MissingArtifact("missing trained model " + m.variant + "@" + m.train_domain +
                              " (expected at " + src + "); run train-zoo first");
      fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
    }
    log << "ablate: training row '" << row.label << "'\n";
    cmd_train_attack(sub, log);
    RunRecord rec = cmd_evaluate(sub, false, log);
    AblationRow done;
    done.label = row.label;
    done.flags = sub.flags;
    done.mode = sub.resolved_mode();
    done.mdr = rec.reports.at(0).mdr;
    done.aap_clean = rec.reports.at(0).aap_clean;
    done.aap_adv = rec.reports.at(0).aap_adv;
    result.push_back(done);
  }

  nlohmann::json j;
  j["schema_version"] = 1;
  j["setting"] = "cross-model&dataset";
  nlohmann::json jrows = nlohmann::json::array();
  for (const auto& r : result)
    jrows.push_back({{"label", r.label},
                     {"cas", r.flags.cas_enabled},
                     {"pre", r.flags.pre_enabled},
                     {"normix", r.flags.normix_enabled},
                     {"aap_clean", r.aap_clean},
                     {"aap_adv", r.aap_adv},
                     {"mdr", r.mdr}});
  j["rows"] = jrows;
  {
    std::ofstream os(out.ablation_json());
    os << j.dump(2) << "\n";
  }
  {
    std::ofstream os(out.ablation_txt());
    os << "row        cas pre normix   aAP_adv   mDR\n";
    for (const auto& r : result) {
      char buf[120];
      std::snprintf(buf, sizeof(buf), "%-10s %-3s %-3s %-6s %9.1f %5.1f\n", r.label.c_str(),
                    r.flags.cas_enabled ? "on" : "off", r.flags.pre_enabled ? "on" : "off",
                    r.flags.normix_enabled ? "on" : "off", 100 * r.aap_adv, r.mdr);
      os << buf;
    }
  }
  for (const auto& r : result)
    log << "ablate: " << r.label << " mDR " << r.mdr << "\n";
  return result;
}

int run_command(const std::string& verb, const RunConfig& cfg, bool zero_generator,
                std::ostream& log) {
  if (verb == "gen-data")
    cmd_gen_data(cfg, log);
  else if (verb == "train-zoo")
    cmd_train_zoo(cfg, log);
  else if (verb == "train-attack")
    cmd_train_attack(cfg, log);
  else if (verb == "evaluate")
    cmd_evaluate(cfg, zero_generator, log);
  else if (verb == "ablate")
    cmd_ablate(cfg, log);
  else
    throw ConfigError("unknown command '" + verb + "'");
  return 0;
}

}  // namespace mtga::cli
