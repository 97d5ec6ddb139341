#pragma once
// Batch pipeline behind the CLI verbs: dataset materialization, zoo training,
// attack training (meta / ensemble / baseline), evaluation over the attack
// settings, the four-row ablation matrix, and report persistence.

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mtga/evalbench.hpp"
#include "mtga/run_config.hpp"

namespace mtga::cli {

struct RunRecord {
  nlohmann::json config_snapshot;
  std::uint64_t seed = 0;
  std::string verb;
  std::string telemetry_path;
  std::vector<std::string> checkpoint_paths;
  std::vector<evalbench::SettingReport> reports;
  std::map<std::string, double> timings_sec;
};

// Paths inside an output directory.
struct OutputLayout {
  std::string root;
  explicit OutputLayout(std::string r) : root(std::move(r)) {}
  std::string datasets_dir() const { return root + "/datasets"; }
  std::string models_dir() const { return root + "/models"; }
  std::string model_path(const ModelRef& m) const {
    return models_dir() + "/" + m.variant + "_" + m.train_domain + ".ckpt";
  }
  std::string checkpoints_dir() const { return root + "/checkpoints"; }
  std::string generator_path() const { return root + "/generator.ckpt"; }
  std::string discriminator_path() const { return root + "/discriminator.ckpt"; }
  std::string telemetry_path() const { return root + "/telemetry.jsonl"; }
  std::string report_json() const { return root + "/report.json"; }
  std::string report_txt() const { return root + "/report.txt"; }
  std::string ablation_json() const { return root + "/ablation.json"; }
  std::string ablation_txt() const { return root + "/ablation.txt"; }
  std::string run_record_path() const { return root + "/run_record.json"; }
};

// Deterministic in-memory materialization of the listed domains.
std::map<std::string, synthzoo::DomainData> build_domains(
    const RunConfig& cfg, const std::vector<std::string>& only = {});

void cmd_gen_data(const RunConfig& cfg, std::ostream& log);
void cmd_train_zoo(const RunConfig& cfg, std::ostream& log);
void cmd_train_attack(const RunConfig& cfg, std::ostream& log);
RunRecord cmd_evaluate(const RunConfig& cfg, bool zero_generator, std::ostream& log);

struct AblationRow {
  std::string label;
  RunFlags flags;
  AttackMode mode;
  double mdr = 0.0;
  double aap_clean = 0.0;
  double aap_adv = 0.0;
};
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, std::ostream& log);

// Machine-readable report (schema_version stamped) plus a human-readable table.
void write_report(const RunRecord& record, const OutputLayout& out);

// All models needed by the configured run (zoo plus targets), deduplicated.
std::vector<ModelRef> required_models(const RunConfig& cfg);

attacker::GeneratorNet<float> make_zero_generator(double epsilon);

int run_command(const std::string& verb, const RunConfig& cfg, bool zero_generator,
                std::ostream& log);

}  // namespace mtga::cli
