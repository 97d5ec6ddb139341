// Command-line entry point: dataset generation, model-zoo training, attack
// training, evaluation over the six settings, and the four-row ablation run.

#include <CLI11.hpp>

#include <iostream>

#include "mtga/kernels.hpp"
#include "mtga/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"mtga: transferable generative attack testbed for small re-id models"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  bool second_order = false, no_pre = false, no_normix = false, no_cas = false, ensemble = false;
  bool zero_generator = false;

  app.add_option("--config", config_path, "JSON run configuration (defaults apply when omitted)");
  app.add_option("--seed", seed, "override the run seed");
  app.add_option("--out", out_dir, "override the output directory");
  app.add_flag("--second-order", second_order, "exact second-order meta gradients");
  app.add_flag("--no-pre", no_pre, "disable perturbation random erasing");
  app.add_flag("--no-normix", no_normix, "disable normalization mixing");
  app.add_flag("--no-cas", no_cas, "disable task simulation (baseline training loop)");
  app.add_flag("--ensemble", ensemble, "non-meta joint training over the full zoo");

  app.add_subcommand("gen-data", "materialize the configured domains as PNG datasets");
  app.add_subcommand("train-zoo", "train zoo and target embedding models");
  app.add_subcommand("train-attack", "train the generative attacker");
  auto* eval_cmd = app.add_subcommand("evaluate", "run the configured attack settings");
  eval_cmd->add_flag("--zero-generator", zero_generator,
                     "evaluate the identity attack (delta = 0) instead of a checkpoint");
  app.add_subcommand("ablate", "train and evaluate the baseline/+CAS/+PRE/+NorMix matrix");

  CLI11_PARSE(app, argc, argv);
  const std::string verb = app.get_subcommands().front()->get_name();

  try {
    mtga::cli::RunConfig cfg;
    try {
      cfg = config_path.empty() ? mtga::cli::default_config() : mtga::cli::load_config(config_path);
      if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (second_order) cfg.flags.second_order = true;
      if (no_pre) cfg.flags.pre_enabled = false;
      if (no_normix) cfg.flags.normix_enabled = false;
      if (no_cas) cfg.flags.cas_enabled = false;
      if (ensemble) {
        cfg.attack_mode = mtga::cli::AttackMode::ensemble;
        cfg.attack_mode_explicit = true;
      }
    } catch (const mtga::cli::ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw mtga::cli::ConfigError(e.what());
    }
    std::cerr << "kernels: " << mtga::kernels::isa_name(mtga::kernels::active_isa()) << "\n";
    return mtga::cli::run_command(verb, cfg, zero_generator, std::cout);
  } catch (const mtga::cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mtga::cli::MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
