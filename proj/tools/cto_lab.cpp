// cto-lab: calibration-to-target-outcomes toolkit.
//
// Subcommands fit Gaussian-process emulators to simulator runs, run
// preliminary and full calibrations of design variables toward performance
// targets, and trace Pareto bands over a grid of constrained targets.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cto/csv.hpp"
#include "cto/errors.hpp"
#include "cto/pipeline.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* sub, CommonOptions& opts) {
  sub->add_option("--config", opts.config_path, "JSON run configuration")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", opts.seed, "master seed (overrides config)");
  sub->add_option("--out", opts.out_dir, "output directory (overrides config)");
}

int execute(cto::Command command, const CommonOptions& opts) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(cto::read_text_file(opts.config_path));
  } catch (const nlohmann::json::parse_error& e) {
    std::cerr << "config error: malformed JSON in " << opts.config_path << ": "
              << e.what() << "\n";
    return 2;
  }

  cto::RunConfig cfg;
  try {
    cfg = cto::parse_config(doc, command);
  } catch (const cto::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  if (opts.seed) {
    cfg.seed = *opts.seed;
    cfg.chain.master_seed = *opts.seed;
  }
  if (opts.out_dir) cfg.out_dir = *opts.out_dir;

  try {
    const cto::PipelineResult result = cto::run_pipeline(cfg);
    std::cout << result.summary.dump(2) << "\n";
    std::cout << "artifacts written to " << result.out_dir << "\n";
    if (!result.converged) {
      std::cerr << "warning: convergence diagnostics exceeded the 1.1 threshold; "
                   "see summary.json\n";
      return 3;
    }
    return 0;
  } catch (const cto::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cto-lab: calibration to target outcomes"};
  app.require_subcommand(1);

  CommonOptions opts;
  auto* emulate = app.add_subcommand("emulate", "fit and save a GP emulator");
  auto* prelim = app.add_subcommand(
      "prelim", "preliminary calibration: estimate the Pareto front and suggest a target");
  auto* cto_cmd = app.add_subcommand("cto", "calibrate design variables to a target");
  auto* bands = app.add_subcommand("bands", "Pareto band over a grid of constrained targets");
  for (auto* sub : {emulate, prelim, cto_cmd, bands}) add_common(sub, opts);

  CLI11_PARSE(app, argc, argv);

  if (emulate->parsed()) return execute(cto::Command::emulate, opts);
  if (prelim->parsed()) return execute(cto::Command::prelim, opts);
  if (cto_cmd->parsed()) return execute(cto::Command::cto, opts);
  return execute(cto::Command::bands, opts);
}
