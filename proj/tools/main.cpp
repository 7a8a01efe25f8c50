#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "gpmpc/errors.hpp"
#include "gpmpc/model_io.hpp"
#include "gpmpc/scenario.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitScenario = 3;
constexpr int kExitSolver = 4;

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed_override;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* opt = cmd->add_option("--config", args.config, "Scenario config file (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--out", args.out, "Output directory");
  cmd->add_option("--seed-override", args.seed_override,
                  "Replace the config seed for this invocation");
}

int load_config(const CommonArgs& args, gpmpc::ScenarioConfig& config) {
  gpmpc::ConfigParse parsed = gpmpc::validate_config(args.config);
  if (!parsed.ok()) {
    std::cerr << "config errors in " << args.config << ":\n";
    for (const auto& issue : parsed.issues) {
      std::cerr << "  " << (issue.where.empty() ? "/" : issue.where) << ": "
                << issue.message << "\n";
    }
    return kExitConfig;
  }
  config = *parsed.config;
  if (args.seed_override.has_value()) config.seed = *args.seed_override;
  return kExitOk;
}

int run_and_report(const gpmpc::ScenarioConfig& config, const std::string& out) {
  try {
    const gpmpc::RunLog log = gpmpc::run_scenario(config, out);
    for (const auto& [key, value] : log.summary) {
      std::cout << key << " = " << gpmpc::format_double(value) << "\n";
    }
    if (log.failed) {
      std::cerr << "scenario failed at step " << log.failure_step << ": "
                << log.failure_reason << "\n";
      return kExitScenario;
    }
    return kExitOk;
  } catch (const gpmpc::SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "scenario failure: " << e.what() << "\n";
    return kExitScenario;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-process learning-based MPC scenario runner"};
  app.require_subcommand(1);

  CommonArgs validate_args, train_args, run_args, compare_args, plot_args;
  std::string compare_a, compare_b, plot_run;

  auto* validate_cmd =
      app.add_subcommand("validate", "Check a config file and echo the effective settings");
  add_common(validate_cmd, validate_args, true);

  auto* train_cmd =
      app.add_subcommand("train", "Run the data-collection phase and save trained models");
  add_common(train_cmd, train_args, true);

  auto* run_cmd = app.add_subcommand("run", "Execute the full scenario");
  add_common(run_cmd, run_args, true);

  auto* compare_cmd = app.add_subcommand("compare", "Paired comparison of two run directories");
  compare_cmd->add_option("run_a", compare_a, "First run directory")->required();
  compare_cmd->add_option("run_b", compare_b, "Second run directory")->required();
  add_common(compare_cmd, compare_args, false);

  auto* plot_cmd = app.add_subcommand("plot", "Emit SVG panels for a run directory");
  plot_cmd->add_option("run", plot_run, "Run directory")->required();
  add_common(plot_cmd, plot_args, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate_cmd->parsed()) {
      gpmpc::ScenarioConfig config;
      const int rc = load_config(validate_args, config);
      if (rc != kExitOk) return rc;
      std::cout << gpmpc::effective_config_json(config);
      return kExitOk;
    }
    if (train_cmd->parsed()) {
      gpmpc::ScenarioConfig config;
      const int rc = load_config(train_args, config);
      if (rc != kExitOk) return rc;
      if (!gpmpc::controller_uses_gp(config.controller) &&
          config.application == gpmpc::Application::Pathfollow) {
        std::cerr << "config error: 'train' needs a GP-based controller\n";
        return kExitConfig;
      }
      // Training happens inside the full pipeline; run it and keep the
      // model artifacts (steps.csv etc. describe the deployment run).
      return run_and_report(config, train_args.out);
    }
    if (run_cmd->parsed()) {
      gpmpc::ScenarioConfig config;
      const int rc = load_config(run_args, config);
      if (rc != kExitOk) return rc;
      return run_and_report(config, run_args.out);
    }
    if (compare_cmd->parsed()) {
      const gpmpc::RunLog a = gpmpc::load_run(compare_a);
      const gpmpc::RunLog b = gpmpc::load_run(compare_b);
      const gpmpc::Comparison cmp = gpmpc::compare_runs(a, b);
      const std::string text = gpmpc::comparison_json(cmp);
      if (!compare_args.out.empty()) {
        gpmpc::write_file(std::filesystem::path(compare_args.out) / "comparison.json", text);
        gpmpc::write_manifest(compare_args.out);
      }
      std::cout << text;
      return kExitOk;
    }
    if (plot_cmd->parsed()) {
      const gpmpc::RunLog log = gpmpc::load_run(plot_run);
      const std::filesystem::path out = plot_args.out.empty()
                                            ? std::filesystem::path(plot_run)
                                            : std::filesystem::path(plot_args.out);
      for (const auto& file : gpmpc::export_plots(log, out)) {
        std::cout << file.generic_string() << "\n";
      }
      return kExitOk;
    }
  } catch (const gpmpc::SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitScenario;
  }
  return kExitOk;
}
