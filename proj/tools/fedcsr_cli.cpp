// fedcsr: run, sweep and report federated cross-domain recommendation
// experiments, and run the built-in oracle checks.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fedcsr/checks.hpp"
#include "fedcsr/experiment.hpp"

namespace fs = std::filesystem;
using namespace fedcsr;

namespace {

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string variant;
  std::string output;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.config_file,
                  "Experiment config (JSON); defaults to the synthetic desk preset")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides, "Override a config leaf, e.g. --set train.lr=0.01")
      ->take_all();
  cmd->add_option("--variant", args.variant, "Variant to run (overrides the config)");
  cmd->add_option("-o,--output", args.output,
                  "Output root (default: $FEDCSR_OUTPUT_ROOT, then the config's output_dir)");
}

ExperimentConfig resolve_config(const ConfigArgs& args) {
  nlohmann::json doc;
  if (args.config_file.empty()) {
    doc = to_json(default_preset());
  } else {
    std::ifstream in(args.config_file);
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(args.config_file + ": " + e.what());
    }
  }
  for (const auto& o : args.overrides) apply_override(doc, o);
  if (!args.variant.empty()) doc["variant"] = args.variant;
  auto cfg = experiment_config_from_json(doc);
  cfg.validate();
  return cfg;
}

fs::path resolve_root(const ConfigArgs& args, const ExperimentConfig& cfg) {
  if (!args.output.empty()) return args.output;
  return output_root(cfg.output_dir);
}

int print_results(const std::vector<CheckResult>& results) {
  int failed = 0;
  for (const auto& r : results) {
    std::printf("%s  %-44s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    if (!r.passed) ++failed;
  }
  return failed;
}

int oracle_check(double grad_tolerance) {
  std::vector<CheckResult> results = closed_form_oracles();
  results.push_back(ranking_oracle());
  for (auto& r : protocol_checks()) results.push_back(std::move(r));
  results.push_back(causality_check());
  double worst = 0.0;
  std::string worst_at;
  for (const auto& row : gradient_check()) {
    if (row.rel_error > worst) {
      worst = row.rel_error;
      worst_at = row.term + "/" + row.group;
    }
  }
  results.push_back({"gradient check (all terms and groups)", worst <= grad_tolerance,
                     fmt::format("worst relative error {:.2e}{}", worst,
                                 worst_at.empty() ? "" : " at " + worst_at)});
  const int failed = print_results(results);
  std::printf("%zu checks, %d failed\n", results.size(), failed);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated cross-domain sequential recommendation with disentangled representations"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Per-round debug logging");

  ConfigArgs run_args;
  auto* run = app.add_subcommand("run", "Train and evaluate every seed repeat of an experiment");
  add_config_options(run, run_args);

  ConfigArgs sweep_args;
  std::string sweep_param;
  std::vector<double> sweep_values;
  auto* sweep = app.add_subcommand("sweep", "Run an experiment once per loss-weight value");
  add_config_options(sweep, sweep_args);
  sweep->add_option("--param", sweep_param, "Loss weight to sweep: alpha, beta, gamma, lambda or tau");
  sweep->add_option("--values", sweep_values, "Comma-separated values")->delimiter(',');

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Write report.md, metrics.csv and plots for artifacts");
  report->add_option("dir", report_dir, "Run or sweep directory")->required();

  double grad_tolerance = 1e-4;
  auto* oracle = app.add_subcommand("oracle-check", "Run the closed-form, ranking, protocol, "
                                                    "causality and gradient checks");
  oracle->add_option("--grad-tolerance", grad_tolerance, "Maximum gradient relative error");

  auto* show = app.add_subcommand("show-config", "Print the resolved config as JSON");
  ConfigArgs show_args;
  add_config_options(show, show_args);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*run) {
      const auto cfg = resolve_config(run_args);
      if (cfg.sweep) throw ConfigError("config has a sweep section; use the sweep verb");
      const auto outcome = run_experiment(cfg, resolve_root(run_args, cfg));
      std::printf("artifacts: %s\n", outcome.dir.string().c_str());
      return 0;
    }
    if (*sweep) {
      auto cfg = resolve_config(sweep_args);
      if (!sweep_param.empty()) {
        cfg.sweep = SweepSpec{sweep_param, sweep_values};
        cfg.validate();
      }
      if (!cfg.sweep) throw ConfigError("no sweep given (use --param/--values or a sweep section)");
      const auto outcome = run_sweep(cfg, resolve_root(sweep_args, cfg));
      std::printf("artifacts: %s\n", outcome.dir.string().c_str());
      return 0;
    }
    if (*report) {
      for (const auto& f : emit_report(report_dir)) std::printf("%s\n", f.string().c_str());
      return 0;
    }
    if (*oracle) return oracle_check(grad_tolerance);
    if (*show) {
      std::cout << to_json(resolve_config(show_args)).dump(2) << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
