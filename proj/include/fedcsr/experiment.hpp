#pragma once

// Experiment runner: declarative config, variant flags, seed repeats and the
// artifact layout consumed by the report writer.
//
// Run directory layout:
//   config.json         resolved ExperimentConfig
//   seeds.json          derived seed of every repeat
//   VERSION             code version stamp
//   seed_<i>/history.jsonl, valid.csv, test.csv, test_<mode>.json
//   summary.json        per-seed test metrics for every fusion mode
// A sweep directory holds sweep.json plus one run directory per value.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedcsr/dataset.hpp"
#include "fedcsr/evaluation.hpp"
#include "fedcsr/federation.hpp"

namespace fedcsr {

enum class Variant { feddcsr, feddcsr_no_cim, feddcsr_no_srd_cim, local_only, fedavg_monolithic };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
inline constexpr Variant kAllVariants[] = {Variant::feddcsr, Variant::feddcsr_no_cim,
                                           Variant::feddcsr_no_srd_cim, Variant::local_only,
                                           Variant::fedavg_monolithic};

struct AmazonSource {
  std::filesystem::path dir;
  std::vector<std::string> domains;
  bool operator==(const AmazonSource&) const = default;
};

struct SweepSpec {
  std::string parameter;  // alpha, beta, gamma, lambda or tau
  std::vector<double> values;
  bool operator==(const SweepSpec&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::optional<ScenarioConfig> synthetic;
  std::optional<AmazonSource> amazon;
  PreprocessOptions preprocess;
  TrainConfig train;
  Variant variant = Variant::feddcsr;
  std::optional<SweepSpec> sweep;
  std::filesystem::path output_dir = "runs";
  int repeats = 1;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

ExperimentConfig load_experiment_config(const std::filesystem::path& file);

/// Applies `path=value` (dotted path, e.g. "train.lr=0.01") to a config
/// document. The value is parsed as JSON when possible, else kept as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Desk-scale synthetic preset: 3 domains, 300 shared users, vocab 200 per
/// domain, d=32, T=16, 15 rounds.
ExperimentConfig default_preset();

/// Training config with the variant's flags applied; everything else unchanged.
TrainConfig apply_variant(TrainConfig cfg, Variant v);

/// `repeats` distinct seeds derived from `base`.
std::vector<std::uint64_t> repeat_seeds(std::uint64_t base, int repeats);

/// Preprocessed client datasets for one repeat. Synthetic worlds are
/// regenerated per repeat from a seed derived from the repeat's seed.
std::vector<DomainDataset> build_datasets(const ExperimentConfig& cfg, std::uint64_t run_seed);

struct SeedOutcome {
  std::uint64_t seed = 0;
  FederatedResult federated;
  std::map<FusionMode, EvalResult> test;
};

/// Trains and evaluates one repeat.
SeedOutcome run_single(const ExperimentConfig& cfg, std::uint64_t run_seed);

struct ExperimentOutcome {
  std::filesystem::path dir;
  std::vector<SeedOutcome> seeds;
};

/// Runs every repeat and writes the run directory (`output_root`/name).
/// Sweeps must go through run_sweep.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& output_root);

struct SweepOutcome {
  std::filesystem::path dir;
  std::vector<double> values;
  std::vector<ExperimentOutcome> runs;
};

SweepOutcome run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& output_root);

/// Root for run artifacts: $FEDCSR_OUTPUT_ROOT when set, else `fallback`.
std::filesystem::path output_root(const std::filesystem::path& fallback);

/// Writes report.md, metrics.csv and SVG plots into `artifact_dir` (a run or
/// sweep directory). Returns the files written.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& artifact_dir);

std::string version_stamp();

}  // namespace fedcsr
