// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.
// Experiment artifacts go to $FEDCSR_OUTPUT_ROOT (default ./acceptance_runs).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fedcsr/checks.hpp"
#include "fedcsr/experiment.hpp"

using namespace fedcsr;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kOracleSeconds = 5.0;
constexpr double kTableSeconds = 30.0 * 60.0;
constexpr int kSeeds = 5;
constexpr int kMinSeedWins = 4;
constexpr double kDegeneracyGap = 0.10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& name, bool passed, const std::string& detail) {
  std::printf("%s [%d] %s: %s\n", passed ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!passed) ++failures;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<double> mrr_per_seed(const ExperimentOutcome& o, FusionMode mode) {
  std::vector<double> out;
  for (const auto& s : o.seeds) out.push_back(s.test.at(mode).average.mrr);
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

int wins(const std::vector<double>& a, const std::vector<double>& b) {
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] - b[i] >= 0.0 ? 1 : 0;
  return n;
}

ExperimentOutcome run_variant(const fs::path& root, const std::string& tag, double heterogeneity,
                              Variant v) {
  auto cfg = default_preset();
  cfg.synthetic->heterogeneity = heterogeneity;
  cfg.variant = v;
  cfg.repeats = kSeeds;
  cfg.name = tag + "_" + to_string(v);
  const auto t0 = Clock::now();
  auto out = run_experiment(cfg, root);
  spdlog::info("{}: mean test MRR {:.4f} ({:.0f} s)", cfg.name,
               mean(mrr_per_seed(out, FusionMode::both)), seconds_since(t0));
  return out;
}

std::string fmt_seeds(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += fmt::format("{}{:.4f}", s.empty() ? "" : " ", x);
  return s;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const fs::path root = output_root("acceptance_runs");

  {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string where;
    for (const auto& row : gradient_check()) {
      if (!(row.rel_error <= worst)) {
        worst = row.rel_error;
        where = row.term + "/" + row.group;
      }
    }
    const double secs = seconds_since(t0);
    report(1, "gradient correctness", worst <= kGradTolerance && secs < kGradSeconds,
           fmt::format("worst relative error {:.2e} at {} (tolerance {:.0e}), {:.1f} s", worst,
                       where, kGradTolerance, secs));
  }

  {
    const auto t0 = Clock::now();
    const auto results = closed_form_oracles(1e-6);
    const double secs = seconds_since(t0);
    std::string failed;
    for (const auto& r : results) {
      if (!r.passed) failed += " " + r.name + " (" + r.detail + ")";
    }
    report(2, "closed-form oracles", failed.empty() && secs < kOracleSeconds,
           fmt::format("{} values within 1e-6, {:.2f} s{}", results.size(), secs,
                       failed.empty() ? "" : "; failed:" + failed));
  }

  {
    const auto r = ranking_oracle(1000, 20);
    report(3, "ranking oracle equivalence", r.passed, r.detail);
  }

  {
    std::string failed;
    const auto results = protocol_checks();
    for (const auto& r : results) {
      if (!r.passed) failed += " " + r.name + " (" + r.detail + ")";
    }
    report(4, "protocol invariants and privacy", failed.empty(),
           fmt::format("{} checks{}", results.size(), failed.empty() ? "" : "; failed:" + failed));
  }

  {
    const auto causal = causality_check();
    auto cfg = default_preset();
    cfg.repeats = 1;
    cfg.train.rounds = 2;
    cfg.name = "determinism_a";
    const auto a = run_experiment(cfg, root);
    cfg.name = "determinism_b";
    const auto b = run_experiment(cfg, root);
    const auto ha = slurp(a.dir / "seed_0" / "history.jsonl");
    const bool same = !ha.empty() && ha == slurp(b.dir / "seed_0" / "history.jsonl");
    report(5, "causality and determinism", causal.passed && same,
           fmt::format("{}; history files {}", causal.detail, same ? "identical" : "differ"));
  }

  const auto t6 = Clock::now();
  const auto full = run_variant(root, "het060", 0.6, Variant::feddcsr);
  const auto no_cim = run_variant(root, "het060", 0.6, Variant::feddcsr_no_cim);
  const auto no_srd = run_variant(root, "het060", 0.6, Variant::feddcsr_no_srd_cim);
  const auto mono = run_variant(root, "het060", 0.6, Variant::fedavg_monolithic);
  const double secs6 = seconds_since(t6);
  {
    const auto f = mrr_per_seed(full, FusionMode::both);
    const auto c = mrr_per_seed(no_cim, FusionMode::both);
    const auto s = mrr_per_seed(no_srd, FusionMode::both);
    const auto m = mrr_per_seed(mono, FusionMode::both);
    const int w_fc = wins(f, c);
    const int w_cs = wins(c, s);
    int w_fm = 0;
    for (std::size_t i = 0; i < f.size(); ++i) w_fm += f[i] > m[i] ? 1 : 0;
    const bool ordered = mean(f) >= mean(c) && mean(c) >= mean(s) && mean(f) > mean(m);
    const bool seeds_ok = w_fc >= kMinSeedWins && w_cs >= kMinSeedWins && w_fm >= kMinSeedWins;
    report(6, "ablation ordering at heterogeneity 0.6",
           ordered && seeds_ok && secs6 < kTableSeconds,
           fmt::format("mean MRR feddcsr {:.4f}, no_cim {:.4f}, no_srd_cim {:.4f}, "
                       "fedavg_monolithic {:.4f}; seed wins {}/{}/{} of {}; {:.0f} s",
                       mean(f), mean(c), mean(s), mean(m), w_fc, w_cs, w_fm, kSeeds, secs6));
    spdlog::warn("per-seed MRR feddcsr [{}] no_cim [{}] no_srd_cim [{}] fedavg [{}]",
                 fmt_seeds(f), fmt_seeds(c), fmt_seeds(s), fmt_seeds(m));
  }

  {
    const auto both = mrr_per_seed(full, FusionMode::both);
    const auto sh = mrr_per_seed(full, FusionMode::shared);
    const auto ex = mrr_per_seed(full, FusionMode::exclusive);
    int ok = 0;
    for (std::size_t i = 0; i < both.size(); ++i) ok += both[i] >= sh[i] && both[i] >= ex[i] ? 1 : 0;
    report(7, "fusion probing", ok >= kMinSeedWins,
           fmt::format("mean MRR both {:.4f}, shared {:.4f}, exclusive {:.4f}; both best in {} of {}",
                       mean(both), mean(sh), mean(ex), ok, kSeeds));
  }

  {
    const auto f = mean(mrr_per_seed(run_variant(root, "het000", 0.0, Variant::feddcsr), FusionMode::both));
    const auto m = mean(mrr_per_seed(run_variant(root, "het000", 0.0, Variant::fedavg_monolithic),
                                     FusionMode::both));
    const double rel = f > 0 ? std::abs(m - f) / f : 1.0;
    report(8, "homogeneous degeneracy", rel <= kDegeneracyGap,
           fmt::format("mean MRR feddcsr {:.4f}, fedavg_monolithic {:.4f}; relative gap {:.1f}% "
                       "(limit {:.0f}%)",
                       f, m, 100 * rel, 100 * kDegeneracyGap));
  }

  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
