#include "fedcsr/experiment.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fedcsr/plot.hpp"
#include "fedcsr/random.hpp"

#ifndef FEDCSR_VERSION
#define FEDCSR_VERSION "unknown"
#endif

namespace fedcsr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads an object field by field; unknown keys are config errors so typos
// never silently fall back to defaults.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("{}.{}: {}", path_, key, e.what()));
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return nullptr;
    return &j_.at(key);
  }

  [[nodiscard]] std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key " + path_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json scenario_json(const ScenarioConfig& s) {
  return {{"num_domains", s.num_domains},
          {"users", s.users},
          {"shared_factors", s.shared_factors},
          {"exclusive_factors", s.exclusive_factors},
          {"vocab_per_domain", s.vocab_per_domain},
          {"min_length", s.min_length},
          {"max_length", s.max_length},
          {"heterogeneity", s.heterogeneity},
          {"shared_clusters", s.shared_clusters},
          {"exclusive_clusters", s.exclusive_clusters},
          {"concentration", s.concentration},
          {"seed", s.seed}};
}

ScenarioConfig scenario_from(const json& j, const std::string& path) {
  ScenarioConfig s;
  Reader r(j, path);
  r.get("num_domains", s.num_domains);
  r.get("users", s.users);
  r.get("shared_factors", s.shared_factors);
  r.get("exclusive_factors", s.exclusive_factors);
  r.get("vocab_per_domain", s.vocab_per_domain);
  r.get("min_length", s.min_length);
  r.get("max_length", s.max_length);
  r.get("heterogeneity", s.heterogeneity);
  r.get("shared_clusters", s.shared_clusters);
  r.get("exclusive_clusters", s.exclusive_clusters);
  r.get("concentration", s.concentration);
  r.get("seed", s.seed);
  r.finish();
  return s;
}

json preprocess_json(const PreprocessOptions& p) {
  return {{"min_user_interactions", p.min_user_interactions},
          {"min_item_interactions", p.min_item_interactions},
          {"min_length", p.min_length},
          {"max_length", p.max_length},
          {"holdout_fraction", p.holdout_fraction},
          {"compact_vocab", p.compact_vocab}};
}

PreprocessOptions preprocess_from(const json& j, const std::string& path, PreprocessOptions p) {
  Reader r(j, path);
  r.get("min_user_interactions", p.min_user_interactions);
  r.get("min_item_interactions", p.min_item_interactions);
  r.get("min_length", p.min_length);
  r.get("max_length", p.max_length);
  r.get("holdout_fraction", p.holdout_fraction);
  r.get("compact_vocab", p.compact_vocab);
  r.finish();
  return p;
}

json weights_json(const LossWeights& w) {
  return {{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}, {"lambda", w.lambda}, {"tau", w.tau}};
}

LossWeights weights_from(const json& j, const std::string& path) {
  LossWeights w;
  Reader r(j, path);
  r.get("alpha", w.alpha);
  r.get("beta", w.beta);
  r.get("gamma", w.gamma);
  r.get("lambda", w.lambda);
  r.get("tau", w.tau);
  r.finish();
  return w;
}

json model_json(const ModelConfig& m) {
  return {{"dim", m.dim},
          {"seq_len", m.seq_len},
          {"gnn_layers", m.gnn_layers},
          {"attn_layers", m.attn_layers},
          {"heads", m.heads},
          {"dual_branch", m.dual_branch},
          {"recon_on_shared", m.recon_on_shared}};
}

ModelConfig model_from(const json& j, const std::string& path) {
  ModelConfig m;
  Reader r(j, path);
  r.get("dim", m.dim);
  r.get("seq_len", m.seq_len);
  r.get("gnn_layers", m.gnn_layers);
  r.get("attn_layers", m.attn_layers);
  r.get("heads", m.heads);
  r.get("dual_branch", m.dual_branch);
  r.get("recon_on_shared", m.recon_on_shared);
  r.finish();
  return m;
}

json train_json(const TrainConfig& t) {
  return {{"rounds", t.rounds},
          {"local_epochs", t.local_epochs},
          {"patience", t.patience},
          {"batch_size", t.batch_size},
          {"lr", t.lr},
          {"dropout", t.dropout},
          {"weights", weights_json(t.weights)},
          {"eval_k", t.eval_k},
          {"negatives_per_eval", t.negatives_per_eval},
          {"seed", t.seed},
          {"model", model_json(t.model)},
          {"aggregate", t.aggregate}};
}

TrainConfig train_from(const json& j, const std::string& path) {
  TrainConfig t;
  Reader r(j, path);
  r.get("rounds", t.rounds);
  r.get("local_epochs", t.local_epochs);
  r.get("patience", t.patience);
  r.get("batch_size", t.batch_size);
  r.get("lr", t.lr);
  r.get("dropout", t.dropout);
  if (const auto* w = r.child("weights")) t.weights = weights_from(*w, r.path("weights"));
  r.get("eval_k", t.eval_k);
  r.get("negatives_per_eval", t.negatives_per_eval);
  r.get("seed", t.seed);
  if (const auto* m = r.child("model")) t.model = model_from(*m, r.path("model"));
  r.get("aggregate", t.aggregate);
  r.finish();
  return t;
}

double& weight_ref(LossWeights& w, const std::string& name) {
  if (name == "alpha") return w.alpha;
  if (name == "beta") return w.beta;
  if (name == "gamma") return w.gamma;
  if (name == "lambda") return w.lambda;
  if (name == "tau") return w.tau;
  throw ConfigError("sweep parameter must be one of alpha, beta, gamma, lambda, tau (got '" + name + "')");
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << text;
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + file.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json read_json(const fs::path& file) {
  try {
    return json::parse(read_text(file));
  } catch (const json::parse_error& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

std::string seed_dir_name(std::size_t i) { return fmt::format("seed_{}", i); }

std::string sweep_dir_name(const std::string& parameter, double v) {
  return fmt::format("{}_{}", parameter, v);
}

// ------------------------------------------------------------------ report

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

std::string pm(const MeanStd& m) { return fmt::format("{:.4f} ± {:.4f}", m.mean, m.std); }

struct RunArtifacts {
  json config;
  json summary;
};

RunArtifacts load_run(const fs::path& dir) {
  std::vector<std::string> missing;
  for (const char* f : {"config.json", "seeds.json", "VERSION", "summary.json"}) {
    if (!fs::exists(dir / f)) missing.push_back((dir / f).string());
  }
  if (missing.empty()) {
    const auto seeds = read_json(dir / "seeds.json");
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      for (const char* f : {"history.jsonl", "valid.csv", "test.csv"}) {
        const auto p = dir / seed_dir_name(i) / f;
        if (!fs::exists(p)) missing.push_back(p.string());
      }
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing run artifacts:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw ConfigError(msg);
  }
  return {read_json(dir / "config.json"), read_json(dir / "summary.json")};
}

/// (domain → metric values over seeds) for one fusion mode.
std::map<std::string, std::vector<RankingMetrics>> per_domain_over_seeds(const json& summary,
                                                                          FusionMode mode) {
  std::map<std::string, std::vector<RankingMetrics>> out;
  for (const auto& s : summary.at("seeds")) {
    const auto r = eval_result_from_json(s.at("test").at(to_string(mode)));
    for (const auto& [d, m] : r.per_domain) out[d].push_back(m);
    out["Avg"].push_back(r.average);
  }
  return out;
}

std::vector<double> pick(const std::vector<RankingMetrics>& ms, double RankingMetrics::*field) {
  std::vector<double> out;
  for (const auto& m : ms) out.push_back(m.*field);
  return out;
}

std::vector<fs::path> report_run(const fs::path& dir) {
  const auto art = load_run(dir);
  const auto& summary = art.summary;
  std::vector<fs::path> written;

  std::ostringstream md;
  md << "# " << summary.at("name").get<std::string>() << "\n\n";
  md << "Variant: `" << summary.at("variant").get<std::string>() << "`, "
     << summary.at("seeds").size() << " seed(s), version `" << read_text(dir / "VERSION") << "`.\n\n";
  md << "## Test metrics (fused representations, mean ± std over seeds)\n\n";
  md << "| Domain | MRR | HR@10 | NDCG@10 |\n|---|---|---|---|\n";
  const auto both = per_domain_over_seeds(summary, FusionMode::both);
  auto emit_row = [&](const std::string& d, const std::vector<RankingMetrics>& ms) {
    md << "| " << d << " | " << pm(mean_std(pick(ms, &RankingMetrics::mrr))) << " | "
       << pm(mean_std(pick(ms, &RankingMetrics::hr_at_k))) << " | "
       << pm(mean_std(pick(ms, &RankingMetrics::ndcg_at_k))) << " |\n";
  };
  for (const auto& [d, ms] : both) {
    if (d != "Avg") emit_row(d, ms);
  }
  emit_row("Avg", both.at("Avg"));

  md << "\n## Representation fusion probing (average test MRR)\n\n";
  md << "| Representation | MRR | NDCG@10 |\n|---|---|---|\n";
  std::vector<std::string> labels;
  std::vector<double> values;
  std::vector<double> errors;
  for (auto mode : kAllFusionModes) {
    const auto avg = per_domain_over_seeds(summary, mode).at("Avg");
    const auto mrr = mean_std(pick(avg, &RankingMetrics::mrr));
    md << "| " << to_string(mode) << " | " << pm(mrr) << " | "
       << pm(mean_std(pick(avg, &RankingMetrics::ndcg_at_k))) << " |\n";
    labels.push_back(to_string(mode));
    values.push_back(mrr.mean);
    errors.push_back(mrr.std);
  }

  md << "\n## Seeds\n\n| Seed | Best round | Rounds run | Messages | Test MRR |\n|---|---|---|---|---|\n";
  for (const auto& s : summary.at("seeds")) {
    md << "| " << s.at("seed").get<std::uint64_t>() << " | " << s.at("best_round").get<int>() << " | "
       << s.at("rounds_run").get<int>() << " | " << s.at("messages_exchanged").get<std::size_t>()
       << " | "
       << fmt::format("{:.4f}", s.at("test").at("both").at("average").at("mrr").get<double>())
       << " |\n";
  }
  md << "\nPlots: `valid_mrr.svg`, `fusion.svg`.\n";
  write_text(dir / "report.md", md.str());
  written.push_back(dir / "report.md");

  std::ostringstream csv;
  csv << "seed_index,seed,fusion_mode,domain,mrr,hr_at_k,ndcg_at_k,count\n";
  std::size_t idx = 0;
  for (const auto& s : summary.at("seeds")) {
    for (auto mode : kAllFusionModes) {
      const auto r = eval_result_from_json(s.at("test").at(to_string(mode)));
      auto row = [&](const std::string& d, const RankingMetrics& m) {
        csv << idx << ',' << s.at("seed").get<std::uint64_t>() << ',' << to_string(mode) << ',' << d
            << ',' << fmt::format("{:.10g},{:.10g},{:.10g}", m.mrr, m.hr_at_k, m.ndcg_at_k) << ','
            << m.count << '\n';
      };
      for (const auto& [d, m] : r.per_domain) row(d, m);
      row("Avg", r.average);
    }
    ++idx;
  }
  write_text(dir / "metrics.csv", csv.str());
  written.push_back(dir / "metrics.csv");

  std::vector<plot::Series> curves;
  idx = 0;
  for (const auto& s : summary.at("seeds")) {
    plot::Series series;
    series.name = fmt::format("seed {}", idx++);
    const auto& curve = s.at("valid_curve");
    for (std::size_t r = 0; r < curve.size(); ++r) {
      series.x.push_back(static_cast<double>(r + 1));
      series.y.push_back(curve[r].get<double>());
    }
    curves.push_back(std::move(series));
  }
  write_text(dir / "valid_mrr.svg",
             plot::line_chart({"Validation MRR per round", "round", "avg MRR"}, curves));
  written.push_back(dir / "valid_mrr.svg");
  write_text(dir / "fusion.svg",
             plot::bar_chart({"Representation fusion (test MRR)", "representation", "avg MRR"},
                             labels, values, errors));
  written.push_back(dir / "fusion.svg");
  return written;
}

std::vector<fs::path> report_sweep(const fs::path& dir) {
  const auto sweep = read_json(dir / "sweep.json");
  const auto parameter = sweep.at("parameter").get<std::string>();
  std::vector<std::string> missing;
  for (const auto& run : sweep.at("runs")) {
    if (!fs::exists(dir / run.get<std::string>() / "summary.json")) {
      missing.push_back((dir / run.get<std::string>() / "summary.json").string());
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing sweep artifacts:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw ConfigError(msg);
  }

  std::vector<fs::path> written;
  std::vector<double> xs;
  std::vector<MeanStd> mrr;
  std::vector<MeanStd> hr;
  std::vector<MeanStd> ndcg;
  const auto& values = sweep.at("values");
  for (std::size_t i = 0; i < values.size(); ++i) {
    const fs::path sub = dir / sweep.at("runs")[i].get<std::string>();
    auto sub_files = report_run(sub);
    written.insert(written.end(), sub_files.begin(), sub_files.end());
    const auto avg = per_domain_over_seeds(read_json(sub / "summary.json"), FusionMode::both).at("Avg");
    xs.push_back(values[i].get<double>());
    mrr.push_back(mean_std(pick(avg, &RankingMetrics::mrr)));
    hr.push_back(mean_std(pick(avg, &RankingMetrics::hr_at_k)));
    ndcg.push_back(mean_std(pick(avg, &RankingMetrics::ndcg_at_k)));
  }

  std::ostringstream md;
  md << "# Sweep over " << parameter << "\n\n";
  md << "| " << parameter << " | MRR | HR@10 | NDCG@10 |\n|---|---|---|---|\n";
  std::ostringstream csv;
  csv << parameter << ",mrr_mean,mrr_std,hr_mean,hr_std,ndcg_mean,ndcg_std\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    md << "| " << fmt::format("{}", xs[i]) << " | " << pm(mrr[i]) << " | " << pm(hr[i]) << " | "
       << pm(ndcg[i]) << " |\n";
    csv << fmt::format("{},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g}\n", xs[i], mrr[i].mean,
                       mrr[i].std, hr[i].mean, hr[i].std, ndcg[i].mean, ndcg[i].std);
  }
  md << "\nPlots: `sweep_mrr.svg`, `sweep_hr.svg`, `sweep_ndcg.svg`.\n";
  write_text(dir / "report.md", md.str());
  write_text(dir / "metrics.csv", csv.str());
  written.push_back(dir / "report.md");
  written.push_back(dir / "metrics.csv");

  auto curve = [&](const char* file, const char* metric, const std::vector<MeanStd>& ms) {
    plot::Series s{metric, xs, {}};
    for (const auto& m : ms) s.y.push_back(m.mean);
    write_text(dir / file, plot::line_chart({fmt::format("{} vs {}", metric, parameter), parameter,
                                             metric},
                                            {s}));
    written.push_back(dir / file);
  };
  curve("sweep_mrr.svg", "MRR", mrr);
  curve("sweep_hr.svg", "HR@10", hr);
  curve("sweep_ndcg.svg", "NDCG@10", ndcg);
  return written;
}

}  // namespace

json to_json(const TrainConfig& cfg) { return train_json(cfg); }

// ------------------------------------------------------------------ config

std::string to_string(Variant v) {
  switch (v) {
    case Variant::feddcsr:
      return "feddcsr";
    case Variant::feddcsr_no_cim:
      return "feddcsr_no_cim";
    case Variant::feddcsr_no_srd_cim:
      return "feddcsr_no_srd_cim";
    case Variant::local_only:
      return "local_only";
    case Variant::fedavg_monolithic:
      return "fedavg_monolithic";
  }
  return "feddcsr";
}

Variant parse_variant(const std::string& s) {
  for (auto v : kAllVariants) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + s +
                    "' (expected feddcsr, feddcsr_no_cim, feddcsr_no_srd_cim, local_only or "
                    "fedavg_monolithic)");
}

void ExperimentConfig::validate() const {
  if (synthetic.has_value() == amazon.has_value()) {
    throw ConfigError("experiment: exactly one scenario source (synthetic or amazon) is required");
  }
  if (repeats < 1) throw ConfigError("experiment: repeats must be >= 1");
  if (name.empty() || name.find('/') != std::string::npos) {
    throw ConfigError("experiment: name must be a non-empty path component");
  }
  if (synthetic) synthetic->validate();
  if (amazon && amazon->domains.empty()) throw ConfigError("experiment: amazon.domains is empty");
  apply_variant(train, variant).validate();
  if (sweep) {
    LossWeights probe = train.weights;
    weight_ref(probe, sweep->parameter);
    if (sweep->values.empty()) throw ConfigError("experiment: sweep.values is empty");
    for (double v : sweep->values) {
      LossWeights w = train.weights;
      weight_ref(w, sweep->parameter) = v;
      w.validate();
    }
  }
}

json to_json(const ExperimentConfig& cfg) {
  json scenario = json::object();
  if (cfg.synthetic) scenario["synthetic"] = scenario_json(*cfg.synthetic);
  if (cfg.amazon) {
    scenario["amazon"] = {{"dir", cfg.amazon->dir.string()}, {"domains", cfg.amazon->domains}};
  }
  json j{{"name", cfg.name},
         {"scenario", scenario},
         {"preprocess", preprocess_json(cfg.preprocess)},
         {"train", train_json(cfg.train)},
         {"variant", to_string(cfg.variant)},
         {"output_dir", cfg.output_dir.string()},
         {"repeats", cfg.repeats}};
  if (cfg.sweep) j["sweep"] = {{"parameter", cfg.sweep->parameter}, {"values", cfg.sweep->values}};
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg;
  Reader r(j, "config");
  r.get("name", cfg.name);
  if (const auto* s = r.child("scenario")) {
    Reader sr(*s, "config.scenario");
    if (const auto* syn = sr.child("synthetic")) cfg.synthetic = scenario_from(*syn, sr.path("synthetic"));
    if (const auto* am = sr.child("amazon")) {
      Reader ar(*am, sr.path("amazon"));
      AmazonSource src;
      std::string dir;
      ar.get("dir", dir);
      ar.get("domains", src.domains);
      ar.finish();
      src.dir = dir;
      cfg.amazon = src;
    }
    sr.finish();
  }
  // Synthetic worlds carry no long tail to filter and share the item-id
  // layout across domains, so their default preprocessing keeps everything.
  if (cfg.synthetic && !cfg.amazon) {
    cfg.preprocess.min_user_interactions = 0;
    cfg.preprocess.min_item_interactions = 0;
    cfg.preprocess.compact_vocab = false;
  }
  if (const auto* p = r.child("preprocess")) {
    cfg.preprocess = preprocess_from(*p, "config.preprocess", cfg.preprocess);
  }
  if (const auto* t = r.child("train")) cfg.train = train_from(*t, "config.train");
  std::string variant = to_string(cfg.variant);
  r.get("variant", variant);
  cfg.variant = parse_variant(variant);
  if (const auto* s = r.child("sweep")) {
    Reader sw(*s, "config.sweep");
    SweepSpec spec;
    sw.get("parameter", spec.parameter);
    sw.get("values", spec.values);
    sw.finish();
    cfg.sweep = spec;
  }
  std::string out = cfg.output_dir.string();
  r.get("output_dir", out);
  cfg.output_dir = out;
  r.get("repeats", cfg.repeats);
  r.finish();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& file) {
  auto cfg = experiment_config_from_json(read_json(file));
  cfg.validate();
  return cfg;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like path.to.key=value (got '" + assignment + "')");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override path has an empty component: " + path);
    if (!node->is_object()) throw ConfigError("override path crosses a non-object at '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

ExperimentConfig default_preset() {
  ExperimentConfig cfg;
  cfg.name = "synthetic_default";
  cfg.synthetic = ScenarioConfig{};
  cfg.preprocess.min_user_interactions = 0;
  cfg.preprocess.min_item_interactions = 0;
  cfg.preprocess.compact_vocab = false;
  cfg.train.rounds = 15;
  cfg.train.local_epochs = 3;
  cfg.train.patience = 5;
  cfg.train.batch_size = 32;
  cfg.train.lr = 0.001;
  cfg.train.dropout = 0.3;
  cfg.train.negatives_per_eval = 99;
  cfg.train.seed = 2024;
  cfg.repeats = 5;
  return cfg;
}

TrainConfig apply_variant(TrainConfig cfg, Variant v) {
  switch (v) {
    case Variant::feddcsr:
      break;
    case Variant::feddcsr_no_cim:
      cfg.weights.lambda = 0.0;
      break;
    case Variant::feddcsr_no_srd_cim:
      // Plain per-branch ELBO: no similarity, exclusive reconstruction or
      // contrastive term.
      cfg.weights.lambda = 0.0;
      cfg.weights.beta = 0.0;
      cfg.weights.gamma = 0.0;
      break;
    case Variant::local_only:
      cfg.aggregate = false;
      break;
    case Variant::fedavg_monolithic:
      cfg.model.dual_branch = false;
      break;
  }
  return cfg;
}

std::vector<std::uint64_t> repeat_seeds(std::uint64_t base, int repeats) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < repeats; ++i) {
    out.push_back(derive_seed(base, {0x5EED, static_cast<std::uint64_t>(i)}));
  }
  return out;
}

std::vector<DomainDataset> build_datasets(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  std::vector<DomainDataset> raw;
  if (cfg.synthetic) {
    ScenarioConfig sc = *cfg.synthetic;
    sc.seed = derive_seed(sc.seed, {0xDA7A, run_seed});
    raw = generate_synthetic(sc);
  } else {
    raw = ingest_amazon(cfg.amazon->dir, cfg.amazon->domains);
  }
  std::vector<DomainDataset> out;
  out.reserve(raw.size());
  for (const auto& d : raw) out.push_back(preprocess(d, cfg.preprocess));
  return out;
}

SeedOutcome run_single(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  TrainConfig train = apply_variant(cfg.train, cfg.variant);
  train.seed = run_seed;
  auto datasets = build_datasets(cfg, run_seed);
  std::vector<ClientState> clients;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    clients.push_back(make_client(std::move(datasets[i]), train, derive_seed(run_seed, {0xC11E, i})));
  }
  SeedOutcome out;
  out.seed = run_seed;
  out.federated = run_federated(clients, train);
  out.test = evaluate_clients(clients, out.federated.best, train, Split::test);
  return out;
}

ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const fs::path& root) {
  cfg.validate();
  if (cfg.sweep) throw ConfigError("run_experiment: config has a sweep; use run_sweep");
  ExperimentOutcome outcome;
  outcome.dir = root / cfg.name;
  fs::create_directories(outcome.dir);
  const auto seeds = repeat_seeds(cfg.train.seed, cfg.repeats);

  write_text(outcome.dir / "config.json", to_json(cfg).dump(2) + "\n");
  write_text(outcome.dir / "effective_train.json",
             train_json(apply_variant(cfg.train, cfg.variant)).dump(2) + "\n");
  write_text(outcome.dir / "seeds.json", json(seeds).dump() + "\n");
  write_text(outcome.dir / "VERSION", version_stamp());

  json summary{{"name", cfg.name}, {"variant", to_string(cfg.variant)}, {"seeds", json::array()}};
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    spdlog::info("{}: seed {}/{} ({})", cfg.name, i + 1, seeds.size(), seeds[i]);
    auto result = run_single(cfg, seeds[i]);
    const fs::path sd = outcome.dir / seed_dir_name(i);
    fs::create_directories(sd);

    std::ostringstream history;
    for (const auto& rec : result.federated.history) history << to_json(rec).dump() << '\n';
    write_text(sd / "history.jsonl", history.str());

    std::ostringstream valid;
    valid << eval_csv_header();
    for (std::size_t r = 0; r < result.federated.valid_results.size(); ++r) {
      for (const auto& [mode, er] : result.federated.valid_results[r]) {
        valid << eval_csv_rows(er, "valid", static_cast<int>(r));
      }
    }
    write_text(sd / "valid.csv", valid.str());

    std::ostringstream test;
    test << eval_csv_header();
    json test_json = json::object();
    for (const auto& [mode, er] : result.test) {
      test << eval_csv_rows(er, "test", result.federated.best_round);
      test_json[to_string(mode)] = to_json(er);
      write_text(sd / fmt::format("test_{}.json", to_string(mode)), to_json(er).dump(2) + "\n");
    }
    write_text(sd / "test.csv", test.str());

    summary["seeds"].push_back({{"seed", seeds[i]},
                                {"best_round", result.federated.best_round},
                                {"rounds_run", result.federated.rounds_run},
                                {"messages_exchanged", result.federated.messages_exchanged},
                                {"valid_curve", result.federated.avg_valid_mrr},
                                {"test", test_json}});
    spdlog::info("{}: seed {} test MRR (both) {:.4f}", cfg.name, i,
                 result.test.at(FusionMode::both).average.mrr);
    outcome.seeds.push_back(std::move(result));
  }
  write_text(outcome.dir / "summary.json", summary.dump(2) + "\n");
  emit_report(outcome.dir);
  return outcome;
}

SweepOutcome run_sweep(const ExperimentConfig& cfg, const fs::path& root) {
  cfg.validate();
  if (!cfg.sweep) throw ConfigError("run_sweep: config has no sweep section");
  SweepOutcome outcome;
  outcome.dir = root / cfg.name;
  fs::create_directories(outcome.dir);
  json runs = json::array();
  for (double v : cfg.sweep->values) {
    ExperimentConfig sub = cfg;
    sub.sweep.reset();
    sub.name = sweep_dir_name(cfg.sweep->parameter, v);
    weight_ref(sub.train.weights, cfg.sweep->parameter) = v;
    outcome.runs.push_back(run_experiment(sub, outcome.dir));
    outcome.values.push_back(v);
    runs.push_back(sub.name);
  }
  write_text(outcome.dir / "config.json", to_json(cfg).dump(2) + "\n");
  write_text(outcome.dir / "sweep.json", json{{"parameter", cfg.sweep->parameter},
                                               {"values", cfg.sweep->values},
                                               {"runs", runs}}
                                              .dump(2) + "\n");
  emit_report(outcome.dir);
  return outcome;
}

fs::path output_root(const fs::path& fallback) {
  if (const char* env = std::getenv("FEDCSR_OUTPUT_ROOT"); env != nullptr && *env != '\0') {
    return env;
  }
  return fallback;
}

std::vector<fs::path> emit_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("no artifact directory at " + dir.string());
  if (fs::exists(dir / "sweep.json")) return report_sweep(dir);
  return report_run(dir);
}

std::string version_stamp() { return FEDCSR_VERSION; }

}  // namespace fedcsr
