#include "fedcsr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fedcsr/random.hpp"

namespace fedcsr {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::shared:
      return "shared";
    case FusionMode::exclusive:
      return "exclusive";
    case FusionMode::both:
      return "both";
  }
  return "both";
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "shared") return FusionMode::shared;
  if (s == "exclusive") return FusionMode::exclusive;
  if (s == "both") return FusionMode::both;
  throw ConfigError("unknown fusion mode: " + s);
}

std::uint64_t stable_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Matrix predict_scores(const Matrix& zs_last, const Matrix& ze_last, const PredictorParams& theta,
                      const Matrix& item_table, FusionMode mode) {
  switch (mode) {
    case FusionMode::shared:
      return predict_logits(zs_last, theta, item_table);
    case FusionMode::exclusive:
      return predict_logits(ze_last, theta, item_table);
    case FusionMode::both:
      if (zs_last.rows() != ze_last.rows() || zs_last.cols() != ze_last.cols()) {
        throw ShapeError("predict_scores: branch shapes differ");
      }
      return predict_logits(zs_last + ze_last, theta, item_table);
  }
  throw ConfigError("predict_scores: bad fusion mode");
}

std::vector<int> sample_negatives(const std::set<int>& history, int target, int vocab, int n,
                                  std::mt19937_64& rng, bool* fallback) {
  auto excluded = [&](int item, bool use_history) {
    return item == kPadItem || item == target || (use_history && history.contains(item));
  };
  int available = 0;
  for (int i = 1; i < vocab; ++i) available += excluded(i, true) ? 0 : 1;
  bool use_history = true;
  if (available < n) {
    use_history = false;
    if (fallback != nullptr) *fallback = true;
    spdlog::debug("sample_negatives: vocabulary too small for {} negatives; keeping history", n);
  } else if (fallback != nullptr) {
    *fallback = false;
  }
  std::vector<int> pool;
  pool.reserve(static_cast<std::size_t>(vocab));
  for (int i = 1; i < vocab; ++i) {
    if (!excluded(i, use_history)) pool.push_back(i);
  }
  const int take = std::min<int>(n, static_cast<int>(pool.size()));
  // Partial Fisher-Yates: the first `take` slots are a uniform sample.
  for (int i = 0; i < take; ++i) {
    const int j = i + uniform_index(rng, static_cast<int>(pool.size()) - i);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(take));
  return pool;
}

int rank_of_target(std::span<const double> scores, int target, std::span<const int> negatives) {
  const double ts = scores[static_cast<std::size_t>(target)];
  int rank = 1;
  for (int neg : negatives) {
    if (scores[static_cast<std::size_t>(neg)] >= ts) ++rank;
  }
  return rank;
}

RankingMetrics compute_metrics(std::span<const int> ranks, int k) {
  if (ranks.empty()) throw DataError("compute_metrics: no ranks");
  RankingMetrics m;
  for (int r : ranks) {
    if (r < 1) throw std::invalid_argument("compute_metrics: ranks must be >= 1");
    m.mrr += 1.0 / r;
    if (r <= k) {
      m.hr_at_k += 1.0;
      m.ndcg_at_k += 1.0 / std::log2(r + 1.0);
    }
  }
  const auto n = static_cast<double>(ranks.size());
  m.mrr /= n;
  m.hr_at_k /= n;
  m.ndcg_at_k /= n;
  m.count = ranks.size();
  return m;
}

std::vector<EvalInstance> eval_instances(const DomainDataset& data, Split split) {
  std::vector<EvalInstance> out;
  const auto& part = split == Split::valid ? data.valid : data.test;
  for (const auto& [user, frag] : part) {
    std::vector<int> prefix;
    if (auto it = data.train.find(user); it != data.train.end()) prefix = it->second.items;
    if (split == Split::test) {
      if (auto it = data.valid.find(user); it != data.valid.end()) {
        prefix.insert(prefix.end(), it->second.items.begin(), it->second.items.end());
      }
    }
    for (int target : frag.items) {
      EvalInstance inst;
      inst.user_id = user;
      inst.prefix = prefix;
      inst.target = target;
      inst.position = static_cast<int>(prefix.size());
      if (!inst.prefix.empty()) out.push_back(inst);
      prefix.push_back(target);
    }
  }
  return out;
}

std::map<FusionMode, RankingMetrics> evaluate_domain(const ModelView& model,
                                                     const DomainDataset& data, Split split,
                                                     const EvalOptions& opts,
                                                     std::span<const FusionMode> modes) {
  if (model.shared == nullptr || model.predictor == nullptr || model.graph == nullptr) {
    throw std::invalid_argument("evaluate_domain: incomplete model view");
  }
  const auto instances = eval_instances(data, split);
  const int seq_len = model.shared->shape.seq_len;
  const Matrix& item_table = model.exclusive != nullptr ? model.exclusive->tensors.at("item_emb")
                                                        : model.shared->tensors.at("item_emb");
  std::map<FusionMode, std::vector<int>> ranks;
  const std::uint64_t domain_key = stable_hash(data.domain_name);
  std::map<std::string, std::set<int>> history_cache;
  bool warned = false;

  for (std::size_t start = 0; start < instances.size();
       start += static_cast<std::size_t>(opts.batch_size)) {
    const std::size_t end =
        std::min(instances.size(), start + static_cast<std::size_t>(opts.batch_size));
    std::vector<std::vector<int>> seqs;
    for (std::size_t i = start; i < end; ++i) seqs.push_back(instances[i].prefix);
    const auto batch = make_batch(seqs, seq_len);
    const auto last = batch.last_rows();

    auto last_means = [&](const EncoderParams& p) {
      const auto dist = encode(batch, *model.graph, p, false, nullptr);
      Matrix out(static_cast<Eigen::Index>(last.size()), dist.mu.cols());
      for (std::size_t i = 0; i < last.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = dist.mu.row(last[i]);
      }
      return out;
    };
    const Matrix zs = last_means(*model.shared);
    const Matrix ze = model.exclusive != nullptr ? last_means(*model.exclusive)
                                                 : Matrix::Zero(zs.rows(), zs.cols());

    std::vector<std::vector<int>> negatives;
    for (std::size_t i = start; i < end; ++i) {
      const auto& inst = instances[i];
      auto hit = history_cache.find(inst.user_id);
      if (hit == history_cache.end()) {
        const auto h = data.full_history(inst.user_id);
        hit = history_cache.emplace(inst.user_id, std::set<int>(h.items.begin(), h.items.end()))
                  .first;
      }
      std::mt19937_64 rng(derive_seed(opts.seed, {domain_key, stable_hash(inst.user_id),
                                                  static_cast<std::uint64_t>(inst.position)}));
      bool fallback = false;
      negatives.push_back(
          sample_negatives(hit->second, inst.target, data.vocab_size, opts.negatives, rng, &fallback));
      if (fallback && !warned) {
        spdlog::warn("{}: vocabulary of {} cannot supply {} history-free negatives",
                     data.domain_name, data.vocab_size, opts.negatives);
        warned = true;
      }
    }

    for (FusionMode mode : modes) {
      Matrix scores;
      if (model.exclusive == nullptr) {
        scores = predict_scores(zs, ze, *model.predictor, item_table, FusionMode::shared);
      } else {
        scores = predict_scores(zs, ze, *model.predictor, item_table, mode);
      }
      auto& out = ranks[mode];
      for (std::size_t i = start; i < end; ++i) {
        const auto row = static_cast<Eigen::Index>(i - start);
        const std::span<const double> s(scores.row(row).data(),
                                        static_cast<std::size_t>(scores.cols()));
        out.push_back(rank_of_target(s, instances[i].target, negatives[i - start]));
      }
    }
  }

  std::map<FusionMode, RankingMetrics> result;
  for (FusionMode mode : modes) {
    const auto& r = ranks[mode];
    result[mode] = r.empty() ? RankingMetrics{} : compute_metrics(r, opts.k);
  }
  return result;
}

RankingMetrics average_metrics(const std::map<std::string, RankingMetrics>& per_domain) {
  RankingMetrics avg;
  if (per_domain.empty()) return avg;
  for (const auto& [name, m] : per_domain) {
    avg.mrr += m.mrr;
    avg.hr_at_k += m.hr_at_k;
    avg.ndcg_at_k += m.ndcg_at_k;
    avg.count += m.count;
  }
  const auto n = static_cast<double>(per_domain.size());
  avg.mrr /= n;
  avg.hr_at_k /= n;
  avg.ndcg_at_k /= n;
  return avg;
}

nlohmann::json to_json(const RankingMetrics& m) {
  return {{"mrr", m.mrr}, {"hr_at_k", m.hr_at_k}, {"ndcg_at_k", m.ndcg_at_k}, {"count", m.count}};
}

namespace {

RankingMetrics metrics_from_json(const nlohmann::json& j) {
  RankingMetrics m;
  m.mrr = j.at("mrr").get<double>();
  m.hr_at_k = j.at("hr_at_k").get<double>();
  m.ndcg_at_k = j.at("ndcg_at_k").get<double>();
  m.count = j.value("count", std::size_t{0});
  return m;
}

std::string fmt_metric(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, m] : r.per_domain) per[name] = to_json(m);
  return {{"fusion_mode", to_string(r.fusion_mode)},
          {"k", r.k},
          {"per_domain", per},
          {"average", to_json(r.average)}};
}

EvalResult eval_result_from_json(const nlohmann::json& j) {
  EvalResult r;
  r.fusion_mode = parse_fusion_mode(j.at("fusion_mode").get<std::string>());
  r.k = j.at("k").get<int>();
  for (const auto& [name, m] : j.at("per_domain").items()) r.per_domain[name] = metrics_from_json(m);
  r.average = metrics_from_json(j.at("average"));
  return r;
}

std::string eval_csv_header() { return "round,split,fusion_mode,domain,mrr,hr_at_k,ndcg_at_k,count,k\n"; }

std::string eval_csv_rows(const EvalResult& r, const std::string& split, int round) {
  std::ostringstream os;
  auto row = [&](const std::string& domain, const RankingMetrics& m) {
    os << round << ',' << split << ',' << to_string(r.fusion_mode) << ',' << domain << ','
       << fmt_metric(m.mrr) << ',' << fmt_metric(m.hr_at_k) << ',' << fmt_metric(m.ndcg_at_k)
       << ',' << m.count << ',' << r.k << '\n';
  };
  for (const auto& [name, m] : r.per_domain) row(name, m);
  row("Avg", r.average);
  return os.str();
}

}  // namespace fedcsr
