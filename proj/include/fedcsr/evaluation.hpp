#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedcsr/dataset.hpp"
#include "fedcsr/encoder.hpp"
#include "fedcsr/srd.hpp"

namespace fedcsr {

enum class FusionMode { shared, exclusive, both };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& s);
inline constexpr FusionMode kAllFusionModes[] = {FusionMode::shared, FusionMode::exclusive,
                                                 FusionMode::both};

struct RankingMetrics {
  double mrr = 0.0;
  double hr_at_k = 0.0;
  double ndcg_at_k = 0.0;
  std::size_t count = 0;
};

struct EvalResult {
  std::map<std::string, RankingMetrics> per_domain;
  RankingMetrics average;  // unweighted mean over domains
  FusionMode fusion_mode = FusionMode::both;
  int k = 10;
};

/// Logits over the vocabulary from the last-position representations
/// (n×d each); `ze_last` is ignored for FusionMode::shared and `zs_last` for
/// FusionMode::exclusive.
Matrix predict_scores(const Matrix& zs_last, const Matrix& ze_last, const PredictorParams& theta,
                      const Matrix& item_table, FusionMode mode);

/// `n` distinct items drawn uniformly from [1, vocab) excluding the target
/// and `history`. With too small a vocabulary the history exclusion is
/// dropped (and `fallback` set); if even that cannot supply `n` items all
/// remaining items are returned.
std::vector<int> sample_negatives(const std::set<int>& history, int target, int vocab, int n,
                                  std::mt19937_64& rng, bool* fallback = nullptr);

/// 1 + number of negatives scoring at least as high as the target.
int rank_of_target(std::span<const double> scores, int target, std::span<const int> negatives);

RankingMetrics compute_metrics(std::span<const int> ranks, int k);

enum class Split { valid, test };

struct EvalInstance {
  std::string user_id;
  std::vector<int> prefix;  // every item before the target, oldest first
  int target = 0;
  int position = 0;  // index of the target within the user's full history
};

/// One next-item instance per held-out item of `split`.
std::vector<EvalInstance> eval_instances(const DomainDataset& data, Split split);

/// Non-owning view of a client's prediction path. `exclusive` is null for
/// single-branch models; logits use the exclusive item table when present.
struct ModelView {
  const EncoderParams* shared = nullptr;
  const EncoderParams* exclusive = nullptr;
  const PredictorParams* predictor = nullptr;
  const ItemGraph* graph = nullptr;
};

struct EvalOptions {
  int k = 10;
  int negatives = 999;
  std::uint64_t seed = 0;
  int batch_size = 256;
};

/// Metrics for each requested fusion mode on one domain's split.
std::map<FusionMode, RankingMetrics> evaluate_domain(const ModelView& model,
                                                     const DomainDataset& data, Split split,
                                                     const EvalOptions& opts,
                                                     std::span<const FusionMode> modes);

/// Unweighted mean over domains.
RankingMetrics average_metrics(const std::map<std::string, RankingMetrics>& per_domain);

nlohmann::json to_json(const RankingMetrics& m);
nlohmann::json to_json(const EvalResult& r);
EvalResult eval_result_from_json(const nlohmann::json& j);

/// Header + one row per domain (plus "Avg") for the given result.
std::string eval_csv_header();
std::string eval_csv_rows(const EvalResult& r, const std::string& split, int round);

std::uint64_t stable_hash(const std::string& s);

}  // namespace fedcsr
