#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedcsr/autodiff.hpp"

namespace fedcsr {

/// Index 0 is the padding token in every domain vocabulary.
inline constexpr int kPadItem = 0;

struct UserSequence {
  std::string user_id;
  std::vector<int> items;
  std::vector<std::int64_t> timestamps;  // empty or same length as items

  bool operator==(const UserSequence&) const = default;
};

/// One client's private interaction data.
///
/// A raw dataset (straight from ingestion) keeps each user's full history in
/// `train` with `valid`/`test` empty; preprocess() produces the split form.
struct DomainDataset {
  std::string domain_name;
  int vocab_size = 1;                  // real items + pad
  std::vector<std::string> item_keys;  // external id of item i at [i - 1]; may be empty
  std::map<std::string, UserSequence> train;
  std::map<std::string, UserSequence> valid;
  std::map<std::string, UserSequence> test;

  [[nodiscard]] std::vector<std::string> users() const;
  /// |D_k|: number of training sequences.
  [[nodiscard]] std::size_t size() const { return train.size(); }
  /// Train, valid and test fragments of `user` concatenated in order.
  [[nodiscard]] UserSequence full_history(const std::string& user) const;

  bool operator==(const DomainDataset&) const = default;
};

struct PreprocessOptions {
  int min_user_interactions = 10;
  int min_item_interactions = 10;
  int min_length = 4;
  int max_length = 16;
  double holdout_fraction = 0.2;
  /// Renumber surviving items 1..n. Off keeps the raw indices and vocabulary.
  bool compact_vocab = true;

  bool operator==(const PreprocessOptions&) const = default;
};

/// Row-normalized, non-negative item relationship matrix.
struct ItemGraph {
  ad::SparseMatrix adjacency;

  [[nodiscard]] int vocab_size() const { return static_cast<int>(adjacency.rows()); }
  [[nodiscard]] double weight(int i, int j) const { return adjacency.coeff(i, j); }
};

struct ScenarioConfig {
  int num_domains = 3;
  int users = 300;
  int shared_factors = 8;
  int exclusive_factors = 8;
  int vocab_per_domain = 200;  // real items per domain
  int min_length = 8;
  int max_length = 16;
  double heterogeneity = 0.6;
  int shared_clusters = 10;
  int exclusive_clusters = 10;
  double concentration = 3.0;  // sharpness of user→cluster preferences
  std::uint64_t seed = 7;

  void validate() const;
  bool operator==(const ScenarioConfig&) const = default;
};

struct IngestStats {
  std::size_t interactions = 0;
  std::size_t malformed_rows = 0;
};

/// Reads `<dir>/<domain>.csv` (user_id,item_id,rating,timestamp) or
/// `<dir>/<domain>.jsonl` for each domain. Users are keyed by the shared id.
std::vector<DomainDataset> ingest_amazon(const std::filesystem::path& dir,
                                         const std::vector<std::string>& domain_names,
                                         std::vector<IngestStats>* stats = nullptr);

DomainDataset ingest_domain_file(const std::filesystem::path& file, const std::string& domain_name,
                                 IngestStats* stats = nullptr);

/// Count filtering to a fixed point, truncation to the most recent items and
/// the chronological train/valid/test split.
DomainDataset preprocess(const DomainDataset& raw, const PreprocessOptions& opts = {});

struct SplitSizes {
  int train = 0;
  int valid = 0;
  int test = 0;
};

/// Holdout = max(2, round(fraction · n)), halved between valid and test
/// (valid gets the smaller half).
SplitSizes split_sizes(int length, double holdout_fraction = 0.2);

ItemGraph build_item_graph(const DomainDataset& data);

/// Latent generative factors behind the synthetic scenario.
class SyntheticWorld {
 public:
  explicit SyntheticWorld(const ScenarioConfig& cfg);

  [[nodiscard]] const ScenarioConfig& config() const { return cfg_; }
  [[nodiscard]] int num_clusters() const { return cfg_.shared_clusters + cfg_.exclusive_clusters; }
  [[nodiscard]] std::string user_id(int user) const;
  /// Cluster membership of `item` in `domain`; clusters [0, shared_clusters)
  /// are identical across domains.
  [[nodiscard]] int cluster_of(int domain, int item) const;

  /// One interaction sequence of `length` items for (user, domain).
  std::vector<int> sample_sequence(int user, int domain, int length, std::mt19937_64& rng) const;

  [[nodiscard]] std::vector<DomainDataset> generate() const;

 private:
  int sample_item(int user, int domain, std::mt19937_64& rng) const;

  ScenarioConfig cfg_;
  int shared_items_ = 0;
  // [domain][cluster] → item list
  std::vector<std::vector<std::vector<int>>> cluster_items_;
  std::vector<std::vector<int>> item_cluster_;  // [domain][item]
  // [user] shared cluster distribution; [domain][user] exclusive distribution
  std::vector<std::vector<double>> shared_pref_;
  std::vector<std::vector<std::vector<double>>> exclusive_pref_;
};

std::vector<DomainDataset> generate_synthetic(const ScenarioConfig& cfg);

nlohmann::json to_json(const DomainDataset& data);
DomainDataset domain_dataset_from_json(const nlohmann::json& j);
void save_dataset(const DomainDataset& data, const std::filesystem::path& file);
DomainDataset load_dataset(const std::filesystem::path& file);

/// Left-pads (or keeps the most recent) items to exactly `seq_len` slots.
std::vector<int> left_pad(const std::vector<int>& items, int seq_len);

}  // namespace fedcsr
