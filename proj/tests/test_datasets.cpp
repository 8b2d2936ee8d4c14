#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fedcsr/dataset.hpp"

using namespace fedcsr;
namespace fs = std::filesystem;

namespace {

// Raw dataset with one user per entry of `lengths`. Every user's sequence uses
// items 1..len so the low-numbered items are popular enough to pass filters.
DomainDataset raw_dataset(const std::vector<std::pair<std::string, std::vector<int>>>& users,
                          int vocab) {
  DomainDataset d;
  d.domain_name = "toy";
  d.vocab_size = vocab;
  for (const auto& [id, items] : users) d.train[id] = UserSequence{id, items, {}};
  return d;
}

std::vector<int> iota_items(int n, int first = 1) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), first);
  return v;
}

PreprocessOptions no_count_filters() {
  PreprocessOptions o;
  o.min_user_interactions = 0;
  o.min_item_interactions = 0;
  o.compact_vocab = false;
  return o;
}

fs::path temp_file(const std::string& name, const std::string& content) {
  const auto path = fs::temp_directory_path() / ("fedcsr_test_" + name);
  std::ofstream(path) << content;
  return path;
}

}  // namespace

TEST_CASE("preprocess drops a user with 3 interactions") {
  auto raw = raw_dataset({{"short", {1, 2, 3}}, {"long", iota_items(10)}}, 11);
  const auto out = preprocess(raw, no_count_filters());
  CHECK(out.users() == std::vector<std::string>{"long"});
}

TEST_CASE("preprocess keeps the most recent 16 of 20 items") {
  auto raw = raw_dataset({{"u", iota_items(20)}}, 21);
  const auto out = preprocess(raw, no_count_filters());
  const auto h = out.full_history("u");
  CHECK(h.items == iota_items(16, 5));
}

TEST_CASE("ten distinct popular items split 8/1/1") {
  // Eleven users share items 1..10 so every item reaches the 10-count filter.
  std::vector<std::pair<std::string, std::vector<int>>> users;
  for (int u = 0; u < 11; ++u) users.push_back({"u" + std::to_string(u), iota_items(10)});
  PreprocessOptions opts;
  opts.compact_vocab = false;
  const auto out = preprocess(raw_dataset(users, 11), opts);
  REQUIRE(out.users().size() == 11);
  CHECK(out.train.at("u0").items == iota_items(8));
  CHECK(out.valid.at("u0").items == std::vector<int>{9});
  CHECK(out.test.at("u0").items == std::vector<int>{10});
  const auto s = split_sizes(10);
  CHECK(s.train == 8);
  CHECK(s.valid == 1);
  CHECK(s.test == 1);
}

TEST_CASE("count filtering iterates to a fixed point") {
  // Item 11 appears only for user "rare"; removing it drops "rare" below 10,
  // which in turn lowers other counts.
  std::vector<std::pair<std::string, std::vector<int>>> users;
  for (int u = 0; u < 10; ++u) users.push_back({"u" + std::to_string(u), iota_items(10)});
  auto rare = iota_items(9);
  rare.push_back(11);
  users.push_back({"rare", rare});
  const auto once = preprocess(raw_dataset(users, 12));
  CHECK(once.train.count("rare") == 0);
  CHECK(preprocess(once) == once);
}

TEST_CASE("all users filtered out is an error") {
  auto raw = raw_dataset({{"u", {1, 2, 3}}}, 4);
  CHECK_THROWS_WITH_AS(preprocess(raw), doctest::Contains("domain empty after filtering"),
                       DataError);
}

TEST_CASE("preprocessed splits are ordered, disjoint and within bounds") {
  ScenarioConfig sc;
  sc.users = 40;
  sc.vocab_per_domain = 30;
  for (const auto& d : generate_synthetic(sc)) {
    for (const auto& user : d.users()) {
      const auto h = d.full_history(user);
      CHECK(h.items.size() >= 4);
      CHECK(h.items.size() <= 16);
      const auto s = split_sizes(static_cast<int>(h.items.size()));
      CHECK(d.train.at(user).items.size() == static_cast<std::size_t>(s.train));
      CHECK(d.valid.at(user).items.size() == static_cast<std::size_t>(s.valid));
      CHECK(d.test.at(user).items.size() == static_cast<std::size_t>(s.test));
      for (int item : h.items) {
        CHECK(item > kPadItem);
        CHECK(item < d.vocab_size);
      }
    }
  }
}

TEST_CASE("item graph from one sequence a,b,c") {
  const auto d = raw_dataset({{"u", {1, 2, 3}}}, 5);
  const auto g = build_item_graph(d);
  CHECK(g.weight(1, 1) == doctest::Approx(0.5));
  CHECK(g.weight(1, 2) == doctest::Approx(0.5));
  CHECK(g.weight(1, 3) == 0.0);
  CHECK(g.weight(2, 1) == doctest::Approx(1.0 / 3));
  CHECK(g.weight(2, 3) == doctest::Approx(1.0 / 3));
  // Untouched item 4 and the pad row only keep their self-loop.
  CHECK(g.weight(4, 4) == 1.0);
  CHECK(g.weight(0, 0) == 1.0);
  for (int i = 0; i < g.vocab_size(); ++i) {
    double row = 0.0;
    for (int j = 0; j < g.vocab_size(); ++j) row += g.weight(i, j);
    CHECK(std::abs(row - 1.0) < 1e-9);
  }
}

TEST_CASE("item graph is symmetric in edge direction") {
  const auto one = build_item_graph(raw_dataset({{"u", {1, 2}}}, 3));
  const auto two = build_item_graph(raw_dataset({{"u", {1, 2}}, {"v", {2, 1}}}, 3));
  CHECK(Matrix(one.adjacency) == Matrix(two.adjacency));
}

TEST_CASE("synthetic generation is deterministic and validates heterogeneity") {
  ScenarioConfig sc;
  sc.users = 30;
  sc.vocab_per_domain = 40;
  CHECK(generate_synthetic(sc) == generate_synthetic(sc));
  sc.seed = 8;
  const auto other = generate_synthetic(sc);
  sc.seed = 7;
  CHECK(other != generate_synthetic(sc));
  sc.heterogeneity = 1.5;
  CHECK_THROWS_AS(generate_synthetic(sc), ConfigError);
  sc.heterogeneity = -0.1;
  CHECK_THROWS_AS(generate_synthetic(sc), ConfigError);
}

namespace {

// Mean chi-squared distance between per-user shared-cluster histograms of
// two sequence sources.
double mean_chi2(const SyntheticWorld& w, int dom_a, int dom_b, int draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int k = w.num_clusters();
  double total = 0.0;
  for (int u = 0; u < w.config().users; ++u) {
    std::vector<double> ha(static_cast<std::size_t>(k), 0.0);
    std::vector<double> hb(static_cast<std::size_t>(k), 0.0);
    for (int item : w.sample_sequence(u, dom_a, draws, rng)) ha[w.cluster_of(dom_a, item)] += 1;
    for (int item : w.sample_sequence(u, dom_b, draws, rng)) hb[w.cluster_of(dom_b, item)] += 1;
    double chi = 0.0;
    for (int c = 0; c < k; ++c) {
      const double s = ha[c] + hb[c];
      if (s > 0) chi += (ha[c] - hb[c]) * (ha[c] - hb[c]) / s;
    }
    total += chi;
  }
  return total / w.config().users;
}

}  // namespace

TEST_CASE("heterogeneity 0 makes cross-domain cluster histograms match resampling") {
  ScenarioConfig sc;
  sc.users = 200;
  sc.heterogeneity = 0.0;
  const SyntheticWorld world(sc);
  const double cross = mean_chi2(world, 0, 1, 40, 11);
  const double same = mean_chi2(world, 0, 0, 40, 12);
  // Both are sampling noise around the same expectation.
  CHECK(std::abs(cross - same) / same < 0.1);

  sc.heterogeneity = 1.0;
  const SyntheticWorld hetero(sc);
  CHECK(mean_chi2(hetero, 0, 1, 40, 11) > 1.5 * mean_chi2(hetero, 0, 0, 40, 12));
}

TEST_CASE("ingesting an empty file fails with no interactions") {
  const auto f = temp_file("empty.csv", "");
  CHECK_THROWS_WITH_AS(ingest_domain_file(f, "empty"), doctest::Contains("no interactions"),
                       DataError);
  fs::remove(f);
}

TEST_CASE("one malformed line among ten is skipped and counted") {
  std::string csv = "user_id,item_id,rating,timestamp\n";
  for (int i = 0; i < 9; ++i) {
    csv += "u" + std::to_string(i % 3) + ",i" + std::to_string(i) + ",5," + std::to_string(100 + i) + "\n";
  }
  csv += "broken line without fields\n";
  const auto f = temp_file("ten.csv", csv);
  IngestStats stats;
  const auto d = ingest_domain_file(f, "ten", &stats);
  CHECK(stats.interactions == 9);
  CHECK(stats.malformed_rows == 1);
  CHECK(d.vocab_size == 10);
  CHECK(d.train.at("u0").items.size() == 3);
  fs::remove(f);
}

TEST_CASE("ingest_amazon reports missing domain files as config errors") {
  CHECK_THROWS_AS(ingest_amazon(fs::temp_directory_path() / "fedcsr_no_such_dir", {"Food"}),
                  ConfigError);
}

TEST_CASE("ingestion orders each user's items by timestamp") {
  const auto f = temp_file("order.jsonl",
                           "{\"user_id\":\"a\",\"item_id\":\"x\",\"rating\":5,\"timestamp\":30}\n"
                           "{\"user_id\":\"a\",\"item_id\":\"y\",\"rating\":5,\"timestamp\":10}\n"
                           "{\"user_id\":\"a\",\"item_id\":\"z\",\"rating\":5,\"timestamp\":20}\n");
  const auto d = ingest_domain_file(f, "order");
  const auto& s = d.train.at("a");
  std::vector<std::string> keys;
  for (int i : s.items) keys.push_back(d.item_keys[static_cast<std::size_t>(i - 1)]);
  CHECK(keys == std::vector<std::string>{"y", "z", "x"});
  fs::remove(f);
}

TEST_CASE("dataset JSON round trip") {
  ScenarioConfig sc;
  sc.users = 20;
  sc.vocab_per_domain = 30;
  const auto d = generate_synthetic(sc).front();
  CHECK(domain_dataset_from_json(to_json(d)) == d);
  const auto f = fs::temp_directory_path() / "fedcsr_test_dataset.json";
  save_dataset(d, f);
  CHECK(load_dataset(f) == d);
  fs::remove(f);
}

TEST_CASE("left_pad keeps the newest items at the end") {
  CHECK(left_pad({1, 2}, 4) == std::vector<int>{0, 0, 1, 2});
  CHECK(left_pad({1, 2, 3, 4, 5}, 3) == std::vector<int>{3, 4, 5});
}
