#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fedcsr/evaluation.hpp"
#include "fedcsr/random.hpp"

using namespace fedcsr;

TEST_CASE("metrics for ranks 1, 3 and 11") {
  const std::vector<int> one{1};
  auto m = compute_metrics(one, 10);
  CHECK(m.mrr == 1.0);
  CHECK(m.hr_at_k == 1.0);
  CHECK(m.ndcg_at_k == 1.0);
  const std::vector<int> three{3};
  m = compute_metrics(three, 10);
  CHECK(m.ndcg_at_k == doctest::Approx(1.0 / std::log2(4.0)));
  CHECK(m.mrr == doctest::Approx(1.0 / 3));
  const std::vector<int> eleven{11};
  m = compute_metrics(eleven, 10);
  CHECK(m.hr_at_k == 0.0);
  CHECK(m.ndcg_at_k == 0.0);
  CHECK(m.mrr == doctest::Approx(1.0 / 11));
  CHECK_THROWS(compute_metrics(std::vector<int>{}, 10));
}

TEST_CASE("metrics are permutation invariant and monotone in ranks") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> ranks;
    for (int i = 0; i < 8; ++i) ranks.push_back(1 + uniform_index(rng, 20));
    const auto base = compute_metrics(ranks, 10);
    auto shuffled = ranks;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto perm = compute_metrics(shuffled, 10);
    CHECK(perm.mrr == doctest::Approx(base.mrr).epsilon(1e-14));
    CHECK(perm.ndcg_at_k == doctest::Approx(base.ndcg_at_k).epsilon(1e-14));
    CHECK(perm.hr_at_k == doctest::Approx(base.hr_at_k).epsilon(1e-14));
    auto better = ranks;
    auto& r = better[static_cast<std::size_t>(uniform_index(rng, 8))];
    r = std::max(1, r - 1 - uniform_index(rng, 5));
    const auto up = compute_metrics(better, 10);
    CHECK(up.mrr >= base.mrr);
    CHECK(up.hr_at_k >= base.hr_at_k);
    CHECK(up.ndcg_at_k >= base.ndcg_at_k);
    for (double v : {base.mrr, base.hr_at_k, base.ndcg_at_k}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("rank of target: top, tie and bottom") {
  std::vector<double> scores{0.0, 5.0, 1.0, 5.0};
  const std::vector<int> negs{2};
  CHECK(rank_of_target(scores, 1, negs) == 1);
  const std::vector<int> tie{3, 2};
  CHECK(rank_of_target(scores, 1, tie) == 2);

  std::vector<double> big(1001, 1.0);
  big[1000] = 0.0;
  std::vector<int> all;
  for (int i = 1; i < 1000; ++i) all.push_back(i);
  CHECK(rank_of_target(big, 1000, all) == 1000);
}

TEST_CASE("rank of target matches a full sort") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const int vocab = 2 + uniform_index(rng, 19);
    std::vector<double> scores(static_cast<std::size_t>(vocab));
    // Coarse scores so ties happen often.
    for (auto& s : scores) s = uniform_index(rng, 5);
    const int target = 1 + uniform_index(rng, vocab - 1);
    std::vector<int> negs;
    for (int i = 1; i < vocab; ++i)
      if (i != target) negs.push_back(i);
    std::vector<std::pair<double, int>> order;
    for (int i : negs) order.push_back({scores[i], 1});
    order.push_back({scores[target], 0});
    // Pessimistic ties: target sorts after equal-scored negatives.
    std::sort(order.begin(), order.end(), [](auto a, auto b) {
      return a.first != b.first ? a.first > b.first : a.second > b.second;
    });
    int oracle = 0;
    for (std::size_t i = 0; i < order.size(); ++i)
      if (order[i].second == 0) oracle = static_cast<int>(i) + 1;
    CHECK(rank_of_target(scores, target, negs) == oracle);
  }
}

TEST_CASE("negatives are distinct, exclude target and history, and are seeded") {
  std::mt19937_64 r1(7);
  const auto negs = sample_negatives({}, 5, 1001, 999, r1);
  CHECK(negs.size() == 999);
  const std::set<int> uniq(negs.begin(), negs.end());
  CHECK(uniq.size() == 999);
  CHECK(uniq.count(5) == 0);
  CHECK(uniq.count(0) == 0);
  std::mt19937_64 r2(7);
  CHECK(sample_negatives({}, 5, 1001, 999, r2) == negs);

  std::mt19937_64 r3(8);
  const std::set<int> history{1, 2, 3};
  for (int n : sample_negatives(history, 4, 50, 20, r3)) CHECK(history.count(n) == 0);
}

TEST_CASE("small vocabularies fall back to excluding only target and pad") {
  std::mt19937_64 rng(1);
  bool fallback = false;
  const auto negs = sample_negatives({1, 2, 3}, 4, 8, 5, rng, &fallback);
  CHECK(fallback);
  CHECK(negs.size() == 5);
  for (int n : negs) {
    CHECK(n != 4);
    CHECK(n != 0);
  }
  const auto few = sample_negatives({}, 1, 4, 10, rng);
  CHECK(few.size() == 2);
}

TEST_CASE("fusion both equals shared when the exclusive part is zero") {
  std::mt19937_64 rng(5);
  const PredictorParams theta = init_predictor(3, 2);
  const Matrix table = standard_normal_matrix(6, 3, rng);
  const Matrix zs = standard_normal_matrix(2, 3, rng);
  const Matrix zero = Matrix::Zero(2, 3);
  const Matrix both = predict_scores(zs, zero, theta, table, FusionMode::both);
  CHECK(both == predict_scores(zs, zero, theta, table, FusionMode::shared));
  CHECK(both == predict_scores(zs, zero, theta, table, FusionMode::both));
  CHECK(both.cols() == 6);
  CHECK(predict_scores(zero, zs, theta, table, FusionMode::exclusive) ==
        predict_scores(zs, zero, theta, table, FusionMode::shared));
}

TEST_CASE("held-out instances carry the full prefix") {
  DomainDataset d;
  d.vocab_size = 20;
  d.train["u"] = UserSequence{"u", {1, 2, 3, 4, 5, 6, 7, 8}, {}};
  d.valid["u"] = UserSequence{"u", {9}, {}};
  d.test["u"] = UserSequence{"u", {10}, {}};
  const auto test = eval_instances(d, Split::test);
  REQUIRE(test.size() == 1);
  CHECK(test[0].target == 10);
  CHECK(test[0].prefix.size() == 9);
  CHECK(test[0].position == 9);
  CHECK(eval_instances(d, Split::valid)[0].prefix.size() == 8);
}

TEST_CASE("averages are unweighted over domains and results round trip") {
  std::map<std::string, RankingMetrics> per;
  per["a"] = {0.2, 0.4, 0.3, 10};
  per["b"] = {0.4, 0.6, 0.5, 1000};
  const auto avg = average_metrics(per);
  CHECK(avg.mrr == doctest::Approx(0.3));
  CHECK(avg.hr_at_k == doctest::Approx(0.5));
  EvalResult r;
  r.per_domain = per;
  r.average = avg;
  r.fusion_mode = FusionMode::exclusive;
  const auto back = eval_result_from_json(to_json(r));
  CHECK(back.fusion_mode == FusionMode::exclusive);
  CHECK(back.per_domain.at("b").mrr == 0.4);
  CHECK(parse_fusion_mode(to_string(FusionMode::shared)) == FusionMode::shared);
  CHECK(eval_csv_rows(r, "valid", 3).find("Avg") != std::string::npos);
}
