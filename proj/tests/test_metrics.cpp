#include <doctest.h>

#include <cmath>
#include <random>

#include "mobintent/metrics.hpp"
#include "oracles.hpp"

using namespace mobintent;

TEST_CASE("ranking metrics on the pinned examples") {
  RankingMetrics perfect = compute_ranking_metrics(std::vector<int>{1});
  CHECK(perfect.acc1 == 1.0);
  CHECK(perfect.mrr == 1.0);
  CHECK(perfect.ndcg5 == 1.0);

  RankingMetrics second = compute_ranking_metrics(std::vector<int>{2});
  CHECK(second.acc1 == 0.0);
  CHECK(second.acc10 == 1.0);
  CHECK(second.mrr == 0.5);
  CHECK(second.ndcg5 == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
  CHECK(second.ndcg5 == doctest::Approx(0.6309).epsilon(1e-4));

  RankingMetrics two = compute_ranking_metrics(std::vector<int>{1, 3});
  CHECK(two.mrr == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  CHECK_THROWS_AS(compute_ranking_metrics(std::vector<int>{}), Error);
  CHECK_THROWS_AS(compute_ranking_metrics(std::vector<int>{0}), Error);
}

TEST_CASE("immobility precision/recall/f1 on the pinned examples") {
  Prf perfect = compute_immobility_prf({true, true, true}, {true, true, true});
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  // TP=2, FP=1, FN=2
  std::vector<bool> pred = {true, true, true, false, false, false};
  std::vector<bool> truth = {true, true, false, true, true, false};
  Prf mixed = compute_immobility_prf(pred, truth);
  CHECK(mixed.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(mixed.recall == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mixed.f1 == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
  CHECK(mixed.f1 == doctest::Approx(0.5714).epsilon(1e-4));

  Prf degenerate = compute_immobility_prf({false, false}, {false, false});
  CHECK(degenerate.precision == 0.0);
  CHECK(degenerate.recall == 0.0);
  CHECK(degenerate.f1 == 0.0);
  CHECK(degenerate.degenerate);

  CHECK_THROWS_AS(compute_immobility_prf({true}, {true, false}), Error);
}

TEST_CASE("intention metrics on the pinned examples") {
  CHECK(compute_intention_metrics({1, 2, 3}, {1, 2, 3}, 9).accuracy == 1.0);
  CHECK(compute_intention_metrics({1, 2, 3}, {2, 3, 1}, 9).accuracy == 0.0);

  // 3 of 4 correct; one immobility TP, one immobility FN (class 9 = immobility)
  IntentionMetrics m = compute_intention_metrics({9, 1, 2, 3}, {9, 1, 2, 9}, 9);
  CHECK(m.accuracy == 0.75);
  CHECK(m.immobility.recall == 0.5);
  CHECK(m.immobility.precision == 1.0);

  CHECK_THROWS_AS(compute_intention_metrics({1}, {1, 2}, 9), Error);
}

TEST_CASE("all five ranking metrics match the brute-force reference exactly") {
  std::mt19937_64 rng(77);
  const int instances = 1000;
  std::vector<int> ranks;
  std::vector<std::vector<int>> lists;
  std::vector<int> truths;
  for (int i = 0; i < instances; ++i) {
    int n = 2 + static_cast<int>(rng() % 30);
    std::vector<int> list(static_cast<std::size_t>(n));
    std::iota(list.begin(), list.end(), 0);
    std::shuffle(list.begin(), list.end(), rng);
    int truth = static_cast<int>(rng() % static_cast<unsigned>(n));
    int rank = 0;
    for (std::size_t p = 0; p < list.size(); ++p)
      if (list[p] == truth) rank = static_cast<int>(p) + 1;
    ranks.push_back(rank);
    lists.push_back(std::move(list));
    truths.push_back(truth);
  }
  RankingMetrics ours = compute_ranking_metrics(ranks);
  oracle::RankingMetricsRef ref = oracle::ranking_metrics(lists, truths);
  CHECK(ours.acc1 == ref.acc1);
  CHECK(ours.acc10 == ref.acc10);
  CHECK(ours.mrr == doctest::Approx(ref.mrr).epsilon(1e-12));
  CHECK(ours.ndcg5 == doctest::Approx(ref.ndcg5).epsilon(1e-12));
  CHECK(ours.ndcg10 == doctest::Approx(ref.ndcg10).epsilon(1e-12));
}

TEST_CASE("immobility prf matches the reference on random instances") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 1 + static_cast<int>(rng() % 50);
    std::vector<bool> pred, truth;
    for (int i = 0; i < n; ++i) {
      pred.push_back(rng() % 3 == 0);
      truth.push_back(rng() % 4 == 0);
    }
    Prf ours = compute_immobility_prf(pred, truth);
    oracle::PrfRef ref = oracle::prf(pred, truth);
    CHECK(ours.precision == doctest::Approx(ref.precision).epsilon(1e-12));
    CHECK(ours.recall == doctest::Approx(ref.recall).epsilon(1e-12));
    CHECK(ours.f1 == doctest::Approx(ref.f1).epsilon(1e-12));
  }
}
