#include <benchmark/benchmark.h>

#include <random>

#include "mobintent/dtw.hpp"

using namespace mobintent;

namespace {

Eigen::MatrixXd random_sequence(int len, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd m(len, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

static void bm_dtw_distance(benchmark::State& state) {
  const int len = static_cast<int>(state.range(0));
  Eigen::MatrixXd a = random_sequence(len, 5, 1);
  Eigen::MatrixXd b = random_sequence(len, 5, 2);
  for (auto _ : state) benchmark::DoNotOptimize(dtw_distance(a, b));
}
BENCHMARK(bm_dtw_distance)->Arg(8)->Arg(16)->Arg(32)->Arg(64);

static void bm_dtw_windowed(benchmark::State& state) {
  const int len = static_cast<int>(state.range(0));
  Eigen::MatrixXd a = random_sequence(len, 5, 3);
  Eigen::MatrixXd b = random_sequence(len, 5, 4);
  for (auto _ : state) benchmark::DoNotOptimize(dtw_distance(a, b, 4));
}
BENCHMARK(bm_dtw_windowed)->Arg(16)->Arg(64);

// linear scan over an index-sized candidate set
static void bm_dtw_scan(benchmark::State& state) {
  const int candidates = static_cast<int>(state.range(0));
  Eigen::MatrixXd query = random_sequence(10, 5, 5);
  std::vector<Eigen::MatrixXd> entries;
  for (int i = 0; i < candidates; ++i)
    entries.push_back(random_sequence(8 + i % 5, 5, 100 + static_cast<std::uint64_t>(i)));
  for (auto _ : state) {
    double best = 1e300;
    for (const auto& e : entries) best = std::min(best, dtw_distance(query, e));
    benchmark::DoNotOptimize(best);
  }
}
BENCHMARK(bm_dtw_scan)->Arg(100)->Arg(400);
