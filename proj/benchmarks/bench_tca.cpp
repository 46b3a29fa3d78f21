#include <benchmark/benchmark.h>

#include <random>

#include "mobintent/intention.hpp"
#include "mobintent/tca.hpp"

using namespace mobintent;

namespace {

std::vector<TravelFeature> gaussian_features(int n, int dim, double shift, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<TravelFeature> out;
  for (int i = 0; i < n; ++i) {
    TravelFeature f;
    f.values.resize(dim);
    for (int d = 0; d < dim; ++d) f.values[d] = dist(rng) + shift;
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace

static void bm_fit_tca(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  auto src = gaussian_features(n, 13, 0.0, 1);
  auto tgt = gaussian_features(n, 13, 0.7, 2);
  for (auto _ : state) benchmark::DoNotOptimize(fit_tca(src, tgt, 5, 1.0));
}
BENCHMARK(bm_fit_tca)->Arg(100)->Arg(300)->Arg(600)->Unit(benchmark::kMillisecond);

static void bm_apply_tca(benchmark::State& state) {
  auto src = gaussian_features(200, 13, 0.0, 3);
  auto tgt = gaussian_features(200, 13, 0.7, 4);
  TcaTransform tf = fit_tca(src, tgt, 5, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(apply_tca(tf, src));
}
BENCHMARK(bm_apply_tca);

static void bm_fit_clusters(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<Eigen::VectorXd> points;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd p(5);
    for (int d = 0; d < 5; ++d) p[d] = dist(rng) + (i % 4) * 3.0;
    points.push_back(std::move(p));
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(fit_intention_clusters(points, 8, 7));
}
BENCHMARK(bm_fit_clusters)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
