#include <benchmark/benchmark.h>

#include <filesystem>

#include "mobintent/harness.hpp"
#include "mobintent/metrics.hpp"

using namespace mobintent;

namespace {

ExperimentConfig bench_config() {
  ExperimentConfig c = parse_experiment_config_text(default_experiment_config_text());
  c.world.locations_per_city = 10;
  c.users_per_source_city_normal = 8;
  c.users_per_source_city_disaster = 8;
  c.users_target_normal = 16;
  c.users_target_disaster = 12;
  c.min_length = 6;
  c.max_length = 9;
  c.n_intentions = 5;
  c.tca_m = 4;
  c.tca_max_samples_per_side = 200;
  c.clip.width = 16;
  c.clip.blocks = 1;
  c.clip.heads = 2;
  c.clip.d_k = 16;
  c.clip.epochs = 2;
  c.clip.batch_size = 8;
  c.vocab_n = 128;
  c.vocab_d = 16;
  c.predictor.d_h = 16;
  c.predictor.loc_embed = 8;
  c.predictor.epochs = 3;
  return c;
}

}  // namespace

static void bm_ranking_metrics(benchmark::State& state) {
  std::vector<int> ranks;
  for (int i = 0; i < 1000; ++i) ranks.push_back(1 + i % 17);
  for (auto _ : state) benchmark::DoNotOptimize(compute_ranking_metrics(ranks));
}
BENCHMARK(bm_ranking_metrics);

static void bm_generate_corpora(benchmark::State& state) {
  ExperimentConfig c = bench_config();
  World world = generate_world_stage(c);
  for (auto _ : state) benchmark::DoNotOptimize(generate_corpora_stage(c, world));
}
BENCHMARK(bm_generate_corpora)->Unit(benchmark::kMillisecond);

// the full pipeline at smoke scale, cold cache each iteration
static void bm_run_experiment(benchmark::State& state) {
  ExperimentConfig c = bench_config();
  auto dir = std::filesystem::temp_directory_path() / "mobintent_bench_run";
  for (auto _ : state) {
    std::filesystem::remove_all(dir);
    benchmark::DoNotOptimize(run_experiment(c, dir));
  }
}
BENCHMARK(bm_run_experiment)->Unit(benchmark::kMillisecond)->Iterations(3);

BENCHMARK_MAIN();
