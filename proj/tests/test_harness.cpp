#include <doctest.h>

#include <filesystem>

#include "mobintent/corpus_io.hpp"
#include "mobintent/harness.hpp"

using namespace mobintent;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config(std::uint64_t seed = 1) {
  ExperimentConfig c = parse_experiment_config_text(default_experiment_config_text());
  c.world.locations_per_city = 8;
  c.users_per_source_city_normal = 6;
  c.users_per_source_city_disaster = 6;
  c.users_target_normal = 12;
  c.users_target_disaster = 8;
  c.min_length = 6;
  c.max_length = 8;
  c.n_intentions = 5;
  c.tca_m = 4;
  c.tca_max_samples_per_side = 120;
  c.clip.width = 16;
  c.clip.blocks = 1;
  c.clip.heads = 2;
  c.clip.d_k = 16;
  c.clip.epochs = 1;
  c.clip.batch_size = 8;
  c.vocab_n = 128;
  c.vocab_d = 16;
  c.predictor.d_h = 16;
  c.predictor.loc_embed = 8;
  c.predictor.epochs = 2;
  c.seed = seed;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "mobintent_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("default config text parses and validates") {
  ExperimentConfig c = parse_experiment_config_text(default_experiment_config_text());
  CHECK(c.world.source_cities.size() == 2);
  CHECK(c.labels.levels == 5);
  CHECK(c.labels.labels[0] == "no disaster");
  CHECK(c.labels.labels[4] == "severe disaster");
  CHECK(c.ablation.rag);
  CHECK(c.hash() == c.hash());

  ExperimentConfig other = parse_experiment_config_text(default_experiment_config_text());
  other.seed = 2;
  CHECK(other.hash() != c.hash());
}

TEST_CASE("config rejects contradictions") {
  ExperimentConfig c = small_config();
  c.holdout_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.target_disaster_level = 9;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.backend = "oracle";
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("holdout split is deterministic and roughly proportional") {
  int held = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    std::string user = "user" + std::to_string(i);
    bool a = user_in_holdout(user, 0.3, 42);
    bool b = user_in_holdout(user, 0.3, 42);
    CHECK(a == b);
    held += a ? 1 : 0;
  }
  CHECK(held > n * 0.25);
  CHECK(held < n * 0.35);
}

TEST_CASE("prediction and refined record files round-trip") {
  fs::path dir = fresh_dir("records");
  std::vector<PredictionRecord> preds(2);
  preds[0].id = "a@2";
  preds[0].user_id = "a";
  preds[0].city = "cedar";
  preds[0].level_ordinal = 3;
  preds[0].prefix_location_ids = {"r0", "r1"};
  preds[0].truth_location_id = "r2";
  preds[0].predicted_class = 4;
  preds[0].embedding = Eigen::VectorXd::LinSpaced(4, 0.0, 1.0);
  preds[1] = preds[0];
  preds[1].id = "a@3";
  write_predictions(preds, dir / "p.jsonl");
  auto loaded = read_predictions(dir / "p.jsonl");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].id == "a@2");
  CHECK(loaded[0].embedding.isApprox(preds[0].embedding, 0.0));
  CHECK(loaded[1].prefix_location_ids == preds[1].prefix_location_ids);

  std::vector<RefinedRecord> refined(1);
  refined[0].id = "a@2";
  refined[0].refined_class = 2;
  refined[0].vector = Eigen::VectorXd::Ones(3);
  refined[0].decision.q1_correct = false;
  refined[0].decision.q2_immobility = false;
  refined[0].decision.q3_class = 2;
  refined[0].decision.backend_id = "stub";
  refined[0].decision.raw_answer = "[\"no\", \"no\", \"2\"]";
  refined[0].n_references = 6;
  write_refined(refined, dir / "r.jsonl");
  auto rl = read_refined(dir / "r.jsonl");
  REQUIRE(rl.size() == 1);
  CHECK(rl[0].refined_class == 2);
  CHECK(*rl[0].decision.q3_class == 2);
  CHECK_FALSE(rl[0].decision.q1_correct);
}

TEST_CASE("run_experiment is reproducible byte-for-byte") {
  ExperimentConfig c = small_config(7);
  fs::path d1 = fresh_dir("repro1");
  fs::path d2 = fresh_dir("repro2");
  run_experiment(c, d1);
  run_experiment(c, d2);
  CHECK(read_text_file(d1 / "report.json") == read_text_file(d2 / "report.json"));
  CHECK(read_text_file(d1 / "report.txt") == read_text_file(d2 / "report.txt"));

  // cached rerun in the same directory leaves the report unchanged
  std::string before = read_text_file(d1 / "report.json");
  run_experiment(c, d1);
  CHECK(read_text_file(d1 / "report.json") == before);
}

TEST_CASE("ablation audits: llm_refining off means refined == predicted everywhere") {
  ExperimentConfig c = small_config(9);
  c.ablation.llm_refining = false;
  fs::path dir = fresh_dir("llm_off");
  MetricsReport report = run_experiment(c, dir);
  CHECK(report.audit_refined_changed == 0);

  auto preds = read_predictions(dir / "predictions.jsonl");
  auto refined = read_refined(dir / "refined.jsonl");
  REQUIRE(preds.size() == refined.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    CHECK(preds[i].predicted_class == refined[i].refined_class);
    CHECK(refined[i].decision.backend_id == "disabled");
  }
}

TEST_CASE("ablation audits: rag off means zero references everywhere") {
  ExperimentConfig c = small_config(9);
  c.ablation.rag = false;
  fs::path dir = fresh_dir("rag_off");
  MetricsReport report = run_experiment(c, dir);
  CHECK(report.audit_zero_reference_prompts == report.pipeline.samples);
  for (const auto& r : read_refined(dir / "refined.jsonl")) CHECK(r.n_references == 0);
}

TEST_CASE("ablation audits: soft prompt off detaches the prefix") {
  ExperimentConfig c = small_config(9);
  c.ablation.soft_prompt = false;
  fs::path dir = fresh_dir("soft_off");
  MetricsReport report = run_experiment(c, dir);
  CHECK(report.audit_soft_prompt_attached == 0);

  // the stub never consumes the prefix, so metrics match the full run exactly
  ExperimentConfig full = small_config(9);
  fs::path dir_full = fresh_dir("soft_on");
  MetricsReport full_report = run_experiment(full, dir_full);
  CHECK(report.pipeline.ranking.acc1 == full_report.pipeline.ranking.acc1);
  CHECK(report.pipeline.immobility.f1 == full_report.pipeline.immobility.f1);
  CHECK(full_report.audit_soft_prompt_attached == full_report.pipeline.samples);
}

TEST_CASE("ablation: immobility off removes the class from every surface") {
  ExperimentConfig c = small_config(11);
  c.ablation.immobility = false;
  fs::path dir = fresh_dir("immob_off");
  MetricsReport report = run_experiment(c, dir);
  CHECK(report.intention.immobility.degenerate);

  IntentionModel im = load_intention_model(dir / "intention_model.json");
  for (const auto& r : read_refined(dir / "refined.jsonl"))
    CHECK(r.refined_class < im.space.immobility_class());
  TrajectoryIndex index = load_index(dir / "index.json");
  for (const auto& e : index.entries)
    for (int cls : e.classes) CHECK(cls < im.space.immobility_class());
}

TEST_CASE("report json carries the config hash and sample counts") {
  ExperimentConfig c = small_config(13);
  fs::path dir = fresh_dir("report");
  MetricsReport report = run_experiment(c, dir);
  CHECK(report.config_hash == c.hash());
  CHECK(report.pipeline.samples > 0);
  CHECK(report.base_normal.samples > 0);
  CHECK(report.pipeline.samples == report.base_disaster.samples);

  std::string json = read_text_file(dir / "report.json");
  CHECK(json.find(c.hash()) != std::string::npos);
  CHECK(json.find("\"kind\": \"metrics_report\"") != std::string::npos);

  // metrics stay in [0, 1]
  for (const MetricsBlock* b : {&report.pipeline, &report.base_disaster, &report.base_normal}) {
    for (double v : {b->ranking.acc1, b->ranking.acc10, b->ranking.mrr, b->ranking.ndcg5,
                     b->ranking.ndcg10, b->immobility.precision, b->immobility.recall,
                     b->immobility.f1}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("refine_predictions joins records by id and honors retries") {
  // mis-ordered ids are rejected by the caller-side join in run_experiment;
  // here verify refine_predictions output aligns with its input order
  ExperimentConfig c = small_config(15);
  fs::path dir = fresh_dir("join");
  run_experiment(c, dir);
  auto preds = read_predictions(dir / "predictions.jsonl");
  auto refined = read_refined(dir / "refined.jsonl");
  REQUIRE(preds.size() == refined.size());
  for (std::size_t i = 0; i < preds.size(); ++i) CHECK(preds[i].id == refined[i].id);
}
