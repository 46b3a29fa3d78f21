#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mobintent/clip.hpp"
#include "mobintent/metrics.hpp"
#include "mobintent/predictor.hpp"
#include "mobintent/refiner.hpp"
#include "mobintent/retrieval.hpp"
#include "mobintent/worldgen.hpp"

namespace mobintent {

struct AblationFlags {
  bool rag = true;
  bool soft_prompt = true;
  bool immobility = true;
  bool llm_refining = true;

  std::string describe() const;  // "rag,soft_prompt" lists the DISABLED flags
};

struct ExperimentConfig {
  WorldConfig world;

  // corpora
  int users_per_source_city_normal = 20;
  int users_per_source_city_disaster = 20;
  int users_target_normal = 40;
  int users_target_disaster = 30;
  int trajectories_per_user = 1;
  int min_length = 8;
  int max_length = 14;
  MobilityParams mobility;
  DisasterLabelMap labels;
  std::vector<int> source_disaster_levels = {3};
  int target_disaster_level = 3;
  double holdout_fraction = 0.3;

  // intention space
  int n_intentions = 8;
  int tca_m = 6;
  double tca_mu = 1.0;
  int tca_max_samples_per_side = 400;

  // alignment model
  ClipConfig clip;
  int vocab_n = 1024;
  int vocab_d = 64;
  std::uint64_t vocab_seed = 7;

  // retrieval + refiner
  int retrieval_k = 3;
  std::string backend = "stub";  // stub | http
  StubRules stub_rules;
  int refine_retries = 2;

  // location predictor
  PredictorConfig predictor;

  std::uint64_t seed = 1;
  AblationFlags ablation;

  void validate() const;
  std::string canonical_json() const;  // stable serialization used for hashing
  std::string hash() const { return content_hash(canonical_json()); }
};

ExperimentConfig parse_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config_text(const std::string& text);
std::string default_experiment_config_text();

struct MetricsBlock {
  RankingMetrics ranking;
  Prf immobility;
  int samples = 0;
};

struct MetricsReport {
  std::string config_hash;
  std::uint64_t seed = 0;
  AblationFlags ablation;
  double holdout_fraction = 0.3;

  MetricsBlock pipeline;       // full pipeline on held-out disaster/target data
  MetricsBlock base_disaster;  // unmodulated base on the same samples
  MetricsBlock base_normal;    // unmodulated base on held-out normal/target data
  IntentionMetrics intention;  // refined class against the realized next travel's class

  // ablation audit trail
  int audit_refined_changed = 0;
  int audit_zero_reference_prompts = 0;
  int audit_fallbacks = 0;
  int audit_soft_prompt_attached = 0;

  // diagnostics
  double silhouette = 0.0;
  double tca_mmd_before = 0.0;
  double tca_mmd_after = 0.0;
  double clip_initial_loss = 0.0;
  double clip_final_loss = 0.0;
  double predictor_initial_loss = 0.0;
  double predictor_final_loss = 0.0;
  bool prototype_weights_all_equal = false;
};

std::string report_to_json(const MetricsReport& report);
std::string report_to_table(const MetricsReport& report);

/// Executes the full pipeline: generate, fit the intention space, train the
/// alignment model, build the index, train the predictors, evaluate on the
/// held-out disaster split. Stages cache under workdir by content hash.
MetricsReport run_experiment(const ExperimentConfig& config,
                             const std::filesystem::path& workdir);

// --- pipeline pieces shared with the CLI --------------------------------------

struct PredictionRecord {
  std::string id;
  std::string user_id;
  std::string city;
  int level_ordinal = 0;
  std::vector<std::string> prefix_location_ids;
  std::string truth_location_id;  // empty when unknown
  int predicted_class = 0;
  Eigen::VectorXd embedding;  // predicted next intention, language modality
};

struct RefinedRecord {
  std::string id;
  int refined_class = 0;
  Eigen::VectorXd vector;  // intention modality
  RefinementDecision decision;
  int n_references = 0;
};

void write_predictions(const std::vector<PredictionRecord>& records,
                       const std::filesystem::path& path);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);
void write_refined(const std::vector<RefinedRecord>& records, const std::filesystem::path& path);
std::vector<RefinedRecord> read_refined(const std::filesystem::path& path);

/// Deterministic by-user split: true when the user lands in the held-out part.
bool user_in_holdout(const std::string& user_id, double fraction, std::uint64_t seed);

/// Splits one retrieved reference into (shown sequence, held-out next): the
/// last intention becomes the reference's next intention.
ReferenceDisplay make_reference_display(const ScoredReference& ref,
                                        const Eigen::MatrixXd& class_anchors);

World generate_world_stage(const ExperimentConfig& config);
CorpusBundle generate_corpora_stage(const ExperimentConfig& config, const World& world);

/// Alignment-model predictions for every eval step (prefix >= 2 records) of the
/// corpus; restricted to held-out users when holdout_only is set.
std::vector<PredictionRecord> predict_intentions(const ExperimentConfig& config,
                                                 const World& world,
                                                 const IntentionClipModel& clip,
                                                 const Corpus& corpus, bool holdout_only);

/// Retrieval + prompt + backend refinement for a batch of prediction records,
/// honoring the config's ablation flags.
std::vector<RefinedRecord> refine_predictions(const ExperimentConfig& config, const World& world,
                                              const IntentionModel& im,
                                              const IntentionClipModel& clip,
                                              const TrajectoryIndex& index,
                                              RefinerBackend& backend,
                                              const std::vector<PredictionRecord>& predictions);

}  // namespace mobintent
