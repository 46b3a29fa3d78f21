#include "mobintent/harness.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "mobintent/corpus_io.hpp"
#include "mobintent/dtw.hpp"
#include "mobintent/jsonio.hpp"
#include "mobintent/travel_features.hpp"

namespace mobintent {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string AblationFlags::describe() const {
  std::string out;
  auto append = [&out](bool enabled, const char* name) {
    if (enabled) return;
    if (!out.empty()) out += ",";
    out += name;
  };
  append(rag, "rag");
  append(soft_prompt, "soft_prompt");
  append(immobility, "immobility");
  append(llm_refining, "llm_refining");
  return out.empty() ? "none" : out;
}

void ExperimentConfig::validate() const {
  world.validate();
  require(users_per_source_city_normal >= 1 && users_per_source_city_disaster >= 1 &&
              users_target_normal >= 2 && users_target_disaster >= 2,
          "user counts too small");
  require(min_length >= 3 && max_length >= min_length, "length range must allow eval prefixes");
  require(holdout_fraction > 0.0 && holdout_fraction < 1.0, "holdout fraction must be in (0,1)");
  require(!source_disaster_levels.empty(), "need at least one source disaster level");
  for (int level : source_disaster_levels)
    require(level >= 1 && level < labels.levels, "source disaster level out of range");
  require(target_disaster_level >= 1 && target_disaster_level < labels.levels,
          "target disaster level out of range");
  require(n_intentions >= 2, "need at least 2 intentions");
  require(tca_m >= 1, "tca_m must be >= 1");
  require(retrieval_k >= 1, "retrieval_k must be >= 1");
  require(backend == "stub" || backend == "http", "backend must be stub or http");
  require(refine_retries >= 0, "refine_retries must be >= 0");
  require(predictor.mode != ModulationMode::None,
          "configure a real modulation mode; the unmodulated baseline is built automatically");
  clip.validate();
  predictor.validate();
}

namespace {

ordered_json world_config_json(const WorldConfig& w) {
  return ordered_json{{"source_cities", w.source_cities}, {"target_city", w.target_city},
                      {"locations_per_city", w.locations_per_city}, {"c_poi", w.c_poi},
                      {"c_road", w.c_road}, {"heterogeneity", w.heterogeneity},
                      {"extent", w.extent}};
}

ordered_json mobility_json(const MobilityParams& m) {
  return ordered_json{{"base_stay_prob", m.base_stay_prob},
                      {"stay_slope", m.stay_slope},
                      {"stay_persistence", m.stay_persistence},
                      {"residential_bias", m.residential_bias},
                      {"n_latents", m.n_latents}};
}

ordered_json clip_config_json(const ClipConfig& c) {
  return ordered_json{{"n_prototypes", c.n_prototypes}, {"width", c.width},
                      {"blocks", c.blocks}, {"heads", c.heads}, {"d_k", c.d_k},
                      {"temp_infonce", c.temp_infonce}, {"temp_class", c.temp_class},
                      {"lr", c.lr}, {"epochs", c.epochs}, {"batch_size", c.batch_size},
                      {"seed", c.seed}, {"stay_still_token_ids", c.stay_still_token_ids}};
}

ordered_json predictor_config_json(const PredictorConfig& p) {
  return ordered_json{{"base", p.base}, {"mode", to_string(p.mode)}, {"d_h", p.d_h},
                      {"loc_embed", p.loc_embed}, {"lr", p.lr}, {"epochs", p.epochs},
                      {"seed", p.seed}, {"freq_alpha", p.freq_alpha}};
}

}  // namespace

std::string ExperimentConfig::canonical_json() const {
  ordered_json j;
  j["world"] = world_config_json(world);
  j["corpora"] = {{"users_per_source_city_normal", users_per_source_city_normal},
                  {"users_per_source_city_disaster", users_per_source_city_disaster},
                  {"users_target_normal", users_target_normal},
                  {"users_target_disaster", users_target_disaster},
                  {"trajectories_per_user", trajectories_per_user},
                  {"min_length", min_length},
                  {"max_length", max_length},
                  {"mobility", mobility_json(mobility)},
                  {"labels", labels.labels},
                  {"source_disaster_levels", source_disaster_levels},
                  {"target_disaster_level", target_disaster_level},
                  {"holdout_fraction", holdout_fraction}};
  j["intention_space"] = {{"n_intentions", n_intentions},
                          {"tca_m", tca_m},
                          {"tca_mu", tca_mu},
                          {"tca_max_samples_per_side", tca_max_samples_per_side}};
  j["clip"] = clip_config_json(clip);
  j["vocab"] = {{"n", vocab_n}, {"d", vocab_d}, {"seed", vocab_seed}};
  j["retrieval"] = {{"k", retrieval_k}};
  j["refiner"] = {{"backend", backend},
                  {"majority_threshold", stub_rules.majority_threshold},
                  {"severe_label", stub_rules.severe_label},
                  {"retries", refine_retries}};
  j["predictor"] = predictor_config_json(predictor);
  j["seed"] = seed;
  j["ablation"] = {{"rag", ablation.rag},
                   {"soft_prompt", ablation.soft_prompt},
                   {"immobility", ablation.immobility},
                   {"llm_refining", ablation.llm_refining}};
  return j.dump();
}

std::string default_experiment_config_text() {
  return R"cfg({
  // synthetic world: at least two source cities plus the target city
  "world": {
    "source_cities": ["alder", "birch"],
    "target_city": "cedar",
    "locations_per_city": 12,
    "c_poi": 4,
    "c_road": 2,
    "heterogeneity": 0.5,
    "extent": 10.0
  },
  "corpora": {
    "users_per_source_city_normal": 20,
    "users_per_source_city_disaster": 20,
    "users_target_normal": 40,
    "users_target_disaster": 30,
    "trajectories_per_user": 1,
    "min_length": 8,
    "max_length": 14,
    "mobility": {
      "base_stay_prob": 0.2,      // immobility probability at ordinal 0
      "stay_slope": 0.08,         // added per disaster ordinal
      "stay_persistence": 0.0,    // added right after a stay
      "residential_bias": 1.5,    // destination reweight toward residential POIs
      "n_latents": 6
    },
    // ordinal -> prompt label; five rainfall levels fold onto four labels
    "labels": ["no disaster", "minor disaster", "general disaster",
               "severe disaster", "severe disaster"],
    "source_disaster_levels": [3],
    "target_disaster_level": 3,
    "holdout_fraction": 0.3       // held-out by user, target corpora
  },
  "intention_space": {
    "n_intentions": 8,
    "tca_m": 6,
    "tca_mu": 1.0,
    "tca_max_samples_per_side": 400
  },
  "clip": {
    "n_prototypes": 16,
    "width": 64,
    "blocks": 2,
    "heads": 4,
    "d_k": 64,
    "temp_infonce": 0.07,
    "temp_class": 0.1,
    "lr": 0.001,
    "epochs": 20,
    "batch_size": 16,
    "seed": 1,
    "stay_still_token_ids": [0, 1]
  },
  "vocab": { "n": 1024, "d": 64, "seed": 7 },
  "retrieval": { "k": 3 },
  "refiner": {
    "backend": "stub",            // stub | http (http reads REFINER_ENDPOINT / REFINER_TOKEN)
    "majority_threshold": 0.6,
    "severe_label": "severe disaster",
    "retries": 2
  },
  "predictor": {
    "base": "rnn",                // freq | rnn
    "mode": "mul",                // mul | concat | attn
    "d_h": 64,
    "loc_embed": 32,
    "lr": 0.05,
    "epochs": 15,
    "seed": 1,
    "freq_alpha": 0.5
  },
  "seed": 1,
  "ablation": { "rag": true, "soft_prompt": true, "immobility": true, "llm_refining": true }
}
)cfg";
}

ExperimentConfig parse_experiment_config_text(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("config parse error: ") + e.what());
  }

  ExperimentConfig c;
  const auto& w = j.at("world");
  c.world.source_cities = w.at("source_cities").get<std::vector<std::string>>();
  c.world.target_city = w.at("target_city").get<std::string>();
  c.world.locations_per_city = w.value("locations_per_city", c.world.locations_per_city);
  c.world.c_poi = w.value("c_poi", c.world.c_poi);
  c.world.c_road = w.value("c_road", c.world.c_road);
  c.world.heterogeneity = w.value("heterogeneity", c.world.heterogeneity);
  c.world.extent = w.value("extent", c.world.extent);

  const auto& co = j.at("corpora");
  c.users_per_source_city_normal =
      co.value("users_per_source_city_normal", c.users_per_source_city_normal);
  c.users_per_source_city_disaster =
      co.value("users_per_source_city_disaster", c.users_per_source_city_disaster);
  c.users_target_normal = co.value("users_target_normal", c.users_target_normal);
  c.users_target_disaster = co.value("users_target_disaster", c.users_target_disaster);
  c.trajectories_per_user = co.value("trajectories_per_user", c.trajectories_per_user);
  c.min_length = co.value("min_length", c.min_length);
  c.max_length = co.value("max_length", c.max_length);
  if (co.contains("mobility")) {
    const auto& mo = co.at("mobility");
    c.mobility.base_stay_prob = mo.value("base_stay_prob", c.mobility.base_stay_prob);
    c.mobility.stay_slope = mo.value("stay_slope", c.mobility.stay_slope);
    c.mobility.stay_persistence = mo.value("stay_persistence", c.mobility.stay_persistence);
    c.mobility.residential_bias = mo.value("residential_bias", c.mobility.residential_bias);
    c.mobility.n_latents = mo.value("n_latents", c.mobility.n_latents);
  }
  if (co.contains("labels")) {
    c.labels.labels = co.at("labels").get<std::vector<std::string>>();
    c.labels.levels = static_cast<int>(c.labels.labels.size());
  }
  c.source_disaster_levels = co.value("source_disaster_levels", c.source_disaster_levels);
  c.target_disaster_level = co.value("target_disaster_level", c.target_disaster_level);
  c.holdout_fraction = co.value("holdout_fraction", c.holdout_fraction);

  if (j.contains("intention_space")) {
    const auto& is = j.at("intention_space");
    c.n_intentions = is.value("n_intentions", c.n_intentions);
    c.tca_m = is.value("tca_m", c.tca_m);
    c.tca_mu = is.value("tca_mu", c.tca_mu);
    c.tca_max_samples_per_side =
        is.value("tca_max_samples_per_side", c.tca_max_samples_per_side);
  }
  if (j.contains("clip")) {
    const auto& cl = j.at("clip");
    c.clip.n_prototypes = cl.value("n_prototypes", c.clip.n_prototypes);
    c.clip.width = cl.value("width", c.clip.width);
    c.clip.blocks = cl.value("blocks", c.clip.blocks);
    c.clip.heads = cl.value("heads", c.clip.heads);
    c.clip.d_k = cl.value("d_k", c.clip.d_k);
    c.clip.temp_infonce = cl.value("temp_infonce", c.clip.temp_infonce);
    c.clip.temp_class = cl.value("temp_class", c.clip.temp_class);
    c.clip.lr = cl.value("lr", c.clip.lr);
    c.clip.epochs = cl.value("epochs", c.clip.epochs);
    c.clip.batch_size = cl.value("batch_size", c.clip.batch_size);
    c.clip.seed = cl.value("seed", c.clip.seed);
    if (cl.contains("stay_still_token_ids"))
      c.clip.stay_still_token_ids = cl.at("stay_still_token_ids").get<std::vector<int>>();
  }
  if (j.contains("vocab")) {
    c.vocab_n = j.at("vocab").value("n", c.vocab_n);
    c.vocab_d = j.at("vocab").value("d", c.vocab_d);
    c.vocab_seed = j.at("vocab").value("seed", c.vocab_seed);
  }
  if (j.contains("retrieval")) c.retrieval_k = j.at("retrieval").value("k", c.retrieval_k);
  if (j.contains("refiner")) {
    const auto& r = j.at("refiner");
    c.backend = r.value("backend", c.backend);
    c.stub_rules.majority_threshold =
        r.value("majority_threshold", c.stub_rules.majority_threshold);
    c.stub_rules.severe_label = r.value("severe_label", c.stub_rules.severe_label);
    c.refine_retries = r.value("retries", c.refine_retries);
  }
  if (j.contains("predictor")) {
    const auto& p = j.at("predictor");
    c.predictor.base = p.value("base", c.predictor.base);
    if (p.contains("mode"))
      c.predictor.mode = modulation_mode_from_string(p.at("mode").get<std::string>());
    c.predictor.d_h = p.value("d_h", c.predictor.d_h);
    c.predictor.loc_embed = p.value("loc_embed", c.predictor.loc_embed);
    c.predictor.lr = p.value("lr", c.predictor.lr);
    c.predictor.epochs = p.value("epochs", c.predictor.epochs);
    c.predictor.seed = p.value("seed", c.predictor.seed);
    c.predictor.freq_alpha = p.value("freq_alpha", c.predictor.freq_alpha);
  }
  c.seed = j.value("seed", c.seed);
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    c.ablation.rag = a.value("rag", true);
    c.ablation.soft_prompt = a.value("soft_prompt", true);
    c.ablation.immobility = a.value("immobility", true);
    c.ablation.llm_refining = a.value("llm_refining", true);
  }
  c.validate();
  return c;
}

ExperimentConfig parse_experiment_config(const fs::path& path) {
  return parse_experiment_config_text(read_text_file(path));
}

bool user_in_holdout(const std::string& user_id, double fraction, std::uint64_t seed) {
  std::uint64_t h = splitmix64(fnv1a64(user_id) ^ seed);
  return static_cast<double>(h) / static_cast<double>(UINT64_MAX) < fraction;
}

// --- prediction / refined record files -----------------------------------------

void write_predictions(const std::vector<PredictionRecord>& records, const fs::path& path) {
  std::ostringstream out;
  out << ordered_json{{"format_version", kFormatVersion}, {"kind", "predictions"}}.dump() << "\n";
  for (const auto& r : records) {
    ordered_json j;
    j["id"] = r.id;
    j["user_id"] = r.user_id;
    j["city"] = r.city;
    j["level_ordinal"] = r.level_ordinal;
    j["prefix"] = r.prefix_location_ids;
    j["truth"] = r.truth_location_id;
    j["predicted_class"] = r.predicted_class;
    j["embedding"] = vector_to_json(r.embedding);
    out << j.dump() << "\n";
  }
  write_text_file(path, out.str());
}

std::vector<PredictionRecord> read_predictions(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  int line_no = 0;
  std::vector<PredictionRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail("predictions file " + path.string() + " line " + std::to_string(line_no) + ": " +
           e.what());
    }
    if (line_no == 1) {
      require(j.value("kind", "") == "predictions" &&
                  j.value("format_version", -1) == kFormatVersion,
              "predictions manifest mismatch");
      continue;
    }
    PredictionRecord r;
    r.id = j.at("id").get<std::string>();
    r.user_id = j.at("user_id").get<std::string>();
    r.city = j.at("city").get<std::string>();
    r.level_ordinal = j.at("level_ordinal").get<int>();
    r.prefix_location_ids = j.at("prefix").get<std::vector<std::string>>();
    r.truth_location_id = j.at("truth").get<std::string>();
    r.predicted_class = j.at("predicted_class").get<int>();
    r.embedding = vector_from_json(j.at("embedding"));
    out.push_back(std::move(r));
  }
  return out;
}

void write_refined(const std::vector<RefinedRecord>& records, const fs::path& path) {
  std::ostringstream out;
  out << ordered_json{{"format_version", kFormatVersion}, {"kind", "refined"}}.dump() << "\n";
  for (const auto& r : records) {
    ordered_json j;
    j["id"] = r.id;
    j["refined_class"] = r.refined_class;
    j["vector"] = vector_to_json(r.vector);
    j["decision"] = {{"q1_correct", r.decision.q1_correct},
                     {"q2_immobility", r.decision.q2_immobility
                                           ? ordered_json(*r.decision.q2_immobility)
                                           : ordered_json(nullptr)},
                     {"q3_class", r.decision.q3_class ? ordered_json(*r.decision.q3_class)
                                                      : ordered_json(nullptr)},
                     {"backend", r.decision.backend_id},
                     {"raw_answer", r.decision.raw_answer},
                     {"retry_count", r.decision.retry_count},
                     {"fell_back", r.decision.fell_back}};
    j["n_references"] = r.n_references;
    out << j.dump() << "\n";
  }
  write_text_file(path, out.str());
}

std::vector<RefinedRecord> read_refined(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  int line_no = 0;
  std::vector<RefinedRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail("refined file " + path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1) {
      require(j.value("kind", "") == "refined" && j.value("format_version", -1) == kFormatVersion,
              "refined manifest mismatch");
      continue;
    }
    RefinedRecord r;
    r.id = j.at("id").get<std::string>();
    r.refined_class = j.at("refined_class").get<int>();
    r.vector = vector_from_json(j.at("vector"));
    const auto& d = j.at("decision");
    r.decision.q1_correct = d.at("q1_correct").get<bool>();
    if (!d.at("q2_immobility").is_null())
      r.decision.q2_immobility = d.at("q2_immobility").get<bool>();
    if (!d.at("q3_class").is_null()) r.decision.q3_class = d.at("q3_class").get<int>();
    r.decision.backend_id = d.at("backend").get<std::string>();
    r.decision.raw_answer = d.at("raw_answer").get<std::string>();
    r.decision.retry_count = d.at("retry_count").get<int>();
    r.decision.fell_back = d.at("fell_back").get<bool>();
    r.n_references = j.at("n_references").get<int>();
    out.push_back(std::move(r));
  }
  return out;
}

ReferenceDisplay make_reference_display(const ScoredReference& ref,
                                        const Eigen::MatrixXd& class_anchors) {
  const IndexEntry& entry = *ref.entry;
  require(!entry.classes.empty(), "reference entry has no intentions");
  ReferenceDisplay display;
  display.trajectory_id = entry.trajectory_id;
  display.level = entry.level;
  display.distance = ref.distance;
  for (std::size_t i = 0; i + 1 < entry.classes.size(); ++i)
    display.sequence.push_back(class_anchors.row(entry.classes[i]).transpose());
  display.next_class = entry.classes.back();
  display.next = class_anchors.row(display.next_class).transpose();
  return display;
}

// --- report serialization --------------------------------------------------------

namespace {

ordered_json block_json(const MetricsBlock& b) {
  return ordered_json{{"acc1", b.ranking.acc1},
                      {"acc10", b.ranking.acc10},
                      {"mrr", b.ranking.mrr},
                      {"ndcg5", b.ranking.ndcg5},
                      {"ndcg10", b.ranking.ndcg10},
                      {"pre_immob", b.immobility.precision},
                      {"rec_immob", b.immobility.recall},
                      {"f1_immob", b.immobility.f1},
                      {"immob_degenerate", b.immobility.degenerate},
                      {"samples", b.samples}};
}

}  // namespace

std::string report_to_json(const MetricsReport& r) {
  ordered_json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "metrics_report";
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["ablation_disabled"] = r.ablation.describe();
  j["holdout_fraction"] = r.holdout_fraction;
  j["pipeline"] = block_json(r.pipeline);
  j["base_disaster"] = block_json(r.base_disaster);
  j["base_normal"] = block_json(r.base_normal);
  j["intention"] = {{"accuracy", r.intention.accuracy},
                    {"pre_immob", r.intention.immobility.precision},
                    {"rec_immob", r.intention.immobility.recall},
                    {"f1_immob", r.intention.immobility.f1},
                    {"immob_degenerate", r.intention.immobility.degenerate}};
  j["audit"] = {{"refined_changed", r.audit_refined_changed},
                {"zero_reference_prompts", r.audit_zero_reference_prompts},
                {"fallbacks", r.audit_fallbacks},
                {"soft_prompt_attached", r.audit_soft_prompt_attached}};
  j["diagnostics"] = {{"silhouette", r.silhouette},
                      {"tca_mmd_before", r.tca_mmd_before},
                      {"tca_mmd_after", r.tca_mmd_after},
                      {"clip_initial_loss", r.clip_initial_loss},
                      {"clip_final_loss", r.clip_final_loss},
                      {"predictor_initial_loss", r.predictor_initial_loss},
                      {"predictor_final_loss", r.predictor_final_loss},
                      {"prototype_weights_all_equal", r.prototype_weights_all_equal}};
  return j.dump(2) + "\n";
}

std::string report_to_table(const MetricsReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  auto row = [&out](const std::string& name, const MetricsBlock& b) {
    out << std::left << std::setw(16) << name << std::right;
    out << std::setw(8) << b.ranking.acc1 << std::setw(8) << b.ranking.acc10 << std::setw(8)
        << b.ranking.mrr << std::setw(8) << b.ranking.ndcg5 << std::setw(8) << b.ranking.ndcg10
        << std::setw(8) << b.immobility.precision << std::setw(8) << b.immobility.recall
        << std::setw(8) << b.immobility.f1 << std::setw(9) << b.samples << "\n";
  };
  out << "config " << r.config_hash << "  seed " << r.seed << "  ablation-disabled "
      << r.ablation.describe() << "\n";
  out << std::left << std::setw(16) << "variant" << std::right << std::setw(8) << "acc@1"
      << std::setw(8) << "acc@10" << std::setw(8) << "mrr" << std::setw(8) << "ndcg@5"
      << std::setw(8) << "ndcg@10" << std::setw(8) << "pre@im" << std::setw(8) << "rec@im"
      << std::setw(8) << "f1@im" << std::setw(9) << "samples" << "\n";
  row("pipeline", r.pipeline);
  row("base_disaster", r.base_disaster);
  row("base_normal", r.base_normal);
  out << "intention: acc " << r.intention.accuracy << "  pre@immob "
      << r.intention.immobility.precision << "  rec@immob " << r.intention.immobility.recall
      << "  f1@immob " << r.intention.immobility.f1 << "\n";
  out << "audit: refined_changed " << r.audit_refined_changed << "  zero_reference_prompts "
      << r.audit_zero_reference_prompts << "  fallbacks " << r.audit_fallbacks
      << "  soft_prompt_attached " << r.audit_soft_prompt_attached << "\n";
  return out.str();
}

// --- pipeline stages ----------------------------------------------------------------

World generate_world_stage(const ExperimentConfig& config) {
  return generate_world(config.world, derive_seed(config.seed, "world"));
}

CorpusBundle generate_corpora_stage(const ExperimentConfig& config, const World& world) {
  const std::string whash = world_hash(world);
  CorpusBundle corpora;
  corpora.eval_holdout_fraction = config.holdout_fraction;

  auto make_spec = [&](const std::string& city, Scenario scenario, int ordinal, int users,
                       const std::string& prefix) {
    ScenarioSpec spec;
    spec.city = city;
    spec.scenario = scenario;
    spec.disaster_ordinal = ordinal;
    spec.label_map = config.labels;
    spec.n_users = users;
    spec.min_length = config.min_length;
    spec.max_length = config.max_length;
    spec.trajectories_per_user = config.trajectories_per_user;
    spec.user_prefix = prefix;
    spec.mobility = config.mobility;
    return spec;
  };
  auto merge = [](Corpus& into, Corpus&& part) {
    for (auto& t : part.trajectories) into.trajectories.push_back(std::move(t));
  };

  corpora.d_ns.tag = "d_ns";
  corpora.d_ds.tag = "d_ds";
  corpora.d_nt.tag = "d_nt";
  corpora.d_dt.tag = "d_dt";
  for (Corpus* c : {&corpora.d_ns, &corpora.d_ds, &corpora.d_nt, &corpora.d_dt}) {
    c->world_hash = whash;
    c->seed = derive_seed(config.seed, "corpora");
  }
  for (const auto& city : config.world.source_cities) {
    merge(corpora.d_ns,
          generate_trajectories(world,
                                make_spec(city, Scenario::Normal, 0,
                                          config.users_per_source_city_normal,
                                          "ns_" + city + "_u"),
                                derive_seed(config.seed, "d_ns:" + city)));
    for (int level : config.source_disaster_levels)
      merge(corpora.d_ds,
            generate_trajectories(
                world,
                make_spec(city, Scenario::Disaster, level, config.users_per_source_city_disaster,
                          "ds_" + city + "_L" + std::to_string(level) + "_u"),
                derive_seed(config.seed, "d_ds:" + city + ":" + std::to_string(level))));
  }
  merge(corpora.d_nt,
        generate_trajectories(world,
                              make_spec(config.world.target_city, Scenario::Normal, 0,
                                        config.users_target_normal, "nt_u"),
                              derive_seed(config.seed, "d_nt")));
  merge(corpora.d_dt,
        generate_trajectories(world,
                              make_spec(config.world.target_city, Scenario::Disaster,
                                        config.target_disaster_level,
                                        config.users_target_disaster, "dt_u"),
                              derive_seed(config.seed, "d_dt")));
  return corpora;
}

namespace {

bool stage_fresh(const fs::path& dir, const std::string& stage, const std::string& key,
                 const std::vector<fs::path>& outputs) {
  fs::path key_file = dir / (".stage_" + stage);
  if (!fs::exists(key_file)) return false;
  if (read_text_file(key_file) != key) return false;
  for (const auto& p : outputs)
    if (!fs::exists(p)) return false;
  return true;
}

void stage_commit(const fs::path& dir, const std::string& stage, const std::string& key) {
  write_text_file(dir / (".stage_" + stage), key);
}

std::vector<TravelFeature> subsample(const std::vector<TravelFeature>& features, int cap) {
  if (static_cast<int>(features.size()) <= cap) return features;
  std::vector<TravelFeature> out;
  out.reserve(static_cast<std::size_t>(cap));
  double stride = static_cast<double>(features.size()) / cap;
  for (int i = 0; i < cap; ++i) out.push_back(features[static_cast<std::size_t>(i * stride)]);
  return out;
}

// immobility ablation: strip the flags so stays are mapped like any travel
std::vector<TravelFeature> strip_immobility(std::vector<TravelFeature> features) {
  for (auto& f : features) f.is_immobility = false;
  return features;
}

IntentionSequence map_variant(const std::vector<TravelFeature>& features, const IntentionModel& im,
                              bool immobility_enabled) {
  if (immobility_enabled) return map_to_intentions(features, im.tca, im.space);
  return map_to_intentions(strip_immobility(features), im.tca, im.space);
}

}  // namespace

std::vector<PredictionRecord> predict_intentions(const ExperimentConfig& config,
                                                 const World& world,
                                                 const IntentionClipModel& clip,
                                                 const Corpus& corpus, bool holdout_only) {
  std::vector<PredictionRecord> out;
  for (const auto& traj : corpus.trajectories) {
    if (holdout_only && !user_in_holdout(traj.user_id, config.holdout_fraction,
                                         derive_seed(config.seed, "split")))
      continue;
    auto features_all = extract_travel_features(traj, world);
    Eigen::MatrixXd feature_rows = feature_matrix(features_all);
    for (std::size_t t = 2; t < traj.records.size(); ++t) {
      const Eigen::Index travels = static_cast<Eigen::Index>(t) - 1;
      IntentionPrediction pred = clip.predict(feature_rows.topRows(travels));
      int predicted_class = pred.cls;
      if (!config.ablation.immobility && predicted_class == clip.immobility_class()) {
        Eigen::Index best;
        pred.logits.head(clip.n_intentions()).maxCoeff(&best);
        predicted_class = static_cast<int>(best);
      }
      PredictionRecord r;
      r.id = corpus.tag + ":" + traj.user_id + "@" + std::to_string(t);
      r.user_id = traj.user_id;
      r.city = traj.city;
      r.level_ordinal = traj.disaster_level.ordinal;
      for (std::size_t i = 0; i < t; ++i)
        r.prefix_location_ids.push_back(traj.records[i].location_id);
      r.truth_location_id = traj.records[t].location_id;
      r.predicted_class = predicted_class;
      r.embedding = pred.embedding;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<RefinedRecord> refine_predictions(const ExperimentConfig& config, const World& world,
                                              const IntentionModel& im,
                                              const IntentionClipModel& clip,
                                              const TrajectoryIndex& index,
                                              RefinerBackend& backend,
                                              const std::vector<PredictionRecord>& predictions) {
  const Eigen::MatrixXd anchors = clip.all_class_anchors();
  const Eigen::MatrixXd prompt_anchors =
      config.ablation.immobility ? anchors : anchors.topRows(anchors.rows() - 1);
  DisasterEncoder disaster_encoder(config.labels.levels, config.vocab_d,
                                   derive_seed(config.seed, "soft-prompt"));

  std::vector<RefinedRecord> out;
  out.reserve(predictions.size());
  for (const auto& record : predictions) {
    const City& city = world.city(record.city);
    require(record.prefix_location_ids.size() >= 2, "prediction record needs >= 2 prefix records");

    std::vector<TravelFeature> features;
    for (std::size_t i = 0; i + 1 < record.prefix_location_ids.size(); ++i)
      features.push_back(make_travel_feature(
          city, city.index_of(record.prefix_location_ids[i]),
          city.index_of(record.prefix_location_ids[i + 1]), world.c_poi, world.c_road));
    IntentionSequence intents = map_variant(features, im, config.ablation.immobility);

    std::vector<Eigen::VectorXd> query_embeddings;
    for (const auto& step : intents)
      query_embeddings.push_back(anchors.row(step.cls).transpose());

    DisasterLevel level = config.labels.level(record.level_ordinal);

    ReferenceSet refs;
    if (config.ablation.rag)
      refs = retrieve_references(index, intention_vector_rows(intents), level, config.retrieval_k);
    std::vector<ReferenceDisplay> displays;
    for (const auto& sr : refs.source_refs) displays.push_back(make_reference_display(sr, anchors));
    for (const auto& tr : refs.target_refs) displays.push_back(make_reference_display(tr, anchors));

    std::optional<Eigen::VectorXd> zd;
    if (config.ablation.soft_prompt) zd = disaster_encoder.encode(level);

    PromptBundle bundle =
        build_prompt(query_embeddings, record.embedding, record.predicted_class, displays, level,
                     prompt_anchors, zd, config.ablation.immobility);

    RefinedRecord rr;
    rr.id = record.id;
    rr.n_references = static_cast<int>(displays.size());
    if (config.ablation.llm_refining) {
      RefineResult res = refine(backend, bundle, im.space, config.refine_retries);
      rr.refined_class = res.refined_class;
      rr.vector = res.refined_vector;
      rr.decision = res.decision;
    } else {
      rr.refined_class = record.predicted_class;
      rr.vector = im.space.class_vector(record.predicted_class);
      rr.decision.q1_correct = true;
      rr.decision.backend_id = "disabled";
      rr.decision.raw_answer = "";
    }
    out.push_back(std::move(rr));
  }
  return out;
}

// --- run_experiment -------------------------------------------------------------------

MetricsReport run_experiment(const ExperimentConfig& config, const fs::path& workdir) {
  config.validate();
  fs::create_directories(workdir);

  // world
  const std::string world_key = content_hash(world_config_json(config.world).dump() +
                                             std::to_string(derive_seed(config.seed, "world")));
  const fs::path world_path = workdir / "world.json";
  World world;
  if (stage_fresh(workdir, "world", world_key, {world_path})) {
    world = load_world(world_path);
  } else {
    world = generate_world_stage(config);
    save_world(world, world_path);
    stage_commit(workdir, "world", world_key);
  }
  const std::string whash = world_hash(world);

  // corpora
  ordered_json corpora_cfg;
  corpora_cfg["users"] = {config.users_per_source_city_normal,
                          config.users_per_source_city_disaster, config.users_target_normal,
                          config.users_target_disaster};
  corpora_cfg["lengths"] = {config.min_length, config.max_length, config.trajectories_per_user};
  corpora_cfg["mobility"] = mobility_json(config.mobility);
  corpora_cfg["labels"] = config.labels.labels;
  corpora_cfg["levels"] = {config.source_disaster_levels, config.target_disaster_level};
  const std::string corpora_key = content_hash(
      whash + corpora_cfg.dump() + std::to_string(derive_seed(config.seed, "corpora")));
  const fs::path corpora_dir = workdir / "corpora";
  const std::vector<fs::path> corpus_paths = {corpora_dir / "d_ns.jsonl",
                                              corpora_dir / "d_ds.jsonl",
                                              corpora_dir / "d_nt.jsonl",
                                              corpora_dir / "d_dt.jsonl"};
  CorpusBundle corpora;
  corpora.eval_holdout_fraction = config.holdout_fraction;
  if (stage_fresh(workdir, "corpora", corpora_key, corpus_paths)) {
    corpora.d_ns = load_corpus(corpus_paths[0]);
    corpora.d_ds = load_corpus(corpus_paths[1]);
    corpora.d_nt = load_corpus(corpus_paths[2]);
    corpora.d_dt = load_corpus(corpus_paths[3]);
  } else {
    corpora = generate_corpora_stage(config, world);
    save_corpus(corpora.d_ns, corpus_paths[0]);
    save_corpus(corpora.d_ds, corpus_paths[1]);
    save_corpus(corpora.d_nt, corpus_paths[2]);
    save_corpus(corpora.d_dt, corpus_paths[3]);
    stage_commit(workdir, "corpora", corpora_key);
  }
  const std::string corpora_content_key =
      content_hash(corpus_to_string(corpora.d_ns) + corpus_to_string(corpora.d_ds) +
                   corpus_to_string(corpora.d_nt) + corpus_to_string(corpora.d_dt));

  // intention space
  ordered_json space_cfg = {{"n_intentions", config.n_intentions},
                            {"tca_m", config.tca_m},
                            {"tca_mu", config.tca_mu},
                            {"cap", config.tca_max_samples_per_side}};
  const std::string space_key = content_hash(corpora_content_key + space_cfg.dump() +
                                             std::to_string(derive_seed(config.seed, "space")));
  const fs::path space_path = workdir / "intention_model.json";
  IntentionModel im;
  if (stage_fresh(workdir, "space", space_key, {space_path})) {
    im = load_intention_model(space_path);
  } else {
    std::vector<TravelFeature> source_features, target_features;
    for (const Corpus* c : {&corpora.d_ns, &corpora.d_ds})
      for (const auto& traj : c->trajectories)
        for (auto& f : extract_travel_features(traj, world))
          source_features.push_back(std::move(f));
    for (const auto& traj : corpora.d_nt.trajectories)
      for (auto& f : extract_travel_features(traj, world)) target_features.push_back(std::move(f));

    im.tca = fit_tca(subsample(source_features, config.tca_max_samples_per_side),
                     subsample(target_features, config.tca_max_samples_per_side), config.tca_m,
                     config.tca_mu);
    std::vector<Eigen::VectorXd> transformed;
    for (const auto* set : {&source_features, &target_features})
      for (const auto& f : *set)
        if (!f.is_immobility) transformed.push_back(im.tca.project(f.values));
    im.space = fit_intention_clusters(transformed, config.n_intentions,
                                      derive_seed(config.seed, "clusters"),
                                      /*immobility_distance_factor=*/2.0,
                                      /*rescale_to_unit_rms=*/true);
    im.world_hash = whash;
    save_intention_model(im, space_path);
    stage_commit(workdir, "space", space_key);
  }

  // vocabulary + alignment model
  VocabularyMatrix vocab = synth_vocabulary(config.vocab_n, config.vocab_d, config.vocab_seed);
  const fs::path vocab_path = workdir / "vocab.txt";
  if (!fs::exists(vocab_path)) save_vocabulary(vocab, vocab_path);

  ClipConfig clip_cfg = config.clip;
  clip_cfg.seed = derive_seed(config.seed, "clip");
  const std::string clip_key =
      content_hash(space_key + clip_config_json(clip_cfg).dump() + vocab.hash() +
                   (config.ablation.immobility ? "immob-on" : "immob-off"));
  const fs::path clip_path = workdir / "clip.json";
  const fs::path clip_train_path = workdir / "clip_train.json";
  double clip_initial_loss = 0.0, clip_final_loss = 0.0;
  if (!stage_fresh(workdir, "clip", clip_key, {clip_path, clip_train_path})) {
    IntentionClipModel model(travel_feature_dim(world), im.tca.standardizer, im.space.centroids,
                             im.space.immobility_vector, clip_cfg, vocab);
    auto dataset = build_clip_dataset({&corpora.d_ns, &corpora.d_nt}, world, im.tca, im.space,
                                      config.ablation.immobility);
    ClipTrainReport tr = model.train(dataset);
    clip_initial_loss = tr.initial_loss;
    clip_final_loss = tr.final_loss;
    model.save(clip_path, corpora_content_key);
    write_text_file(clip_train_path, ordered_json{{"initial_loss", tr.initial_loss},
                                                  {"final_loss", tr.final_loss},
                                                  {"reverted", tr.reverted},
                                                  {"epoch_loss", tr.epoch_loss}}
                                             .dump(2) +
                                         "\n");
    stage_commit(workdir, "clip", clip_key);
  } else {
    ordered_json tr = ordered_json::parse(read_text_file(clip_train_path));
    clip_initial_loss = tr.at("initial_loss").get<double>();
    clip_final_loss = tr.at("final_loss").get<double>();
  }
  IntentionClipModel clip_model = IntentionClipModel::load(clip_path, vocab);

  // retrieval index over d_ds + d_nt + other-level d_dt
  Corpus dt_other_levels;
  dt_other_levels.tag = "d_dt_other";
  dt_other_levels.world_hash = whash;
  dt_other_levels.seed = corpora.d_dt.seed;
  for (const auto& traj : corpora.d_dt.trajectories)
    if (traj.disaster_level.ordinal != config.target_disaster_level)
      dt_other_levels.trajectories.push_back(traj);

  const std::string index_key =
      content_hash(space_key + corpora_content_key + std::to_string(config.retrieval_k) +
                   (config.ablation.immobility ? "immob-on" : "immob-off"));
  const fs::path index_path = workdir / "index.json";
  TrajectoryIndex index;
  if (stage_fresh(workdir, "index", index_key, {index_path})) {
    index = load_index(index_path);
  } else {
    if (config.ablation.immobility) {
      index = build_index({&corpora.d_ds, &corpora.d_nt, &dt_other_levels}, world, im,
                          config.retrieval_k);
    } else {
      // entries must follow the same immobility treatment as the rest of the variant
      index.default_k = config.retrieval_k;
      index.world_hash = whash;
      index.space_hash = content_hash(intention_model_to_string(im));
      for (const Corpus* c : {&corpora.d_ds, &corpora.d_nt, &dt_other_levels}) {
        require(c->world_hash == im.world_hash, "corpus/world hash mismatch");
        index.corpus_hashes.push_back(content_hash(corpus_to_string(*c)));
        for (std::size_t i = 0; i < c->trajectories.size(); ++i) {
          const Trajectory& traj = c->trajectories[i];
          auto intents = map_to_intentions(
              strip_immobility(extract_travel_features(traj, world)), im.tca, im.space);
          IndexEntry entry;
          entry.trajectory_id = c->tag + "#" + std::to_string(i);
          entry.city = traj.city;
          entry.from_source_city = !world.is_target(traj.city);
          entry.scenario = traj.scenario;
          entry.level = traj.disaster_level;
          for (const auto& s : intents) entry.classes.push_back(s.cls);
          entry.vectors = intention_vector_rows(intents);
          index.entries.push_back(std::move(entry));
        }
      }
    }
    save_index(index, index_path);
    stage_commit(workdir, "index", index_key);
  }

  // location predictors (modulated + unmodulated baseline) on the d_nt train part
  const City& target = world.city(config.world.target_city);
  std::vector<std::string> location_ids;
  for (const auto& loc : target.locations) location_ids.push_back(loc.id);

  std::vector<PredictorSample> train_samples;
  for (const auto& traj : corpora.d_nt.trajectories) {
    if (user_in_holdout(traj.user_id, config.holdout_fraction, derive_seed(config.seed, "split")))
      continue;
    PredictorSample s;
    s.user_id = traj.user_id;
    for (const auto& r : traj.records) s.locations.push_back(target.index_of(r.location_id));
    auto features = extract_travel_features(traj, world);
    for (const auto& step : map_variant(features, im, config.ablation.immobility))
      s.intentions.push_back(step.vector);
    train_samples.push_back(std::move(s));
  }
  require(!train_samples.empty(), "no training users left after the holdout split");

  PredictorConfig mod_cfg = config.predictor;
  mod_cfg.seed = derive_seed(config.seed, "predictor");
  PredictorConfig base_cfg = mod_cfg;
  base_cfg.mode = ModulationMode::None;

  const std::string predictor_key = content_hash(
      corpora_content_key + space_key + predictor_config_json(mod_cfg).dump() +
      std::to_string(config.holdout_fraction) +
      (config.ablation.immobility ? "immob-on" : "immob-off"));
  const fs::path mod_path = workdir / "predictor_modulated.json";
  const fs::path base_path = workdir / "predictor_baseline.json";
  const fs::path predictor_train_path = workdir / "predictor_train.json";
  double predictor_initial_loss = 0.0, predictor_final_loss = 0.0;
  if (!stage_fresh(workdir, "predictor", predictor_key,
                   {mod_path, base_path, predictor_train_path})) {
    LocationPredictor modulated(location_ids, config.tca_m, mod_cfg);
    PredictorTrainReport mr = modulated.train(train_samples);
    modulated.save(mod_path);
    LocationPredictor baseline(location_ids, config.tca_m, base_cfg);
    baseline.train(train_samples);
    baseline.save(base_path);
    predictor_initial_loss = mr.initial_loss;
    predictor_final_loss = mr.final_loss;
    write_text_file(predictor_train_path, ordered_json{{"initial_loss", mr.initial_loss},
                                                       {"final_loss", mr.final_loss},
                                                       {"reverted", mr.reverted}}
                                                  .dump(2) +
                                              "\n");
    stage_commit(workdir, "predictor", predictor_key);
  } else {
    ordered_json tr = ordered_json::parse(read_text_file(predictor_train_path));
    predictor_initial_loss = tr.at("initial_loss").get<double>();
    predictor_final_loss = tr.at("final_loss").get<double>();
  }
  LocationPredictor modulated = LocationPredictor::load(mod_path);
  LocationPredictor baseline = LocationPredictor::load(base_path);

  // evaluation
  MetricsReport report;
  report.config_hash = config.hash();
  report.seed = config.seed;
  report.ablation = config.ablation;
  report.holdout_fraction = config.holdout_fraction;
  report.tca_mmd_before = im.tca.mmd_before;
  report.tca_mmd_after = im.tca.mmd_after;
  report.clip_initial_loss = clip_initial_loss;
  report.clip_final_loss = clip_final_loss;
  report.predictor_initial_loss = predictor_initial_loss;
  report.predictor_final_loss = predictor_final_loss;

  {
    const Eigen::MatrixXd& h = clip_model.params().value("proto.h");
    bool all_equal = false;
    for (Eigen::Index r = 0; r < h.rows(); ++r)
      if (h.row(r).maxCoeff() == h.row(r).minCoeff()) all_equal = true;
    report.prototype_weights_all_equal = all_equal;
  }
  {
    std::vector<Eigen::VectorXd> sil_points;
    for (const auto& traj : corpora.d_nt.trajectories) {
      for (const auto& f : extract_travel_features(traj, world))
        if (!f.is_immobility && static_cast<int>(sil_points.size()) < 200)
          sil_points.push_back(im.space.feature_scale * im.tca.project(f.values));
      if (sil_points.size() >= 200) break;
    }
    report.silhouette = silhouette_score(sil_points, im.space);
  }

  StubBackend stub(config.stub_rules);
  std::shared_ptr<RefinerBackend> http;
  if (config.backend == "http")
    http = std::make_shared<HttpBackend>(make_http_transport_from_env());
  RefinerBackend& backend = http ? *http : static_cast<RefinerBackend&>(stub);

  std::vector<PredictionRecord> predictions =
      predict_intentions(config, world, clip_model, corpora.d_dt, /*holdout_only=*/true);
  require(!predictions.empty(), "no evaluation samples in the held-out disaster split");
  std::vector<RefinedRecord> refined =
      refine_predictions(config, world, im, clip_model, index, backend, predictions);

  std::vector<int> pipeline_ranks, base_ranks, refined_classes, true_classes;
  std::vector<bool> pipeline_immob, base_immob, truth_immob;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const PredictionRecord& p = predictions[i];
    const RefinedRecord& r = refined[i];
    require(p.id == r.id, "prediction/refined records out of order");

    std::vector<int> prefix;
    for (const auto& id : p.prefix_location_ids) prefix.push_back(target.index_of(id));
    const int truth = target.index_of(p.truth_location_id);
    const int current = prefix.back();

    PredictionRanking ranking = modulated.predict(prefix, p.user_id, &r.vector);
    PredictionRanking base_ranking = baseline.predict(prefix, p.user_id, nullptr);

    pipeline_ranks.push_back(ranking.rank_of(truth));
    base_ranks.push_back(base_ranking.rank_of(truth));
    pipeline_immob.push_back(ranking.top1() == current);
    base_immob.push_back(base_ranking.top1() == current);
    truth_immob.push_back(truth == current);
    refined_classes.push_back(r.refined_class);

    TravelFeature actual = make_travel_feature(target, current, truth, world.c_poi, world.c_road);
    if (!config.ablation.immobility) actual.is_immobility = false;
    true_classes.push_back(map_to_intentions({actual}, im.tca, im.space).front().cls);

    if (r.refined_class != p.predicted_class) ++report.audit_refined_changed;
    if (r.n_references == 0) ++report.audit_zero_reference_prompts;
    if (r.decision.fell_back) ++report.audit_fallbacks;
    if (config.ablation.soft_prompt) ++report.audit_soft_prompt_attached;
  }

  report.pipeline.ranking = compute_ranking_metrics(pipeline_ranks);
  report.pipeline.immobility = compute_immobility_prf(pipeline_immob, truth_immob);
  report.pipeline.samples = static_cast<int>(pipeline_ranks.size());
  report.base_disaster.ranking = compute_ranking_metrics(base_ranks);
  report.base_disaster.immobility = compute_immobility_prf(base_immob, truth_immob);
  report.base_disaster.samples = static_cast<int>(base_ranks.size());
  report.intention =
      compute_intention_metrics(refined_classes, true_classes, im.space.immobility_class());

  // unmodulated base on the held-out normal split (distribution-shift reference)
  {
    std::vector<int> ranks;
    std::vector<bool> immob_pred, immob_truth;
    for (const auto& traj : corpora.d_nt.trajectories) {
      if (!user_in_holdout(traj.user_id, config.holdout_fraction,
                           derive_seed(config.seed, "split")))
        continue;
      std::vector<int> loc_indices;
      for (const auto& rec : traj.records) loc_indices.push_back(target.index_of(rec.location_id));
      for (std::size_t t = 2; t < traj.records.size(); ++t) {
        PredictionRanking ranking = baseline.predict(
            std::vector<int>(loc_indices.begin(), loc_indices.begin() + static_cast<long>(t)),
            traj.user_id, nullptr);
        ranks.push_back(ranking.rank_of(loc_indices[t]));
        immob_pred.push_back(ranking.top1() == loc_indices[t - 1]);
        immob_truth.push_back(loc_indices[t] == loc_indices[t - 1]);
      }
    }
    require(!ranks.empty(), "no evaluation samples in the held-out normal split");
    report.base_normal.ranking = compute_ranking_metrics(ranks);
    report.base_normal.immobility = compute_immobility_prf(immob_pred, immob_truth);
    report.base_normal.samples = static_cast<int>(ranks.size());
  }

  write_predictions(predictions, workdir / "predictions.jsonl");
  write_refined(refined, workdir / "refined.jsonl");
  write_text_file(workdir / "report.json", report_to_json(report));
  write_text_file(workdir / "report.txt", report_to_table(report));
  return report;
}

}  // namespace mobintent
