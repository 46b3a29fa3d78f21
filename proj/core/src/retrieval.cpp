#include "mobintent/retrieval.hpp"

#include <algorithm>

#include "mobintent/corpus_io.hpp"
#include "mobintent/dtw.hpp"
#include "mobintent/jsonio.hpp"
#include "mobintent/travel_features.hpp"
#include "mobintent/worldgen.hpp"

namespace mobintent {

std::string IndexEntry::tag() const {
  if (from_source_city) return "source-disaster[" + std::to_string(level.ordinal) + "]";
  if (scenario == Scenario::Normal) return "target-normal";
  return "target-disaster[" + std::to_string(level.ordinal) + "]";
}

Eigen::MatrixXd intention_vector_rows(const IntentionSequence& seq) {
  require(!seq.empty(), "empty intention sequence");
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(seq.size()), seq.front().vector.size());
  for (std::size_t i = 0; i < seq.size(); ++i)
    rows.row(static_cast<Eigen::Index>(i)) = seq[i].vector.transpose();
  return rows;
}

TrajectoryIndex build_index(const std::vector<const Corpus*>& corpora, const World& world,
                            const IntentionModel& model, int default_k) {
  TrajectoryIndex index;
  index.default_k = default_k;
  index.world_hash = world_hash(world);
  index.space_hash = content_hash(intention_model_to_string(model));
  for (const Corpus* corpus : corpora) {
    require(corpus->world_hash == model.world_hash,
            "corpus '" + corpus->tag + "' world hash does not match the intention space manifest");
    index.corpus_hashes.push_back(content_hash(corpus_to_string(*corpus)));
    for (std::size_t i = 0; i < corpus->trajectories.size(); ++i) {
      const Trajectory& traj = corpus->trajectories[i];
      auto features = extract_travel_features(traj, world);
      auto intents = map_to_intentions(features, model.tca, model.space);
      IndexEntry entry;
      entry.trajectory_id = corpus->tag + "#" + std::to_string(i);
      entry.city = traj.city;
      entry.from_source_city = !world.is_target(traj.city);
      entry.scenario = traj.scenario;
      entry.level = traj.disaster_level;
      entry.classes.reserve(intents.size());
      for (const auto& s : intents) entry.classes.push_back(s.cls);
      entry.vectors = intention_vector_rows(intents);
      index.entries.push_back(std::move(entry));
    }
  }
  return index;
}

namespace {

void top_k(std::vector<ScoredReference>& refs, int k) {
  std::stable_sort(refs.begin(), refs.end(), [](const ScoredReference& a, const ScoredReference& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.entry->tag() != b.entry->tag()) return a.entry->tag() < b.entry->tag();
    return a.entry->trajectory_id < b.entry->trajectory_id;
  });
  if (static_cast<int>(refs.size()) > k) refs.resize(static_cast<std::size_t>(k));
}

}  // namespace

ReferenceSet retrieve_references(const TrajectoryIndex& index, const Eigen::MatrixXd& query_vectors,
                                 const DisasterLevel& level, int k,
                                 const std::string& exclude_trajectory_id) {
  require(k >= 1, "k must be >= 1");
  ReferenceSet out;
  if (query_vectors.rows() == 0) return out;
  for (const IndexEntry& entry : index.entries) {
    if (entry.trajectory_id == exclude_trajectory_id) continue;
    bool source_candidate = entry.from_source_city && entry.level.ordinal == level.ordinal;
    bool target_candidate = !entry.from_source_city &&
                            (entry.scenario == Scenario::Normal ||
                             entry.level.ordinal != level.ordinal);
    if (!source_candidate && !target_candidate) continue;
    double d = dtw_distance(query_vectors, entry.vectors);
    if (source_candidate) out.source_refs.push_back({d, &entry});
    if (target_candidate) out.target_refs.push_back({d, &entry});
  }
  top_k(out.source_refs, k);
  top_k(out.target_refs, k);
  return out;
}

std::string index_to_string(const TrajectoryIndex& index) {
  nlohmann::ordered_json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "trajectory_index";
  j["manifest"] = {{"space_hash", index.space_hash},
                   {"world_hash", index.world_hash},
                   {"corpus_hashes", index.corpus_hashes},
                   {"default_k", index.default_k}};
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : index.entries) {
    nlohmann::ordered_json ej;
    ej["trajectory_id"] = e.trajectory_id;
    ej["city"] = e.city;
    ej["from_source_city"] = e.from_source_city;
    ej["scenario"] = to_string(e.scenario);
    ej["level"] = {{"ordinal", e.level.ordinal}, {"label", e.level.label}};
    ej["classes"] = e.classes;
    ej["vectors"] = matrix_to_json(e.vectors);
    j["entries"].push_back(std::move(ej));
  }
  return j.dump() + "\n";
}

void save_index(const TrajectoryIndex& index, const std::filesystem::path& path) {
  write_text_file(path, index_to_string(index));
}

TrajectoryIndex load_index(const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail("index file " + path.string() + ": " + e.what());
  }
  require(j.value("format_version", -1) == kFormatVersion, "index file: format_version mismatch");
  TrajectoryIndex index;
  index.space_hash = j.at("manifest").at("space_hash").get<std::string>();
  index.world_hash = j.at("manifest").at("world_hash").get<std::string>();
  index.corpus_hashes = j.at("manifest").at("corpus_hashes").get<std::vector<std::string>>();
  index.default_k = j.at("manifest").at("default_k").get<int>();
  for (const auto& ej : j.at("entries")) {
    IndexEntry e;
    e.trajectory_id = ej.at("trajectory_id").get<std::string>();
    e.city = ej.at("city").get<std::string>();
    e.from_source_city = ej.at("from_source_city").get<bool>();
    e.scenario = scenario_from_string(ej.at("scenario").get<std::string>());
    e.level.ordinal = ej.at("level").at("ordinal").get<int>();
    e.level.label = ej.at("level").at("label").get<std::string>();
    e.classes = ej.at("classes").get<std::vector<int>>();
    e.vectors = matrix_from_json(ej.at("vectors"));
    index.entries.push_back(std::move(e));
  }
  return index;
}

}  // namespace mobintent
