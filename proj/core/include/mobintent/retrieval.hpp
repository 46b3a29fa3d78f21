#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "mobintent/intention.hpp"
#include "mobintent/world.hpp"

namespace mobintent {

struct IndexEntry {
  std::string trajectory_id;  // corpus tag + position, unique within the index
  std::string city;
  bool from_source_city = false;
  Scenario scenario = Scenario::Normal;
  DisasterLevel level;
  std::vector<int> classes;  // intention class per travel
  Eigen::MatrixXd vectors;   // travels x m, the X_t rows used by the DTW scan

  std::string tag() const;  // source-disaster[k] | target-normal | target-disaster[k]
};

/// Immutable intention-level trajectory database; every entry derives from the
/// shared intention space.
struct TrajectoryIndex {
  std::string space_hash;
  std::string world_hash;
  std::vector<std::string> corpus_hashes;
  int default_k = 3;
  std::vector<IndexEntry> entries;
};

struct ScoredReference {
  double distance = 0.0;
  const IndexEntry* entry = nullptr;
};

/// Retrieved external knowledge: same-disaster source-city trajectories and
/// cross-scenario target-city trajectories, each sorted ascending by distance.
struct ReferenceSet {
  std::vector<ScoredReference> source_refs;
  std::vector<ScoredReference> target_refs;
};

TrajectoryIndex build_index(const std::vector<const Corpus*>& corpora, const World& world,
                            const IntentionModel& model, int default_k = 3);

/// Linear DTW scan. source_refs come from source-city entries at exactly the
/// query level; target_refs from target-city entries that are normal or at a
/// different level. Ties break by (distance, tag, trajectory id); the query's
/// own trajectory id is excluded.
ReferenceSet retrieve_references(const TrajectoryIndex& index,
                                 const Eigen::MatrixXd& query_vectors, const DisasterLevel& level,
                                 int k, const std::string& exclude_trajectory_id = "");

Eigen::MatrixXd intention_vector_rows(const IntentionSequence& seq);

void save_index(const TrajectoryIndex& index, const std::filesystem::path& path);
TrajectoryIndex load_index(const std::filesystem::path& path);
std::string index_to_string(const TrajectoryIndex& index);

}  // namespace mobintent
