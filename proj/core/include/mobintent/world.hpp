#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mobintent/common.hpp"

namespace mobintent {

/// An area of geographical space with POI and transport attributes.
struct Location {
  std::string id;
  double x = 0.0;
  double y = 0.0;
  std::vector<int> poi_counts;        // one count per POI category
  double transport_distance = 0.0;    // distance to nearest transport facility, >= 0
};

/// A city: locations plus per-ordered-pair road-type counts.
struct City {
  std::string name;
  std::vector<Location> locations;
  // road counts per ordered location pair (indices into `locations`), length c_road each
  std::map<std::pair<int, int>, std::vector<int>> road_counts;

  std::unordered_map<std::string, int> id_index;

  int index_of(const std::string& loc_id) const {
    auto it = id_index.find(loc_id);
    if (it == id_index.end()) fail("unknown location id '" + loc_id + "' in city " + name);
    return it->second;
  }
  bool has(const std::string& loc_id) const { return id_index.count(loc_id) > 0; }
  const std::vector<int>& roads(int from, int to) const {
    auto it = road_counts.find({from, to});
    if (it == road_counts.end()) fail("no road counts for pair in city " + name);
    return it->second;
  }
  void rebuild_index() {
    id_index.clear();
    for (int i = 0; i < static_cast<int>(locations.size()); ++i) {
      auto [it, fresh] = id_index.emplace(locations[static_cast<std::size_t>(i)].id, i);
      (void)it;
      require(fresh, "duplicate location id in city " + name);
    }
  }
};

struct World {
  std::vector<City> cities;
  int c_poi = 0;
  int c_road = 0;
  std::vector<std::string> source_cities;
  std::string target_city;
  std::uint64_t seed = 0;

  const City& city(const std::string& name) const {
    for (const auto& c : cities)
      if (c.name == name) return c;
    fail("unknown city '" + name + "'");
  }
  bool is_target(const std::string& name) const { return name == target_city; }
};

/// Ordinal disaster severity with its prompt label. Ordinal 0 is always "no disaster".
struct DisasterLevel {
  int ordinal = 0;
  std::string label = "no disaster";

  bool operator==(const DisasterLevel&) const = default;
};

/// Maps ordinals 0..levels-1 to the textual labels used in prompts.
struct DisasterLabelMap {
  int levels = 5;
  // ordinal -> label; default folds ordinals {3,4} onto "severe disaster"
  std::vector<std::string> labels = {"no disaster", "minor disaster", "general disaster",
                                     "severe disaster", "severe disaster"};

  DisasterLevel level(int ordinal) const {
    require(ordinal >= 0 && ordinal < levels, "disaster ordinal out of range: " + std::to_string(ordinal));
    require(static_cast<int>(labels.size()) == levels, "disaster label map size mismatch");
    return DisasterLevel{ordinal, labels[static_cast<std::size_t>(ordinal)]};
  }
};

enum class Scenario { Normal, Disaster };

inline std::string to_string(Scenario s) { return s == Scenario::Normal ? "normal" : "disaster"; }
inline Scenario scenario_from_string(const std::string& s) {
  if (s == "normal") return Scenario::Normal;
  if (s == "disaster") return Scenario::Disaster;
  fail("unknown scenario '" + s + "'");
}

struct TrajectoryRecord {
  std::int64_t t = 0;
  std::string location_id;
};

/// Timestamped location sequence for one user in one city and scenario.
struct Trajectory {
  std::string user_id;
  std::string city;
  Scenario scenario = Scenario::Normal;
  DisasterLevel disaster_level;
  std::vector<TrajectoryRecord> records;
  // generator-internal latent intention per travel; evaluation only, never a training input
  std::vector<int> ground_truth_intentions;

  std::size_t travels() const { return records.empty() ? 0 : records.size() - 1; }
  void validate(const World& world) const;
};

struct Corpus {
  std::string tag;
  std::uint64_t seed = 0;
  std::string world_hash;
  std::vector<Trajectory> trajectories;
};

/// The four training corpora: normal/disaster x source/target.
struct CorpusBundle {
  Corpus d_ns;  // normal, source cities
  Corpus d_ds;  // disaster, source cities
  Corpus d_nt;  // normal, target city
  Corpus d_dt;  // disaster, target city
  double eval_holdout_fraction = 0.3;  // held-out split of d_dt / d_nt, by user
};

}  // namespace mobintent
