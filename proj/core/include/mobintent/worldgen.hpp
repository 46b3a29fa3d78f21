#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mobintent/world.hpp"

namespace mobintent {

struct WorldConfig {
  std::vector<std::string> source_cities;
  std::string target_city;
  int locations_per_city = 12;
  int c_poi = 4;
  int c_road = 2;
  double heterogeneity = 0.5;  // cross-city POI propensity spread, 0 = identical cities
  double extent = 10.0;        // coordinate box side

  void validate() const;
};

/// Deterministic synthetic world. Same (config, seed) yields a byte-identical world.
World generate_world(const WorldConfig& config, std::uint64_t seed);

struct MobilityParams {
  double base_stay_prob = 0.2;     // immobility probability at ordinal 0
  double stay_slope = 0.08;        // added stay probability per disaster ordinal
  double stay_persistence = 0.0;   // added stay probability right after a stay
  double residential_bias = 1.5;   // per-ordinal destination reweight toward residential POIs
  int n_latents = 6;               // latent 0 = stay, 1 = home, 2 = work, rest category visits
};

struct ScenarioSpec {
  std::string city;
  Scenario scenario = Scenario::Normal;
  int disaster_ordinal = 0;
  DisasterLabelMap label_map;
  int n_users = 50;
  int min_length = 6;   // records per trajectory, inclusive
  int max_length = 12;  // inclusive
  int trajectories_per_user = 1;
  std::string user_prefix = "u";
  MobilityParams mobility;

  void validate() const;
};

/// Deterministic synthetic corpus with disaster-induced mobility shift:
/// stay probability rises with the ordinal and destinations reweight toward
/// residential-heavy locations. Latent intentions are recorded per travel for
/// evaluation only.
Corpus generate_trajectories(const World& world, const ScenarioSpec& spec, std::uint64_t seed);

/// Ordinal k iff mm lies in [thresholds[k-1], thresholds[k]); 0 below thresholds[0].
DisasterLevel disaster_level_from_precipitation(double mm_per_day,
                                                const std::vector<double>& thresholds,
                                                const DisasterLabelMap& labels);

std::string world_hash(const World& world);

}  // namespace mobintent
