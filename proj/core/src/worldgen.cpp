#include "mobintent/worldgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mobintent/corpus_io.hpp"

namespace mobintent {

void WorldConfig::validate() const {
  require(source_cities.size() >= 2, "world config needs at least 2 source cities");
  require(!target_city.empty(), "world config needs a target city");
  for (const auto& s : source_cities)
    require(s != target_city, "target city must not appear among source cities");
  require(locations_per_city >= 4, "locations_per_city must be >= 4");
  require(c_poi >= 2, "c_poi must be >= 2");
  require(c_road >= 1, "c_road must be >= 1");
  require(heterogeneity >= 0.0, "heterogeneity must be >= 0");
  require(extent > 0.0, "extent must be > 0");
}

namespace {

City generate_city(const std::string& name, const WorldConfig& cfg,
                   const std::vector<double>& base_poi_rate, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // city-specific POI propensity around the shared base rate
  std::vector<double> rate(static_cast<std::size_t>(cfg.c_poi));
  for (int k = 0; k < cfg.c_poi; ++k) {
    double perturb = (unit(rng) * 2.0 - 1.0) * 0.9;
    rate[static_cast<std::size_t>(k)] =
        base_poi_rate[static_cast<std::size_t>(k)] * (1.0 + cfg.heterogeneity * perturb);
  }

  City city;
  city.name = name;
  city.locations.reserve(static_cast<std::size_t>(cfg.locations_per_city));
  for (int i = 0; i < cfg.locations_per_city; ++i) {
    Location loc;
    loc.id = "r" + std::to_string(i);
    loc.x = unit(rng) * cfg.extent;
    loc.y = unit(rng) * cfg.extent;
    loc.poi_counts.resize(static_cast<std::size_t>(cfg.c_poi));
    for (int k = 0; k < cfg.c_poi; ++k) {
      std::poisson_distribution<int> pois(rate[static_cast<std::size_t>(k)]);
      loc.poi_counts[static_cast<std::size_t>(k)] = pois(rng);
    }
    loc.transport_distance = unit(rng) * cfg.extent * 0.25;
    city.locations.push_back(std::move(loc));
  }

  std::poisson_distribution<int> road(1.2);
  for (int a = 0; a < cfg.locations_per_city; ++a) {
    for (int b = 0; b < cfg.locations_per_city; ++b) {
      std::vector<int> counts(static_cast<std::size_t>(cfg.c_road), 0);
      if (a != b)
        for (int r = 0; r < cfg.c_road; ++r) counts[static_cast<std::size_t>(r)] = road(rng);
      city.road_counts[{a, b}] = std::move(counts);
    }
  }
  city.rebuild_index();
  return city;
}

}  // namespace

World generate_world(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  World world;
  world.c_poi = config.c_poi;
  world.c_road = config.c_road;
  world.source_cities = config.source_cities;
  world.target_city = config.target_city;
  world.seed = seed;

  auto base_rng = make_rng(derive_seed(seed, "poi-base"));
  std::uniform_real_distribution<double> base(1.0, 5.0);
  std::vector<double> base_poi_rate(static_cast<std::size_t>(config.c_poi));
  for (auto& r : base_poi_rate) r = base(base_rng);

  std::vector<std::string> names = config.source_cities;
  names.push_back(config.target_city);
  for (const auto& name : names)
    world.cities.push_back(
        generate_city(name, config, base_poi_rate, derive_seed(seed, "city:" + name)));
  return world;
}

void ScenarioSpec::validate() const {
  require(n_users >= 1, "scenario needs at least one user");
  require(min_length >= 2 && max_length >= min_length, "invalid trajectory length range");
  require(trajectories_per_user >= 1, "trajectories_per_user must be >= 1");
  require(disaster_ordinal >= 0 && disaster_ordinal < label_map.levels,
          "disaster_level exceeds configured levels");
  if (scenario == Scenario::Normal)
    require(disaster_ordinal == 0, "normal scenario must use ordinal 0");
  else
    require(disaster_ordinal >= 1, "disaster scenario must use ordinal >= 1");
  require(mobility.n_latents >= 3, "need at least latents {stay, home, work}");
  require(mobility.base_stay_prob >= 0.0 && mobility.base_stay_prob < 1.0, "bad base_stay_prob");
}

namespace {

struct UserRoutine {
  int home = 0;
  int work = 0;
};

// destination weight for a category-visit latent; disasters shift mass
// toward residential-heavy locations (category 0)
double destination_weight(const Location& loc, int category, int ordinal, double residential_bias) {
  double poi = loc.poi_counts[static_cast<std::size_t>(category)] + 0.5;
  int total = std::accumulate(loc.poi_counts.begin(), loc.poi_counts.end(), 0);
  double res_frac = static_cast<double>(loc.poi_counts[0]) / (1.0 + total);
  return poi * (1.0 + residential_bias * ordinal * res_frac);
}

int sample_weighted(const std::vector<double>& w, std::mt19937_64& rng) {
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  std::uniform_real_distribution<double> unit(0.0, total);
  double r = unit(rng);
  for (std::size_t i = 0; i < w.size(); ++i) {
    r -= w[i];
    if (r <= 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(w.size()) - 1;
}

int argmax_weight(const std::vector<double>& w) {
  int best = 0;
  for (std::size_t i = 1; i < w.size(); ++i)
    if (w[i] > w[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace

Corpus generate_trajectories(const World& world, const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  const City& city = world.city(spec.city);
  const int n_loc = static_cast<int>(city.locations.size());
  require(n_loc >= 4, "city too small for trajectory generation");

  const int ordinal = spec.disaster_ordinal;
  const double p_stay = std::clamp(
      spec.mobility.base_stay_prob + spec.mobility.stay_slope * ordinal, 0.0, 0.95);
  const int n_move_latents = spec.mobility.n_latents - 1;  // latents 1..n-1 move

  Corpus corpus;
  corpus.tag = to_string(spec.scenario) + ":" + spec.city + ":L" + std::to_string(ordinal);
  corpus.seed = seed;
  corpus.world_hash = world_hash(world);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int u = 0; u < spec.n_users; ++u) {
    auto rng = make_rng(derive_seed(seed, spec.city + "/user" + std::to_string(u)));
    UserRoutine routine;
    routine.home = static_cast<int>(rng() % static_cast<std::uint64_t>(n_loc));
    do {
      routine.work = static_cast<int>(rng() % static_cast<std::uint64_t>(n_loc));
    } while (routine.work == routine.home);

    for (int k = 0; k < spec.trajectories_per_user; ++k) {
      std::uniform_int_distribution<int> len_dist(spec.min_length, spec.max_length);
      const int length = len_dist(rng);

      Trajectory traj;
      traj.user_id = spec.user_prefix + std::to_string(u);
      traj.city = spec.city;
      traj.scenario = spec.scenario;
      traj.disaster_level = spec.label_map.level(ordinal);

      int current = routine.home;
      int prev_latent = 1;
      bool prev_stayed = false;
      traj.records.push_back({0, city.locations[static_cast<std::size_t>(current)].id});
      for (int t = 1; t < length; ++t) {
        int latent;
        int next;
        double p = std::clamp(p_stay + (prev_stayed ? spec.mobility.stay_persistence : 0.0),
                              0.0, 0.95);
        if (unit(rng) < p) {
          latent = 0;
          next = current;
          prev_stayed = true;
        } else {
          prev_stayed = false;
          // cyclic tendency over move latents makes the next intention
          // predictable from history
          std::vector<double> lw(static_cast<std::size_t>(n_move_latents), 1.0);
          int preferred = (prev_latent % n_move_latents) + 1;
          lw[static_cast<std::size_t>(preferred - 1)] = 6.0;
          if (current == routine.home) lw[0] = 0.0;
          if (current == routine.work && n_move_latents >= 2) lw[1] = 0.0;
          latent = sample_weighted(lw, rng) + 1;

          if (latent == 1) {
            next = routine.home;
          } else if (latent == 2) {
            next = routine.work;
          } else {
            // category visits go to the profile-driven favorite; the disaster
            // reweight can move that favorite toward residential-heavy areas
            int category = (latent - 3) % world.c_poi;
            std::vector<double> w(static_cast<std::size_t>(n_loc), 0.0);
            for (int i = 0; i < n_loc; ++i)
              if (i != current)
                w[static_cast<std::size_t>(i)] = destination_weight(
                    city.locations[static_cast<std::size_t>(i)], category, ordinal,
                    spec.mobility.residential_bias);
            next = argmax_weight(w);
          }
          prev_latent = latent;
        }
        traj.records.push_back({t, city.locations[static_cast<std::size_t>(next)].id});
        traj.ground_truth_intentions.push_back(latent);
        current = next;
      }
      traj.validate(world);
      corpus.trajectories.push_back(std::move(traj));
    }
  }
  return corpus;
}

DisasterLevel disaster_level_from_precipitation(double mm_per_day,
                                                const std::vector<double>& thresholds,
                                                const DisasterLabelMap& labels) {
  require(mm_per_day >= 0.0, "precipitation must be non-negative");
  require(static_cast<int>(thresholds.size()) == labels.levels - 1,
          "need levels-1 thresholds");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    require(thresholds[i] > thresholds[i - 1], "thresholds must be strictly increasing");
  int ordinal = 0;
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    if (mm_per_day >= thresholds[i]) ordinal = static_cast<int>(i) + 1;
  return labels.level(ordinal);
}

std::string world_hash(const World& world) { return content_hash(world_to_json_string(world)); }

}  // namespace mobintent
