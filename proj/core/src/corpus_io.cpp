#include "mobintent/corpus_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mobintent {

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json world_to_json(const World& world) {
  ordered_json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "world";
  j["seed"] = world.seed;
  j["c_poi"] = world.c_poi;
  j["c_road"] = world.c_road;
  j["source_cities"] = world.source_cities;
  j["target_city"] = world.target_city;
  j["cities"] = ordered_json::array();
  for (const auto& city : world.cities) {
    ordered_json cj;
    cj["name"] = city.name;
    cj["locations"] = ordered_json::array();
    for (const auto& loc : city.locations) {
      ordered_json lj;
      lj["id"] = loc.id;
      lj["x"] = loc.x;
      lj["y"] = loc.y;
      lj["poi_counts"] = loc.poi_counts;
      lj["transport_distance"] = loc.transport_distance;
      cj["locations"].push_back(std::move(lj));
    }
    // sparse pair map: all-zero rows are omitted and re-densified on load
    cj["road_counts"] = ordered_json::array();
    for (const auto& [pair, counts] : city.road_counts) {
      bool any = false;
      for (int c : counts) any = any || c != 0;
      if (!any) continue;
      cj["road_counts"].push_back(ordered_json::array({pair.first, pair.second, counts}));
    }
    j["cities"].push_back(std::move(cj));
  }
  return j;
}

World world_from_json(const ordered_json& j) {
  require(j.value("format_version", -1) == kFormatVersion, "world file: format_version mismatch");
  World world;
  world.seed = j.at("seed").get<std::uint64_t>();
  world.c_poi = j.at("c_poi").get<int>();
  world.c_road = j.at("c_road").get<int>();
  world.source_cities = j.at("source_cities").get<std::vector<std::string>>();
  world.target_city = j.at("target_city").get<std::string>();
  for (const auto& cj : j.at("cities")) {
    City city;
    city.name = cj.at("name").get<std::string>();
    for (const auto& lj : cj.at("locations")) {
      Location loc;
      loc.id = lj.at("id").get<std::string>();
      loc.x = lj.at("x").get<double>();
      loc.y = lj.at("y").get<double>();
      loc.poi_counts = lj.at("poi_counts").get<std::vector<int>>();
      loc.transport_distance = lj.at("transport_distance").get<double>();
      require(loc.transport_distance >= 0.0, "transport_distance must be >= 0");
      for (int c : loc.poi_counts) require(c >= 0, "poi_counts must be non-negative");
      city.locations.push_back(std::move(loc));
    }
    const int n = static_cast<int>(city.locations.size());
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        city.road_counts[{a, b}] = std::vector<int>(static_cast<std::size_t>(world.c_road), 0);
    for (const auto& rj : cj.at("road_counts")) {
      int a = rj.at(0).get<int>();
      int b = rj.at(1).get<int>();
      require(a >= 0 && a < n && b >= 0 && b < n, "road pair out of range");
      city.road_counts[{a, b}] = rj.at(2).get<std::vector<int>>();
    }
    city.rebuild_index();
    world.cities.push_back(std::move(city));
  }
  return world;
}

ordered_json trajectory_to_json(const Trajectory& t) {
  ordered_json j;
  j["user_id"] = t.user_id;
  j["city"] = t.city;
  j["scenario"] = to_string(t.scenario);
  j["disaster_level"] = ordered_json{{"ordinal", t.disaster_level.ordinal},
                                     {"label", t.disaster_level.label}};
  j["records"] = ordered_json::array();
  for (const auto& r : t.records) j["records"].push_back(ordered_json::array({r.t, r.location_id}));
  if (!t.ground_truth_intentions.empty()) j["ground_truth_intentions"] = t.ground_truth_intentions;
  return j;
}

Trajectory trajectory_from_json(const ordered_json& j) {
  Trajectory t;
  t.user_id = j.at("user_id").get<std::string>();
  t.city = j.at("city").get<std::string>();
  t.scenario = scenario_from_string(j.at("scenario").get<std::string>());
  t.disaster_level.ordinal = j.at("disaster_level").at("ordinal").get<int>();
  t.disaster_level.label = j.at("disaster_level").at("label").get<std::string>();
  for (const auto& rj : j.at("records"))
    t.records.push_back({rj.at(0).get<std::int64_t>(), rj.at(1).get<std::string>()});
  if (j.contains("ground_truth_intentions"))
    t.ground_truth_intentions = j.at("ground_truth_intentions").get<std::vector<int>>();
  return t;
}

}  // namespace

std::string world_to_json_string(const World& world) { return world_to_json(world).dump(); }

void save_world(const World& world, const std::filesystem::path& path) {
  write_text_file(path, world_to_json(world).dump(2) + "\n");
}

World load_world(const std::filesystem::path& path) {
  ordered_json j;
  try {
    j = ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail("world file " + path.string() + ": " + e.what());
  }
  return world_from_json(j);
}

std::string corpus_to_string(const Corpus& corpus) {
  ordered_json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["kind"] = "corpus";
  manifest["tag"] = corpus.tag;
  manifest["world_hash"] = corpus.world_hash;
  manifest["seed"] = corpus.seed;
  std::ostringstream out;
  out << manifest.dump() << "\n";
  for (const auto& t : corpus.trajectories) out << trajectory_to_json(t).dump() << "\n";
  return out.str();
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  write_text_file(path, corpus_to_string(corpus));
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open corpus file " + path.string());
  std::string line;
  int line_no = 0;
  Corpus corpus;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail("corpus file " + path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (line_no == 1) {
        require(j.value("format_version", -1) == kFormatVersion,
                "corpus manifest: format_version mismatch");
        require(j.value("kind", "") == "corpus", "corpus manifest: wrong kind");
        corpus.tag = j.at("tag").get<std::string>();
        corpus.world_hash = j.at("world_hash").get<std::string>();
        corpus.seed = j.at("seed").get<std::uint64_t>();
      } else {
        corpus.trajectories.push_back(trajectory_from_json(j));
      }
    } catch (const nlohmann::json::exception& e) {
      fail("corpus file " + path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  require(line_no >= 1, "corpus file " + path.string() + " is empty (missing manifest)");
  return corpus;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write file " + path.string());
  out << text;
  require(out.good(), "write failed for " + path.string());
}

}  // namespace mobintent
