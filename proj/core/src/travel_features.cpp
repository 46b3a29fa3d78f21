#include "mobintent/travel_features.hpp"

namespace mobintent {

TravelFeature make_travel_feature(const City& city, int origin, int dest, int c_poi, int c_road) {
  const Location& a = city.locations[static_cast<std::size_t>(origin)];
  const Location& b = city.locations[static_cast<std::size_t>(dest)];
  const std::vector<int>& roads = city.roads(origin, dest);

  TravelFeature f;
  f.values.resize(travel_feature_dim(c_poi, c_road));
  int at = 0;
  for (int k = 0; k < c_poi; ++k) f.values[at++] = a.poi_counts[static_cast<std::size_t>(k)];
  f.values[at++] = a.transport_distance;
  for (int k = 0; k < c_poi; ++k) f.values[at++] = b.poi_counts[static_cast<std::size_t>(k)];
  f.values[at++] = b.transport_distance;
  for (int k = 0; k < c_road; ++k) f.values[at++] = roads[static_cast<std::size_t>(k)];
  f.is_immobility = origin == dest;
  return f;
}

std::vector<TravelFeature> extract_travel_features(const Trajectory& trajectory,
                                                   const World& world) {
  require(trajectory.records.size() >= 2, "trajectory must have at least 2 records");
  const City& city = world.city(trajectory.city);
  std::vector<TravelFeature> out;
  out.reserve(trajectory.records.size() - 1);
  for (std::size_t i = 0; i + 1 < trajectory.records.size(); ++i) {
    int origin = city.index_of(trajectory.records[i].location_id);
    int dest = city.index_of(trajectory.records[i + 1].location_id);
    out.push_back(make_travel_feature(city, origin, dest, world.c_poi, world.c_road));
  }
  return out;
}

}  // namespace mobintent
