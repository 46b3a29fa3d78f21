#pragma once

#include <Eigen/Core>
#include <vector>

#include "mobintent/world.hpp"

namespace mobintent {

/// One travel between consecutive records: origin attributes, destination
/// attributes, and the road interaction of the ordered pair.
/// Layout: [origin poi_counts, origin transport_distance,
///          dest poi_counts, dest transport_distance, road counts].
struct TravelFeature {
  Eigen::VectorXd values;
  bool is_immobility = false;  // origin id == destination id
};

inline int travel_feature_dim(int c_poi, int c_road) { return 2 * (c_poi + 1) + c_road; }
inline int travel_feature_dim(const World& w) { return travel_feature_dim(w.c_poi, w.c_road); }

/// Output length = records - 1; is_immobility set exactly where consecutive
/// location ids coincide.
std::vector<TravelFeature> extract_travel_features(const Trajectory& trajectory,
                                                   const World& world);

TravelFeature make_travel_feature(const City& city, int origin, int dest, int c_poi, int c_road);

}  // namespace mobintent
