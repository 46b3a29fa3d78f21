#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mobintent/tca.hpp"

namespace mobintent {

/// Intention vocabulary: cluster medoids in the transformed travel-feature
/// space plus a distinguished immobility class. The immobility class has no
/// centroid; it is assigned by the immobility flag, never by distance. Its
/// reserved feature vector sits well away from every centroid so stay-heavy
/// sequences retrieve stay-heavy references.
struct IntentionSpace {
  Eigen::MatrixXd centroids;  // n_intentions x m, medoid feature vectors
  Eigen::VectorXd immobility_vector;
  int n_intentions = 0;
  double immobility_distance_factor = 2.0;
  // multiplies transformed features before assignment; set by the unit-rms
  // rescale option so intention vectors are O(1) regardless of the transform's
  // output convention
  double feature_scale = 1.0;
  std::uint64_t seed = 0;

  int immobility_class() const { return n_intentions; }
  int n_classes() const { return n_intentions + 1; }  // centroids + immobility

  /// Nearest centroid by Euclidean distance; ties break toward the lowest
  /// class index. Never returns the immobility class.
  int assign(const Eigen::VectorXd& transformed) const;

  /// Centroid row for a centroid class, the reserved vector for immobility.
  Eigen::VectorXd class_vector(int cls) const;
};

struct IntentionStep {
  int cls = 0;
  bool is_immobility = false;
  Eigen::VectorXd vector;  // X_t: centroid for the class, reserved vector for immobility
};

using IntentionSequence = std::vector<IntentionStep>;

/// Seeded k-means over non-immobility transformed features with medoid
/// extraction: each cluster is represented by its central sample. With
/// rescale_to_unit_rms the inputs are scaled to unit root-mean-square
/// component magnitude first and the factor recorded in the space.
IntentionSpace fit_intention_clusters(const std::vector<Eigen::VectorXd>& transformed,
                                      int n_intentions, std::uint64_t seed,
                                      double immobility_distance_factor = 2.0,
                                      bool rescale_to_unit_rms = false);

/// Map raw travel features through the transform and assign intention classes.
/// Immobility travels take the immobility class regardless of feature distance.
IntentionSequence map_to_intentions(const std::vector<TravelFeature>& features,
                                    const TcaTransform& transform, const IntentionSpace& space);

/// Mean silhouette over a sample of points; reported as a clustering diagnostic.
double silhouette_score(const std::vector<Eigen::VectorXd>& points,
                        const IntentionSpace& space);

/// Fitted transform + intention space, persisted as one artifact.
struct IntentionModel {
  TcaTransform tca;
  IntentionSpace space;
  std::string world_hash;
};

void save_intention_model(const IntentionModel& model, const std::filesystem::path& path);
IntentionModel load_intention_model(const std::filesystem::path& path);
std::string intention_model_to_string(const IntentionModel& model);

}  // namespace mobintent
