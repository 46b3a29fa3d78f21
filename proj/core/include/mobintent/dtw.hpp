#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "mobintent/common.hpp"

namespace mobintent {

/// Classic dynamic-time-warping distance with step set {match, insert, delete}
/// and a Euclidean ground metric. `window` is an optional Sakoe-Chiba band; it
/// must be >= |len(a) - len(b)| to admit any path.
double dtw_distance(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b,
                    std::optional<int> window = std::nullopt);

/// Row-per-step variant used by the retrieval index.
double dtw_distance(const Eigen::MatrixXd& a_rows, const Eigen::MatrixXd& b_rows,
                    std::optional<int> window = std::nullopt);

}  // namespace mobintent
