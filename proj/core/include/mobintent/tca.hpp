#pragma once

#include <Eigen/Core>
#include <vector>

#include "mobintent/travel_features.hpp"

namespace mobintent {

/// Per-dimension standardization statistics (zero-variance dims keep scale 1).
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& rows) const;
  static Standardizer fit(const Eigen::MatrixXd& rows);
};

/// Fitted transfer-component transform. `basis` maps standardized features
/// (dim d) to the m-dimensional shared component space; columns of the dual
/// eigenvectors are orthonormal under the solved variance metric.
struct TcaTransform {
  Standardizer standardizer;
  Eigen::MatrixXd basis;  // d x m
  double mu = 1.0;
  int n_source = 0;
  int n_target = 0;
  double mmd_before = 0.0;  // of standardized inputs, recorded at fit time
  double mmd_after = 0.0;

  int input_dim() const { return static_cast<int>(basis.rows()); }
  int components() const { return static_cast<int>(basis.cols()); }

  /// Project one feature vector; set `standardize` false to apply the raw
  /// linear map (linearity checks).
  Eigen::VectorXd project(const Eigen::VectorXd& x, bool standardize = true) const;
};

/// Linear-kernel maximum mean discrepancy: norm of the sample mean difference.
double mmd_linear(const Eigen::MatrixXd& a_rows, const Eigen::MatrixXd& b_rows);

/// Solves the transfer-component generalized eigenproblem on the linear-kernel
/// matrices: maximize projected variance while minimizing the source/target
/// mean discrepancy, ridge-regularized by mu. Features are standardized
/// per dimension before the kernel is formed.
TcaTransform fit_tca(const std::vector<TravelFeature>& source,
                     const std::vector<TravelFeature>& target, int m, double mu = 1.0);

/// Linear map of standardized features by the fitted basis; immobility flags
/// pass through unchanged.
std::vector<TravelFeature> apply_tca(const TcaTransform& transform,
                                     const std::vector<TravelFeature>& features);

Eigen::MatrixXd feature_matrix(const std::vector<TravelFeature>& features);

}  // namespace mobintent
