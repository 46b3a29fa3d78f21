#include "mobintent/tca.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>

namespace mobintent {

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& x) const {
  require(x.size() == mean.size(), "standardizer dimension mismatch");
  return (x - mean).cwiseQuotient(stddev);
}

Eigen::MatrixXd Standardizer::apply_rows(const Eigen::MatrixXd& rows) const {
  require(rows.cols() == mean.size(), "standardizer dimension mismatch");
  return (rows.rowwise() - mean.transpose()).array().rowwise() /
         stddev.transpose().array();
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& rows) {
  require(rows.rows() >= 1, "cannot fit standardizer on empty sample");
  Standardizer s;
  s.mean = rows.colwise().mean();
  Eigen::MatrixXd centered = rows.rowwise() - s.mean.transpose();
  Eigen::VectorXd var = centered.array().square().colwise().mean();
  s.stddev = var.array().sqrt();
  for (Eigen::Index i = 0; i < s.stddev.size(); ++i)
    if (s.stddev[i] < 1e-12) s.stddev[i] = 1.0;
  return s;
}

double mmd_linear(const Eigen::MatrixXd& a_rows, const Eigen::MatrixXd& b_rows) {
  require(a_rows.rows() > 0 && b_rows.rows() > 0, "mmd needs non-empty samples");
  require(a_rows.cols() == b_rows.cols(), "mmd dimension mismatch");
  Eigen::VectorXd diff = a_rows.colwise().mean() - b_rows.colwise().mean();
  return diff.norm();
}

Eigen::MatrixXd feature_matrix(const std::vector<TravelFeature>& features) {
  require(!features.empty(), "empty feature set");
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(features.size()), features.front().values.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    require(features[i].values.size() == rows.cols(), "inconsistent feature dimensions");
    rows.row(static_cast<Eigen::Index>(i)) = features[i].values.transpose();
  }
  return rows;
}

TcaTransform fit_tca(const std::vector<TravelFeature>& source,
                     const std::vector<TravelFeature>& target, int m, double mu) {
  require(!source.empty() && !target.empty(), "fit_tca needs non-empty source and target sets");
  require(m >= 1, "m must be >= 1");

  Eigen::MatrixXd src = feature_matrix(source);
  Eigen::MatrixXd tgt = feature_matrix(target);
  require(src.cols() == tgt.cols(), "source/target dimension mismatch");
  const Eigen::Index d = src.cols();
  require(m <= d, "m must not exceed the feature dimension");

  const Eigen::Index ns = src.rows();
  const Eigen::Index nt = tgt.rows();
  const Eigen::Index n = ns + nt;

  Eigen::MatrixXd all(n, d);
  all.topRows(ns) = src;
  all.bottomRows(nt) = tgt;

  TcaTransform tf;
  tf.standardizer = Standardizer::fit(all);
  tf.mu = mu;
  tf.n_source = static_cast<int>(ns);
  tf.n_target = static_cast<int>(nt);

  Eigen::MatrixXd x = tf.standardizer.apply_rows(all);
  tf.mmd_before = mmd_linear(x.topRows(ns), x.bottomRows(nt));

  Eigen::MatrixXd kernel = x * x.transpose();  // linear kernel

  // membership vector: L = v v^T is the mean-discrepancy quadratic form
  Eigen::VectorXd v(n);
  v.head(ns).setConstant(1.0 / static_cast<double>(ns));
  v.tail(nt).setConstant(-1.0 / static_cast<double>(nt));
  Eigen::VectorXd kv = kernel * v;

  Eigen::MatrixXd centered = kernel.rowwise() - kernel.colwise().mean();  // H K
  Eigen::MatrixXd variance = kernel * centered;                           // K H K
  variance = 0.5 * (variance + variance.transpose());  // symmetrize roundoff

  Eigen::MatrixXd discrepancy = kv * kv.transpose();  // K L K
  discrepancy.diagonal().array() += mu;

  Eigen::LLT<Eigen::MatrixXd> llt(discrepancy);
  require(llt.info() == Eigen::Success, "singular system: increase the regularizer mu");

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(variance, discrepancy);
  require(solver.info() == Eigen::Success, "generalized eigensolver failed");

  // eigenvalues ascending; take the top m and renormalize so that the dual
  // directions are orthonormal under the variance metric K H K
  const Eigen::VectorXd& evals = solver.eigenvalues();
  const double tol = std::max(1e-10, 1e-12 * std::abs(evals[n - 1]));
  Eigen::Index usable = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (evals[i] > tol) ++usable;
  require(usable >= m, "m exceeds the usable rank of the kernel matrix (" +
                           std::to_string(usable) + " components available)");

  Eigen::MatrixXd w(n, m);
  for (int c = 0; c < m; ++c) {
    Eigen::Index idx = n - 1 - c;
    w.col(c) = solver.eigenvectors().col(idx) / std::sqrt(evals[idx]);
  }
  tf.basis = x.transpose() * w;  // primal map for out-of-sample points

  Eigen::MatrixXd projected = x * tf.basis;
  tf.mmd_after = mmd_linear(projected.topRows(ns), projected.bottomRows(nt));
  return tf;
}

Eigen::VectorXd TcaTransform::project(const Eigen::VectorXd& x, bool standardize) const {
  require(x.size() == basis.rows(), "feature dimension does not match fitted transform");
  if (standardize) return basis.transpose() * standardizer.apply(x);
  return basis.transpose() * x;
}

std::vector<TravelFeature> apply_tca(const TcaTransform& transform,
                                     const std::vector<TravelFeature>& features) {
  std::vector<TravelFeature> out;
  out.reserve(features.size());
  for (const auto& f : features) {
    TravelFeature g;
    g.values = transform.project(f.values);
    g.is_immobility = f.is_immobility;
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace mobintent
