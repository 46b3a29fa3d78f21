#include "mobintent/dtw.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>

namespace mobintent {

double dtw_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                    std::optional<int> window) {
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.rows();
  require(n > 0 && m > 0, "dtw needs non-empty sequences");
  require(a.cols() == b.cols(), "dtw feature dimension mismatch");
  if (window) {
    require(*window >= 0, "dtw window must be non-negative");
    require(static_cast<Eigen::Index>(*window) >= std::abs(n - m),
            "dtw window too small to admit any alignment path");
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(static_cast<std::size_t>(m) + 1, inf);
  std::vector<double> cur(static_cast<std::size_t>(m) + 1, inf);
  prev[0] = 0.0;

  for (Eigen::Index i = 1; i <= n; ++i) {
    std::fill(cur.begin(), cur.end(), inf);
    Eigen::Index lo = 1, hi = m;
    if (window) {
      lo = std::max<Eigen::Index>(1, i - *window);
      hi = std::min<Eigen::Index>(m, i + *window);
    }
    for (Eigen::Index j = lo; j <= hi; ++j) {
      double cost = (a.row(i - 1) - b.row(j - 1)).norm();
      double best = std::min({prev[static_cast<std::size_t>(j - 1)],
                              prev[static_cast<std::size_t>(j)],
                              cur[static_cast<std::size_t>(j - 1)]});
      cur[static_cast<std::size_t>(j)] = cost + best;
    }
    std::swap(prev, cur);
  }
  double result = prev[static_cast<std::size_t>(m)];
  require(std::isfinite(result), "dtw produced no admissible path");
  return result;
}

double dtw_distance(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b,
                    std::optional<int> window) {
  require(!a.empty() && !b.empty(), "dtw needs non-empty sequences");
  Eigen::MatrixXd am(static_cast<Eigen::Index>(a.size()), a.front().size());
  for (std::size_t i = 0; i < a.size(); ++i) am.row(static_cast<Eigen::Index>(i)) = a[i].transpose();
  Eigen::MatrixXd bm(static_cast<Eigen::Index>(b.size()), b.front().size());
  for (std::size_t i = 0; i < b.size(); ++i) bm.row(static_cast<Eigen::Index>(i)) = b[i].transpose();
  return dtw_distance(am, bm, window);
}

}  // namespace mobintent
