#include "agggp/kmeans.hpp"

#include <limits>

#include "agggp/errors.hpp"

namespace agggp {

namespace {

Eigen::MatrixXd seed_plus_plus(const Eigen::Ref<const Eigen::MatrixXd>& points, Index k, std::mt19937_64& rng) {
  const Index n = points.rows();
  Eigen::MatrixXd centers(k, points.cols());
  std::uniform_int_distribution<Index> pick(0, n - 1);
  centers.row(0) = points.row(pick(rng));
  Eigen::VectorXd d2(n);
  for (Index r = 0; r < n; ++r) d2[r] = (points.row(r) - centers.row(0)).squaredNorm();
  for (Index c = 1; c < k; ++c) {
    const double total = d2.sum();
    Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = n - 1;
      for (Index r = 0; r < n; ++r) {
        target -= d2[r];
        if (target <= 0.0 && d2[r] > 0.0) {
          chosen = r;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    centers.row(c) = points.row(chosen);
    for (Index r = 0; r < n; ++r) d2[r] = std::min(d2[r], (points.row(r) - centers.row(c)).squaredNorm());
  }
  return centers;
}

}  // namespace

Eigen::MatrixXd kmeans(const Eigen::Ref<const Eigen::MatrixXd>& points, Index k, std::mt19937_64& rng,
                       const KMeansOptions& options) {
  const Index n = points.rows();
  if (k < 1 || k > n) throw InputError("kmeans: k must lie in [1, number of points]");
  Eigen::MatrixXd centers = seed_plus_plus(points, k, rng);
  std::vector<Index> assign(static_cast<std::size_t>(n), 0);
  for (Index iter = 0; iter < options.max_iterations; ++iter) {
    for (Index r = 0; r < n; ++r) {
      double best = std::numeric_limits<double>::infinity();
      for (Index c = 0; c < k; ++c) {
        const double d = (points.row(r) - centers.row(c)).squaredNorm();
        if (d < best) {
          best = d;
          assign[static_cast<std::size_t>(r)] = c;
        }
      }
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (Index r = 0; r < n; ++r) {
      sums.row(assign[static_cast<std::size_t>(r)]) += points.row(r);
      counts[assign[static_cast<std::size_t>(r)]] += 1.0;
    }
    double moved = 0.0;
    for (Index c = 0; c < k; ++c) {
      if (counts[c] == 0.0) continue;
      const Eigen::RowVectorXd updated = sums.row(c) / counts[c];
      moved = std::max(moved, (updated - centers.row(c)).norm());
      centers.row(c) = updated;
    }
    if (moved < options.tolerance) break;
  }
  return centers;
}

}  // namespace agggp
