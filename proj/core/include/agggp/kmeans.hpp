#pragma once

#include <random>

#include <Eigen/Core>

#include "agggp/types.hpp"

namespace agggp {

struct KMeansOptions {
  Index max_iterations = 100;
  double tolerance = 1e-6;  // stop once no center moves further than this
};

/// Lloyd's algorithm with k-means++ seeding. Requires 1 <= k <= rows(points).
/// Empty clusters keep their previous center.
Eigen::MatrixXd kmeans(const Eigen::Ref<const Eigen::MatrixXd>& points, Index k, std::mt19937_64& rng,
                       const KMeansOptions& options = {});

}  // namespace agggp
