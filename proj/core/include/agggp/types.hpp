#pragma once

#include <Eigen/Core>

namespace agggp {

using Index = Eigen::Index;

/// Posterior mean and variance of a scalar latent or aggregate value.
struct GaussianPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

}  // namespace agggp
