#pragma once

#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "agggp/bags.hpp"
#include "agggp/kernels.hpp"
#include "agggp/types.hpp"

namespace agggp {

struct ExactGPOptions {
  /// Refuse to fit when sum_l (points at resolution l)^2 exceeds this.
  double max_kernel_evaluations = 4e8;
};

/// Exact GP regression on aggregated outputs with an additive kernel over
/// resolutions and zero prior mean. With single-point bags this is ordinary
/// GP regression.
class ExactAggGP {
 public:
  /// Factorizes K_agg + noise_var * I where K_agg = sum_l aggregated_gram(spec_l).
  /// Throws ResourceError when the kernel budget would be exceeded and
  /// NumericalError when the system cannot be factorized.
  static ExactAggGP fit(const MultiResDataset& train, std::vector<KernelSpec> specs,
                        double noise_var, const ExactGPOptions& options = {});

  /// Posterior of the noise-free aggregate w_*^T f_* for every region of `test`.
  std::vector<GaussianPrediction> predict(const MultiResDataset& test) const;
  GaussianPrediction predict_aggregate(const MultiResBag& bag) const;

  /// log N(y; 0, K_agg + noise_var * I).
  double log_marginal_likelihood() const;

  const std::vector<KernelSpec>& kernel_specs() const { return specs_; }
  double noise_var() const { return noise_var_; }
  const Eigen::VectorXd& alpha() const { return alpha_; }
  const Eigen::MatrixXd& aggregated_kernel() const { return k_agg_; }
  Eigen::MatrixXd chol_lower() const { return llt_.matrixL(); }

 private:
  ExactAggGP() = default;

  std::vector<KernelSpec> specs_;
  double noise_var_ = 1.0;
  MultiResDataset train_;
  Eigen::MatrixXd k_agg_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd y_;
  Eigen::VectorXd alpha_;
  ExactGPOptions options_;
};

}  // namespace agggp
