#include "agggp/exact_gp.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "agggp/errors.hpp"
#include "agggp/log.hpp"

namespace agggp {

namespace {

constexpr double kVarianceClipTol = 1e-8;

void check_specs(const MultiResDataset& data, const std::vector<KernelSpec>& specs) {
  if (static_cast<Index>(specs.size()) != data.num_resolutions()) {
    throw InputError("exact GP: need one kernel per resolution");
  }
  for (std::size_t l = 0; l < specs.size(); ++l) {
    specs[l].validate();
    if (data.resolution(static_cast<Index>(l)).dim() != specs[l].input_dim) {
      throw InputError("exact GP: resolution '" + data.meta(static_cast<Index>(l)).name +
                       "' dimension does not match its kernel");
    }
  }
}

void check_budget(const MultiResDataset& a, const MultiResDataset& b, double budget) {
  double evals = 0.0;
  for (Index l = 0; l < a.num_resolutions(); ++l) {
    evals += static_cast<double>(a.resolution(l).total_points()) *
             static_cast<double>(b.resolution(l).total_points());
  }
  if (evals > budget) {
    throw ResourceError("exact GP: " + std::to_string(evals) +
                        " kernel evaluations exceed the budget of " + std::to_string(budget));
  }
}

}  // namespace

ExactAggGP ExactAggGP::fit(const MultiResDataset& train, std::vector<KernelSpec> specs,
                           double noise_var, const ExactGPOptions& options) {
  if (!(noise_var > 0.0)) throw ParameterError("exact GP: noise variance must be positive");
  if (train.size() < 1) throw InputError("exact GP: no training regions");
  check_specs(train, specs);
  check_budget(train, train, options.max_kernel_evaluations);

  ExactAggGP model;
  model.specs_ = std::move(specs);
  model.noise_var_ = noise_var;
  model.train_ = train;
  model.options_ = options;
  model.y_ = train.labels();

  const Index n = train.size();
  model.k_agg_ = Eigen::MatrixXd::Zero(n, n);
  double total_scale = 0.0;
  for (Index l = 0; l < train.num_resolutions(); ++l) {
    const BagSet& set = train.resolution(l);
    model.k_agg_ += aggregated_gram(model.specs_[static_cast<std::size_t>(l)], set, set);
    total_scale += model.specs_[static_cast<std::size_t>(l)].scale;
  }
  model.k_agg_ = 0.5 * (model.k_agg_ + model.k_agg_.transpose()).eval();

  Eigen::MatrixXd system = model.k_agg_;
  system.diagonal().array() += noise_var;
  model.llt_.compute(system);
  if (model.llt_.info() != Eigen::Success) {
    // The noise term normally makes the system positive definite; fall back
    // to the standard relative jitter before giving up.
    system.diagonal().array() += kJitter * total_scale;
    model.llt_.compute(system);
    if (model.llt_.info() != Eigen::Success) {
      throw NumericalError("exact GP: K_agg + noise * I is not positive definite after jitter");
    }
    warn("exact GP: added diagonal jitter to factorize K_agg + noise * I");
  }
  model.alpha_ = model.llt_.solve(model.y_);
  return model;
}

std::vector<GaussianPrediction> ExactAggGP::predict(const MultiResDataset& test) const {
  check_specs(test, specs_);
  check_budget(train_, test, options_.max_kernel_evaluations);
  const Index m = test.size();
  Eigen::MatrixXd k_star = Eigen::MatrixXd::Zero(train_.size(), m);
  Eigen::VectorXd k_ss = Eigen::VectorXd::Zero(m);
  for (Index l = 0; l < train_.num_resolutions(); ++l) {
    const KernelSpec& spec = specs_[static_cast<std::size_t>(l)];
    k_star += aggregated_gram(spec, train_.resolution(l), test.resolution(l));
    k_ss += aggregated_self_variance(spec, test.resolution(l));
  }
  const Eigen::VectorXd mean = k_star.transpose() * alpha_;
  const Eigen::MatrixXd v = llt_.matrixL().solve(k_star);
  const Eigen::VectorXd reduction = v.colwise().squaredNorm().transpose();

  std::vector<GaussianPrediction> out(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) {
    double var = k_ss[j] - reduction[j];
    if (var < 0.0) {
      if (var < -kVarianceClipTol) {
        throw NumericalError("exact GP: predictive variance " + std::to_string(var) +
                             " is negative beyond roundoff");
      }
      warn("exact GP: clipped predictive variance " + std::to_string(var) + " to zero");
      var = 0.0;
    }
    out[static_cast<std::size_t>(j)] = GaussianPrediction{mean[j], var};
  }
  return out;
}

GaussianPrediction ExactAggGP::predict_aggregate(const MultiResBag& bag) const {
  MultiResBag unlabeled = bag;
  unlabeled.label.reset();
  return predict(MultiResDataset::from_bags({unlabeled}, train_.meta())).front();
}

double ExactAggGP::log_marginal_likelihood() const {
  const double n = static_cast<double>(y_.size());
  return -0.5 * y_.dot(alpha_) - llt_.matrixLLT().diagonal().array().log().sum() -
         0.5 * n * std::log(2.0 * std::numbers::pi);
}

}  // namespace agggp
