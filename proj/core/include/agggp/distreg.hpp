#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "agggp/bags.hpp"
#include "agggp/kernels.hpp"

namespace agggp {

/// Second-level kernel on mean embeddings: linear (LRe) or RBF on embedding
/// distances (KRRe).
enum class SecondLevel { Linear, RBF };

struct DistRegModel {
  std::vector<KernelSpec> level1;
  SecondLevel second_level = SecondLevel::Linear;
  double second_lengthscale = 0.0;  // RBF only
  double ridge = 0.1;
  MultiResDataset train;
  Eigen::VectorXd train_self;  // <mu_i, mu_i>, summed over resolutions
  Eigen::VectorXd coeffs;
};

/// Inner products of uniform-weight mean embeddings, <mu_i, mu_j>.
Eigen::MatrixXd embedding_gram(const KernelSpec& spec, const BagSet& a, const BagSet& b);

/// Per-resolution embedding grams summed over resolutions (direct sum of RKHSs).
Eigen::MatrixXd embedding_gram(const std::vector<KernelSpec>& specs, const MultiResDataset& a,
                               const MultiResDataset& b);

/// Level-1 kernels as used for the distribution-regression baselines: unit
/// scale, lengthscale from the median heuristic with at most ten points per
/// region, family from the dataset's resolution metadata.
std::vector<KernelSpec> default_level1_specs(const MultiResDataset& data, std::uint64_t seed = 0);

DistRegModel fit_lre(const MultiResDataset& train, std::vector<KernelSpec> level1, double ridge);

/// When `second_lengthscale` is absent it is set to the median embedding
/// distance between distinct training regions.
DistRegModel fit_krre(const MultiResDataset& train, std::vector<KernelSpec> level1, double ridge,
                      std::optional<double> second_lengthscale = std::nullopt);

Eigen::VectorXd predict(const DistRegModel& model, const MultiResDataset& test);
double predict(const DistRegModel& model, const MultiResBag& bag);

/// Ordinary least squares on centroid features (concatenated over resolutions).
struct LinearModel {
  Eigen::VectorXd coef;
  double intercept = 0.0;
};

/// Minimum-norm least squares, so rank-deficient designs never fail.
LinearModel fit_lr_centroid(const MultiResDataset& train, bool add_intercept = true);
Eigen::VectorXd predict(const LinearModel& model, const MultiResDataset& test);

/// Centroid features of every resolution side by side: n x sum_l d_l.
Eigen::MatrixXd stacked_centroids(const MultiResDataset& data);

}  // namespace agggp
