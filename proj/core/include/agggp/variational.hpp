#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "agggp/bags.hpp"
#include "agggp/kernels.hpp"
#include "agggp/types.hpp"

namespace agggp {

/// Observation noise of bag i: plain sigma^2, or sigma^2 scaled by
/// sum_l sum_j w_{i,j,l}^2.
enum class NoiseMode { Plain, Weighted };

std::string_view to_string(NoiseMode mode);
NoiseMode parse_noise_mode(std::string_view name);

/// q(u_l) = N(eta, chol_sigma chol_sigma^T) over the latent values at Z.
struct InducingSet {
  Eigen::MatrixXd Z;           // L x d
  Eigen::VectorXd eta;         // L
  Eigen::MatrixXd chol_sigma;  // L x L, lower triangular, positive diagonal

  Index size() const { return Z.rows(); }
};

struct VariationalState {
  std::vector<InducingSet> resolutions;
  bool trainable_z = false;
};

/// Additive model y_i = sum_l w_{i,l}^T f^l(X_{i,l}) + eps_i with independent
/// GP priors f^l ~ GP(0, k_l) and one inducing set per resolution. D = 1 is
/// the single-resolution (VBAgg) case.
struct MVBAggModel {
  std::vector<std::string> resolution_names;
  std::vector<KernelSpec> kernels;
  double noise_var = 1.0;
  NoiseMode noise_mode = NoiseMode::Plain;
  VariationalState vstate;

  Index num_resolutions() const { return static_cast<Index>(kernels.size()); }
  /// Throws ParameterError / InputError on any violated invariant.
  void validate() const;
};

/// Per-region KMeans centres (k = points_per_region) of one resolution,
/// concatenated region by region. Regions with fewer than k points
/// contribute their points plus copies perturbed by 1e-6 * jitter_lengthscale.
Eigen::MatrixXd init_inducing(const BagSet& bags, Index points_per_region, std::uint64_t seed,
                              double jitter_lengthscale = 1.0);
Eigen::MatrixXd init_inducing(const MultiResDataset& data, Index resolution, Index points_per_region,
                              std::uint64_t seed);

struct ModelInitOptions {
  Index inducing_per_region = 1;
  std::uint64_t seed = 0;
  NoiseMode noise_mode = NoiseMode::Plain;
  bool trainable_z = false;
  Index median_cap = 10;
};

/// Starting point for training: lengthscales from the median heuristic,
/// every kernel scale = var(y), noise = 0.1 var(y), KMeans inducing points,
/// q(u_l) equal to the prior (eta = 0, Sigma = K_ZZ).
MVBAggModel initialize_model(const MultiResDataset& train, const ModelInitOptions& options = {});

/// Jittered K_ZZ of resolution l.
Eigen::MatrixXd inducing_gram(const MVBAggModel& model, Index l);

struct QPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Marginal q(f^l) at the rows of Xq:
///   mean = A eta,  cov = k(Xq, Xq) - A (K_ZZ - Sigma) A^T,  A = k(Xq, Z) K_ZZ^{-1}.
QPosterior q_posterior_at(const MVBAggModel& model, Index l, const Eigen::Ref<const Eigen::MatrixXd>& Xq);

/// sum_l KL(q(u_l) || p(u_l)).
double kl_term(const VariationalState& vstate, const std::vector<KernelSpec>& kernels);
double kl_term(const MVBAggModel& model);

/// Noise variance of region i under the model's noise mode.
double bag_noise_var(const MVBAggModel& model, const MultiResDataset& data, Index i);

/// (n_total / |batch|) * sum_{i in batch} E_q[log p(y_i | f)] - sum_l KL_l, where
/// the expectation uses (sum_l w^T m_l)^2 + sum_l w^T k_l w for E[(sum_l w^T f^l)^2].
double elbo(const MVBAggModel& model, const MultiResDataset& data, std::span<const Index> batch,
            Index n_total);
/// Full-data ELBO.
double elbo(const MVBAggModel& model, const MultiResDataset& data);

/// Aggregate predictions; the observation noise is added when include_noise is set.
std::vector<GaussianPrediction> predict(const MVBAggModel& model, const MultiResDataset& data,
                                        bool include_noise = true);
GaussianPrediction predict_bag(const MVBAggModel& model, const MultiResBag& bag, bool include_noise = true);

/// Pointwise marginals of f^l at the rows of Xq (no noise).
std::vector<GaussianPrediction> disaggregate(const MVBAggModel& model, Index l,
                                             const Eigen::Ref<const Eigen::MatrixXd>& Xq);

/// Exact coordinate ascent on (eta_l, Sigma_l) with kernels, Z and noise held
/// fixed: each step sets q(u_l) to its optimum given the other resolutions.
/// One sweep is exact for a single resolution.
void optimize_q(MVBAggModel& model, const MultiResDataset& data, Index sweeps = 1);

}  // namespace agggp
