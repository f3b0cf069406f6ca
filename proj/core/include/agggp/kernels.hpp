#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include <Eigen/Core>

#include "agggp/types.hpp"

namespace agggp {

enum class KernelFamily { RBF, Matern32 };

std::string_view to_string(KernelFamily family);
/// Accepts "rbf" and "matern32" (case-sensitive); throws InputError otherwise.
KernelFamily parse_kernel_family(std::string_view name);

/// Isotropic stationary kernel with variance `scale` and a single lengthscale.
struct KernelSpec {
  KernelFamily family = KernelFamily::RBF;
  double scale = 1.0;
  double lengthscale = 1.0;
  Index input_dim = 1;

  /// Throws ParameterError unless scale, lengthscale and input_dim are positive
  /// and finite.
  void validate() const;
};

/// Relative diagonal jitter added before factorizing any kernel matrix.
inline constexpr double kJitter = 1e-6;

/// k(r^2) for a single squared distance.
double kernel_from_sqdist(const KernelSpec& spec, double sqdist);

double eval(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
            const Eigen::Ref<const Eigen::VectorXd>& y);

/// Pairwise squared Euclidean distances between the rows of X and Y.
Eigen::MatrixXd squared_distances(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                  const Eigen::Ref<const Eigen::MatrixXd>& Y);

Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& X,
                     const Eigen::Ref<const Eigen::MatrixXd>& Y);

/// Kernel values from a squared-distance matrix using vectorized exp/sqrt.
/// Entries may differ from eval() in the last bit.
Eigen::MatrixXd gram_from_sqdist(const KernelSpec& spec, const Eigen::MatrixXd& sqdist);

/// Kernel values together with the two derivative factors the gradient code
/// needs, all computed from one pass over a squared-distance matrix:
///   dlog_lengthscale(a,b) = d k(a,b) / d log(lengthscale)
///   input_weight(a,b)     = h with  d k(x_a, y_b) / d x_a = -h * (x_a - y_b)
struct GramDerivatives {
  Eigen::MatrixXd value;
  Eigen::MatrixXd dlog_lengthscale;
  Eigen::MatrixXd input_weight;
};

GramDerivatives gram_with_derivatives(const KernelSpec& spec, const Eigen::MatrixXd& sqdist,
                                      bool with_input_weight);

/// Median of pairwise Euclidean distances between distinct retained points,
/// after keeping at most `per_bag_cap` randomly chosen points per bag id.
/// Throws InputError when fewer than two points remain or the median is zero.
double median_heuristic(const Eigen::Ref<const Eigen::MatrixXd>& points, Index per_bag_cap,
                        std::span<const Index> bag_ids, std::uint64_t seed = 0);

}  // namespace agggp
