#pragma once

#include <string_view>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace agggp {

/// Cholesky factor of `K + jitter * I`. Throws NumericalError naming `what`
/// if the jittered matrix is not positive definite.
Eigen::LLT<Eigen::MatrixXd> cholesky(const Eigen::MatrixXd& K, double jitter, std::string_view what);

/// log det(A) for A = L L^T.
double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt);

/// A^{-1} from its Cholesky factorization.
Eigen::MatrixXd inverse(const Eigen::LLT<Eigen::MatrixXd>& llt);

}  // namespace agggp
