#include "agggp/linalg.hpp"

#include <cmath>
#include <string>

#include "agggp/errors.hpp"

namespace agggp {

Eigen::LLT<Eigen::MatrixXd> cholesky(const Eigen::MatrixXd& K, double jitter, std::string_view what) {
  Eigen::MatrixXd A = K;
  if (jitter != 0.0) A.diagonal().array() += jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(what) + ": matrix is not positive definite after jitter");
  }
  const auto diag = llt.matrixLLT().diagonal();
  if (!diag.allFinite() || (diag.array() <= 0.0).any()) {
    throw NumericalError(std::string(what) + ": degenerate Cholesky factor");
  }
  return llt;
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Eigen::MatrixXd inverse(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const Eigen::Index n = llt.matrixLLT().rows();
  return llt.solve(Eigen::MatrixXd::Identity(n, n));
}

}  // namespace agggp
