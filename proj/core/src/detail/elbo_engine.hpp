#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "agggp/bags.hpp"
#include "agggp/optim.hpp"
#include "agggp/variational.hpp"

namespace agggp::detail {

/// Vectorized ELBO evaluation with analytic gradients. prepare() caches the
/// quantities that depend only on the parameters (K_ZZ factor, KL); batches
/// are then accumulated and finish() applies the n/|B| scale and the KL terms.
/// Everything between prepare() and finish() sees one parameter snapshot, so
/// several batches can be folded into one objective.
class ElboEngine {
 public:
  ElboEngine(const MultiResDataset& data, bool cache_geometry);

  void prepare(const MVBAggModel& model, bool with_gradient);
  void add_batch(std::span<const Index> batch);
  /// scale * sum_i E_i - KL; writes the gradient in ParamLayout order when asked.
  double finish(double scale, Eigen::VectorXd* gradient);

  Index bags_seen() const { return bags_seen_; }
  const ParamLayout& layout() const { return layout_; }

 private:
  struct Prepared {
    KernelSpec spec;
    Eigen::MatrixXd Z;
    Eigen::VectorXd eta;
    Eigen::MatrixXd chol;
    Eigen::MatrixXd K;  // jittered
    Eigen::MatrixXd Kinv;
    Eigen::MatrixXd KinvC;  // K^{-1} chol
    Eigen::VectorXd alpha;
    Eigen::MatrixXd dK_dlogell;
    Eigen::MatrixXd H_zz;
    double kl = 0.0;
  };
  struct Accum {
    Eigen::VectorXd d_eta;
    Eigen::MatrixXd d_S;
    Eigen::MatrixXd d_K;
    Eigen::MatrixXd d_Z;
    double d_logscale = 0.0;
    double d_logell = 0.0;
  };
  struct BatchPiece {
    Eigen::MatrixXd P;      // L x m
    Eigen::MatrixXd dP;     // d P / d log lengthscale
    Eigen::MatrixXd H;      // L x T_b input weights when Z is trainable
    Eigen::VectorXd q;      // w^T k(X, X) w
    Eigen::VectorXd dq;     // its log lengthscale derivative
    Eigen::MatrixXd B;      // K^{-1} P
    Eigen::MatrixXd G;      // K^{-1} S B
    Eigen::MatrixXd CtB;    // chol^T B
    Eigen::VectorXd mean;
    Eigen::VectorXd var;
    std::vector<Index> cols;  // column offset of each bag in H
  };

  const Eigen::MatrixXd& self_sqdist(Index l, Index i);
  Eigen::MatrixXd cross_sqdist(Index l, Index i) const;
  void compute_piece(Index l, std::span<const Index> batch, BatchPiece& piece);

  const MultiResDataset& data_;
  bool cache_geometry_;
  std::vector<std::vector<std::optional<Eigen::MatrixXd>>> self_cache_;
  std::vector<std::vector<std::optional<Eigen::MatrixXd>>> cross_cache_;
  Eigen::VectorXd weight_sq_;  // sum_l ||w_{i,l}||^2

  MVBAggModel model_;
  ParamLayout layout_;
  bool with_gradient_ = false;
  bool z_trainable_ = false;
  std::vector<Prepared> prepared_;
  std::vector<Accum> accum_;
  double sum_E_ = 0.0;
  double d_lognoise_ = 0.0;
  Index bags_seen_ = 0;
};

}  // namespace agggp::detail
