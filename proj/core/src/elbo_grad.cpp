#include <cmath>
#include <numbers>
#include <string>

#include "agggp/errors.hpp"
#include "agggp/linalg.hpp"
#include "agggp/optim.hpp"
#include "agggp/parallel.hpp"
#include "detail/elbo_engine.hpp"

namespace agggp::detail {

namespace {

// Geometry caches stop growing past this many doubles.
constexpr double kCacheBudget = 6e7;

}  // namespace

ElboEngine::ElboEngine(const MultiResDataset& data, bool cache_geometry)
    : data_(data), cache_geometry_(cache_geometry) {
  if (!data.has_labels()) throw InputError("ELBO needs labelled regions");
  const Index D = data.num_resolutions();
  self_cache_.resize(static_cast<std::size_t>(D));
  cross_cache_.resize(static_cast<std::size_t>(D));
  weight_sq_ = Eigen::VectorXd::Zero(data.size());
  double self_elems = 0.0;
  for (Index l = 0; l < D; ++l) {
    const BagSet& set = data.resolution(l);
    self_cache_[static_cast<std::size_t>(l)].resize(static_cast<std::size_t>(set.size()));
    cross_cache_[static_cast<std::size_t>(l)].resize(static_cast<std::size_t>(set.size()));
    for (Index i = 0; i < set.size(); ++i) {
      weight_sq_[i] += set.weights(i).squaredNorm();
      self_elems += static_cast<double>(set.bag_size(i)) * static_cast<double>(set.bag_size(i));
    }
  }
  if (self_elems > kCacheBudget) cache_geometry_ = false;
}

const Eigen::MatrixXd& ElboEngine::self_sqdist(Index l, Index i) {
  auto& slot = self_cache_[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)];
  if (!slot) {
    const auto X = data_.resolution(l).points(i);
    slot = squared_distances(X, X);
  }
  return *slot;
}

Eigen::MatrixXd ElboEngine::cross_sqdist(Index l, Index i) const {
  return squared_distances(prepared_[static_cast<std::size_t>(l)].Z, data_.resolution(l).points(i));
}

void ElboEngine::prepare(const MVBAggModel& model, bool with_gradient) {
  model.validate();
  const Index D = model.num_resolutions();
  if (D != data_.num_resolutions()) throw InputError("model and data have different resolution counts");
  for (Index l = 0; l < D; ++l) {
    if (data_.resolution(l).dim() != model.kernels[static_cast<std::size_t>(l)].input_dim) {
      throw InputError("resolution '" + data_.meta(l).name + "' does not match the model dimension");
    }
  }
  // Cached Z-to-point distances stay valid only while Z is unchanged.
  const bool z_changed = prepared_.size() != static_cast<std::size_t>(D) ||
                         [&] {
                           for (Index l = 0; l < D; ++l) {
                             const auto& old = prepared_[static_cast<std::size_t>(l)].Z;
                             const auto& now = model.vstate.resolutions[static_cast<std::size_t>(l)].Z;
                             if (old.rows() != now.rows() || old.cols() != now.cols() || old != now) return true;
                           }
                           return false;
                         }();
  if (z_changed) {
    for (auto& per_res : cross_cache_) {
      for (auto& slot : per_res) slot.reset();
    }
  }

  model_ = model;
  layout_ = ParamLayout::of(model);
  with_gradient_ = with_gradient;
  z_trainable_ = model.vstate.trainable_z;
  prepared_.assign(static_cast<std::size_t>(D), Prepared{});
  accum_.assign(static_cast<std::size_t>(D), Accum{});
  for (Index l = 0; l < D; ++l) {
    Prepared& p = prepared_[static_cast<std::size_t>(l)];
    const InducingSet& ind = model.vstate.resolutions[static_cast<std::size_t>(l)];
    p.spec = model.kernels[static_cast<std::size_t>(l)];
    p.Z = ind.Z;
    p.eta = ind.eta;
    p.chol = ind.chol_sigma;
    const Index L = ind.size();
    auto g = gram_with_derivatives(p.spec, squared_distances(p.Z, p.Z), with_gradient && z_trainable_);
    p.K = std::move(g.value);
    p.K.diagonal().array() += kJitter * p.spec.scale;
    const auto llt =
        cholesky(p.K, 0.0, "K_ZZ of resolution '" + model.resolution_names[static_cast<std::size_t>(l)] + "'");
    Eigen::MatrixXd Linv = Eigen::MatrixXd::Identity(L, L);
    llt.matrixL().solveInPlace(Linv);
    const Eigen::MatrixXd LinvC = Linv.triangularView<Eigen::Lower>() * p.chol;
    p.Kinv.setZero(L, L);
    p.Kinv.selfadjointView<Eigen::Lower>().rankUpdate(Linv.transpose());
    p.Kinv.triangularView<Eigen::StrictlyUpper>() = p.Kinv.transpose();
    p.KinvC.noalias() = p.Kinv * p.chol;
    p.alpha.noalias() = p.Kinv * p.eta;
    p.kl = 0.5 * (LinvC.squaredNorm() + p.eta.dot(p.alpha) - static_cast<double>(L) + log_det(llt) -
                  2.0 * p.chol.diagonal().array().log().sum());
    if (with_gradient) {
      p.dK_dlogell = std::move(g.dlog_lengthscale);
      if (z_trainable_) p.H_zz = std::move(g.input_weight);
      Accum& a = accum_[static_cast<std::size_t>(l)];
      a.d_eta = Eigen::VectorXd::Zero(L);
      a.d_S = Eigen::MatrixXd::Zero(L, L);
      a.d_K = Eigen::MatrixXd::Zero(L, L);
      if (z_trainable_) a.d_Z = Eigen::MatrixXd::Zero(L, p.Z.cols());
    }
  }
  sum_E_ = 0.0;
  d_lognoise_ = 0.0;
  bags_seen_ = 0;
}

void ElboEngine::compute_piece(Index l, std::span<const Index> batch, BatchPiece& piece) {
  const Prepared& p = prepared_[static_cast<std::size_t>(l)];
  const BagSet& set = data_.resolution(l);
  const Index L = p.Z.rows();
  const Index m = static_cast<Index>(batch.size());
  const bool grad = with_gradient_;
  piece.P.resize(L, m);
  piece.q.resize(m);
  if (grad) {
    piece.dP.resize(L, m);
    piece.dq.resize(m);
  }
  Index total = 0;
  piece.cols.resize(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    piece.cols[k] = total;
    total += set.bag_size(batch[k]);
  }
  const bool need_h = grad && z_trainable_;
  if (need_h) piece.H.resize(L, total);

  auto& cross = cross_cache_[static_cast<std::size_t>(l)];
  for (Index k = 0; k < m; ++k) {
    const Index i = batch[static_cast<std::size_t>(k)];
    const auto w = set.weights(i);

    Eigen::MatrixXd fresh;
    const Eigen::MatrixXd* d2 = nullptr;
    if (cache_geometry_ && !z_trainable_) {
      auto& slot = cross[static_cast<std::size_t>(i)];
      if (!slot) slot = cross_sqdist(l, i);
      d2 = &*slot;
    } else {
      fresh = cross_sqdist(l, i);
      d2 = &fresh;
    }
    if (grad) {
      auto g = gram_with_derivatives(p.spec, *d2, need_h);
      piece.P.col(k) = g.value * w;
      piece.dP.col(k) = g.dlog_lengthscale * w;
      if (need_h) piece.H.middleCols(piece.cols[static_cast<std::size_t>(k)], w.size()) = g.input_weight;
    } else {
      piece.P.col(k) = gram_from_sqdist(p.spec, *d2) * w;
    }

    Eigen::MatrixXd self_fresh;
    const Eigen::MatrixXd* s2 = nullptr;
    if (cache_geometry_) {
      s2 = &self_sqdist(l, i);
    } else {
      const auto X = set.points(i);
      self_fresh = squared_distances(X, X);
      s2 = &self_fresh;
    }
    if (grad) {
      const auto gs = gram_with_derivatives(p.spec, *s2, false);
      piece.q[k] = w.dot(gs.value * w);
      piece.dq[k] = w.dot(gs.dlog_lengthscale * w);
    } else {
      piece.q[k] = w.dot(gram_from_sqdist(p.spec, *s2) * w);
    }
  }

  piece.B.noalias() = p.Kinv * piece.P;
  piece.mean.noalias() = piece.B.transpose() * p.eta;
  piece.CtB.noalias() = p.chol.transpose().triangularView<Eigen::Upper>() * piece.B;
  piece.var = piece.q - (piece.P.array() * piece.B.array()).colwise().sum().transpose().matrix() +
              piece.CtB.colwise().squaredNorm().transpose();
  if (grad) piece.G.noalias() = p.KinvC * piece.CtB;
}

void ElboEngine::add_batch(std::span<const Index> batch) {
  if (prepared_.empty()) throw InputError("ElboEngine: prepare() must be called first");
  if (batch.empty()) throw InputError("ELBO batch is empty");
  for (Index i : batch) {
    if (i < 0 || i >= data_.size()) throw InputError("ELBO batch index out of range");
  }
  const Index D = static_cast<Index>(prepared_.size());
  const Index m = static_cast<Index>(batch.size());
  std::vector<BatchPiece> pieces(static_cast<std::size_t>(D));
  // Self-distance caches are filled lazily, so fill them before fanning out.
  if (cache_geometry_) {
    for (Index l = 0; l < D; ++l) {
      for (Index i : batch) self_sqdist(l, i);
    }
  }
  parallel_for(static_cast<std::size_t>(D), [&](std::size_t l) {
    compute_piece(static_cast<Index>(l), batch, pieces[l]);
  });

  const Eigen::VectorXd& y = data_.labels();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd var = Eigen::VectorXd::Zero(m);
  for (const auto& piece : pieces) {
    mean += piece.mean;
    var += piece.var;
  }
  Eigen::VectorXd g_mean(m), g_var(m);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (Index k = 0; k < m; ++k) {
    const Index i = batch[static_cast<std::size_t>(k)];
    const double s2 =
        model_.noise_mode == NoiseMode::Weighted ? model_.noise_var * weight_sq_[i] : model_.noise_var;
    const double r = y[i] - mean[k];
    const double sq = r * r + var[k];
    sum_E_ += -sq / (2.0 * s2) - 0.5 * (log2pi + std::log(s2));
    g_mean[k] = r / s2;
    g_var[k] = -0.5 / s2;
    d_lognoise_ += sq / (2.0 * s2) - 0.5;
  }
  bags_seen_ += m;
  if (!with_gradient_) return;

  parallel_for(static_cast<std::size_t>(D), [&](std::size_t li) {
    const Index l = static_cast<Index>(li);
    const Prepared& p = prepared_[li];
    BatchPiece& piece = pieces[li];
    Accum& a = accum_[li];
    const Eigen::VectorXd Bg = piece.B * g_mean;
    const Eigen::MatrixXd Bgv = piece.B * g_var.asDiagonal();
    a.d_eta += Bg;
    a.d_S.noalias() += Bgv * piece.B.transpose();
    a.d_K.noalias() -= Bg * p.alpha.transpose();
    a.d_K.noalias() += Bgv * (piece.B - piece.G).transpose();
    a.d_K.noalias() -= piece.G * Bgv.transpose();
    // dE/dP: alpha g_mean^T + 2 (G - B) diag(g_var)
    Eigen::MatrixXd dP = p.alpha * g_mean.transpose();
    dP.noalias() += 2.0 * (piece.G - piece.B) * g_var.asDiagonal();
    a.d_logscale += (dP.array() * piece.P.array()).sum() + g_var.dot(piece.q);
    a.d_logell += (dP.array() * piece.dP.array()).sum() + g_var.dot(piece.dq);
    if (z_trainable_) {
      const BagSet& set = data_.resolution(l);
      for (Index k = 0; k < m; ++k) {
        const Index i = batch[static_cast<std::size_t>(k)];
        const auto X = set.points(i);
        const auto w = set.weights(i);
        const Eigen::MatrixXd W =
            piece.H.middleCols(piece.cols[static_cast<std::size_t>(k)], w.size()).array() *
            (dP.col(k) * w.transpose()).array();
        a.d_Z -= W.rowwise().sum().asDiagonal() * p.Z;
        a.d_Z += W * X;
      }
    }
  });
}

double ElboEngine::finish(double scale, Eigen::VectorXd* gradient) {
  if (bags_seen_ == 0) throw InputError("ElboEngine: no batch was added");
  double kl = 0.0;
  for (const auto& p : prepared_) kl += p.kl;
  const double value = scale * sum_E_ - kl;
  if (!gradient) return value;
  if (!with_gradient_) throw InputError("ElboEngine: prepared without gradients");

  Eigen::VectorXd& g = *gradient;
  g.setZero(layout_.size);
  for (std::size_t l = 0; l < prepared_.size(); ++l) {
    const Prepared& p = prepared_[l];
    const Accum& a = accum_[l];
    const auto& b = layout_.blocks[l];
    const Index L = p.Z.rows();

    const Eigen::VectorXd d_eta = scale * a.d_eta - p.alpha;
    const Eigen::MatrixXd d_S = scale * a.d_S;
    Eigen::MatrixXd KinvS_Kinv = Eigen::MatrixXd::Zero(L, L);
    KinvS_Kinv.selfadjointView<Eigen::Lower>().rankUpdate(p.KinvC);
    KinvS_Kinv.triangularView<Eigen::StrictlyUpper>() = KinvS_Kinv.transpose();
    const Eigen::MatrixXd d_K =
        scale * a.d_K - 0.5 * (p.Kinv - KinvS_Kinv - p.alpha * p.alpha.transpose());
    Eigen::MatrixXd d_C = (d_S + d_S.transpose()) * p.chol.triangularView<Eigen::Lower>();
    d_C -= p.KinvC;
    d_C.diagonal().array() += p.chol.diagonal().array().inverse();

    g.segment(b.eta, L) = d_eta;
    Index t = b.chol;
    for (Index i = 0; i < L; ++i) {
      for (Index j = 0; j < i; ++j) g[t++] = d_C(i, j);
      // d softplus(theta) / d theta = 1 - exp(-softplus(theta))
      g[t++] = d_C(i, i) * -std::expm1(-p.chol(i, i));
    }
    g[b.log_scale] = (d_K.array() * p.K.array()).sum() + scale * a.d_logscale;
    g[b.log_lengthscale] = (d_K.array() * p.dK_dlogell.array()).sum() + scale * a.d_logell;
    if (b.z >= 0) {
      Eigen::MatrixXd d_Z = scale * a.d_Z;
      const Eigen::MatrixXd W = (d_K + d_K.transpose()).array() * p.H_zz.array();
      d_Z -= W.rowwise().sum().asDiagonal() * p.Z;
      d_Z += W * p.Z;
      for (Index i = 0; i < L; ++i) {
        for (Index d = 0; d < b.dim; ++d) g[b.z + i * b.dim + d] = d_Z(i, d);
      }
    }
  }
  g[layout_.log_noise] = scale * d_lognoise_;
  for (Index k = 0; k < g.size(); ++k) {
    if (!std::isfinite(g[k])) {
      throw NumericalError("non-finite ELBO gradient for parameter " + layout_.name(k));
    }
  }
  return value;
}

}  // namespace agggp::detail

namespace agggp {

ElboGradient elbo_grad(const MVBAggModel& model, const MultiResDataset& data, std::span<const Index> batch,
                       Index n_total) {
  if (!(model.noise_var > 0.0)) throw ParameterError("elbo_grad: noise variance must be positive");
  if (batch.empty()) throw InputError("elbo_grad: empty batch");
  if (n_total < static_cast<Index>(batch.size())) throw InputError("elbo_grad: n_total smaller than the batch");
  detail::ElboEngine engine(data, false);
  engine.prepare(model, true);
  engine.add_batch(batch);
  ElboGradient out;
  out.gradient.layout = engine.layout();
  out.value = engine.finish(static_cast<double>(n_total) / static_cast<double>(batch.size()),
                            &out.gradient.values);
  if (!std::isfinite(out.value)) throw NumericalError("elbo_grad: non-finite ELBO");
  return out;
}

ElboGradient elbo_grad(const MVBAggModel& model, const MultiResDataset& data) {
  std::vector<Index> all(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return elbo_grad(model, data, all, data.size());
}

}  // namespace agggp
