#include "agggp/variational.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include <Eigen/Cholesky>

#include "agggp/errors.hpp"
#include "agggp/kmeans.hpp"
#include "agggp/linalg.hpp"

namespace agggp {

namespace {

double sample_variance(const Eigen::VectorXd& y) {
  if (y.size() < 2) return 0.0;
  const double mean = y.mean();
  return (y.array() - mean).square().sum() / static_cast<double>(y.size() - 1);
}

void check_data(const MVBAggModel& model, const MultiResDataset& data) {
  if (data.num_resolutions() != model.num_resolutions()) {
    throw InputError("dataset has " + std::to_string(data.num_resolutions()) +
                     " resolutions but the model has " + std::to_string(model.num_resolutions()));
  }
  for (Index l = 0; l < model.num_resolutions(); ++l) {
    if (data.resolution(l).dim() != model.kernels[static_cast<std::size_t>(l)].input_dim) {
      throw InputError("resolution '" + data.meta(l).name + "' has dimension " +
                       std::to_string(data.resolution(l).dim()) + " but the model expects " +
                       std::to_string(model.kernels[static_cast<std::size_t>(l)].input_dim));
    }
  }
}

/// Aggregate moments of f^l for every bag of a resolution:
///   mu_i = w_i^T m(X_i),  v_i = w_i^T k(X_i, X_i) w_i  under q.
struct ResolutionMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  Eigen::MatrixXd P;  // columns k(Z, X_i) w_i
};

ResolutionMoments resolution_moments(const MVBAggModel& model, Index l, const BagSet& bags,
                                     bool with_var) {
  const KernelSpec& spec = model.kernels[static_cast<std::size_t>(l)];
  const InducingSet& ind = model.vstate.resolutions[static_cast<std::size_t>(l)];
  const auto llt = cholesky(gram(spec, ind.Z, ind.Z), kJitter * spec.scale, "K_ZZ");
  const Eigen::MatrixXd kzx = gram(spec, ind.Z, bags.all_points());
  ResolutionMoments out;
  out.P.resize(ind.size(), bags.size());
  for (Index i = 0; i < bags.size(); ++i) {
    out.P.col(i) = kzx.middleCols(bags.offset(i), bags.bag_size(i)) * bags.weights(i);
  }
  const Eigen::MatrixXd B = llt.solve(out.P);
  out.mean = B.transpose() * ind.eta;
  if (with_var) {
    const Eigen::MatrixXd CtB = ind.chol_sigma.transpose() * B;
    out.var = aggregated_self_variance(spec, bags) - (out.P.array() * B.array()).colwise().sum().transpose().matrix() +
              CtB.colwise().squaredNorm().transpose();
  }
  return out;
}

}  // namespace

std::string_view to_string(NoiseMode mode) { return mode == NoiseMode::Plain ? "plain" : "weighted"; }

NoiseMode parse_noise_mode(std::string_view name) {
  if (name == "plain") return NoiseMode::Plain;
  if (name == "weighted") return NoiseMode::Weighted;
  throw InputError("unknown noise mode '" + std::string(name) + "'");
}

void MVBAggModel::validate() const {
  if (kernels.empty()) throw InputError("model needs at least one resolution");
  if (resolution_names.size() != kernels.size() || vstate.resolutions.size() != kernels.size()) {
    throw InputError("model: names, kernels and inducing sets must have one entry per resolution");
  }
  if (!(noise_var > 0.0) || !std::isfinite(noise_var)) {
    throw ParameterError("model: noise variance must be positive and finite");
  }
  for (std::size_t l = 0; l < kernels.size(); ++l) {
    kernels[l].validate();
    const InducingSet& ind = vstate.resolutions[l];
    const std::string where = "resolution '" + resolution_names[l] + "'";
    if (ind.size() < 1) throw InputError(where + ": needs at least one inducing point");
    if (ind.Z.cols() != kernels[l].input_dim) throw InputError(where + ": Z does not match input_dim");
    if (ind.eta.size() != ind.size()) throw InputError(where + ": eta length differs from Z rows");
    if (ind.chol_sigma.rows() != ind.size() || ind.chol_sigma.cols() != ind.size()) {
      throw InputError(where + ": chol_sigma has the wrong shape");
    }
    if (!ind.Z.allFinite() || !ind.eta.allFinite() || !ind.chol_sigma.allFinite()) {
      throw ParameterError(where + ": non-finite variational parameters");
    }
    if ((ind.chol_sigma.diagonal().array() <= 0.0).any()) {
      throw ParameterError(where + ": chol_sigma must have a positive diagonal");
    }
    if (!ind.chol_sigma.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().isZero(0.0)) {
      throw InputError(where + ": chol_sigma must be lower triangular");
    }
  }
}

Eigen::MatrixXd init_inducing(const BagSet& bags, Index points_per_region, std::uint64_t seed,
                              double jitter_lengthscale) {
  if (points_per_region < 1) throw InputError("init_inducing: points_per_region must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd Z(bags.size() * points_per_region, bags.dim());
  for (Index i = 0; i < bags.size(); ++i) {
    const auto pts = bags.points(i);
    auto block = Z.middleRows(i * points_per_region, points_per_region);
    if (pts.rows() >= points_per_region) {
      block = kmeans(pts, points_per_region, rng);
    } else {
      for (Index c = 0; c < points_per_region; ++c) {
        block.row(c) = pts.row(c % pts.rows());
        if (c >= pts.rows()) {
          for (Index k = 0; k < bags.dim(); ++k) block(c, k) += 1e-6 * jitter_lengthscale * normal(rng);
        }
      }
    }
  }
  return Z;
}

Eigen::MatrixXd init_inducing(const MultiResDataset& data, Index resolution, Index points_per_region,
                              std::uint64_t seed) {
  const BagSet& set = data.resolution(resolution);
  const auto ids = set.point_bag_ids();
  double ell = 1.0;
  if (set.total_points() >= 2) {
    try {
      ell = median_heuristic(set.all_points(), 10, ids, seed);
    } catch (const InputError&) {
      ell = 1.0;
    }
  }
  return init_inducing(set, points_per_region, seed, ell);
}

MVBAggModel initialize_model(const MultiResDataset& train, const ModelInitOptions& options) {
  const Eigen::VectorXd& y = train.labels();
  double vy = sample_variance(y);
  if (!(vy > 0.0)) vy = 1.0;
  MVBAggModel model;
  model.noise_var = 0.1 * vy;
  model.noise_mode = options.noise_mode;
  model.vstate.trainable_z = options.trainable_z;
  for (Index l = 0; l < train.num_resolutions(); ++l) {
    const BagSet& set = train.resolution(l);
    KernelSpec spec;
    spec.family = train.meta(l).kernel;
    spec.scale = vy;
    spec.input_dim = set.dim();
    const auto ids = set.point_bag_ids();
    spec.lengthscale = median_heuristic(set.all_points(), options.median_cap, ids, options.seed);
    InducingSet ind;
    ind.Z = init_inducing(set, options.inducing_per_region, options.seed + static_cast<std::uint64_t>(l),
                          spec.lengthscale);
    ind.eta = Eigen::VectorXd::Zero(ind.size());
    ind.chol_sigma = cholesky(gram(spec, ind.Z, ind.Z), kJitter * spec.scale, "K_ZZ").matrixL();
    model.resolution_names.push_back(train.meta(l).name);
    model.kernels.push_back(spec);
    model.vstate.resolutions.push_back(std::move(ind));
  }
  model.validate();
  return model;
}

Eigen::MatrixXd inducing_gram(const MVBAggModel& model, Index l) {
  const KernelSpec& spec = model.kernels[static_cast<std::size_t>(l)];
  const InducingSet& ind = model.vstate.resolutions[static_cast<std::size_t>(l)];
  Eigen::MatrixXd K = gram(spec, ind.Z, ind.Z);
  K.diagonal().array() += kJitter * spec.scale;
  return K;
}

QPosterior q_posterior_at(const MVBAggModel& model, Index l, const Eigen::Ref<const Eigen::MatrixXd>& Xq) {
  if (l < 0 || l >= model.num_resolutions()) throw InputError("q_posterior_at: resolution out of range");
  const KernelSpec& spec = model.kernels[static_cast<std::size_t>(l)];
  const InducingSet& ind = model.vstate.resolutions[static_cast<std::size_t>(l)];
  if (Xq.cols() != spec.input_dim) throw InputError("q_posterior_at: query dimension mismatch");
  const Eigen::MatrixXd K = inducing_gram(model, l);
  const auto llt = cholesky(K, 0.0, "K_ZZ");
  const Eigen::MatrixXd kxz = gram(spec, Xq, ind.Z);
  const Eigen::MatrixXd A = llt.solve(kxz.transpose()).transpose();
  const Eigen::MatrixXd S = ind.chol_sigma * ind.chol_sigma.transpose();
  QPosterior out;
  out.mean = A * ind.eta;
  out.cov = gram(spec, Xq, Xq) - A * (K - S) * A.transpose();
  return out;
}

double kl_term(const VariationalState& vstate, const std::vector<KernelSpec>& kernels) {
  if (vstate.resolutions.size() != kernels.size()) throw InputError("kl_term: resolution count mismatch");
  double kl = 0.0;
  for (std::size_t l = 0; l < kernels.size(); ++l) {
    const KernelSpec& spec = kernels[l];
    const InducingSet& ind = vstate.resolutions[l];
    const auto llt = cholesky(gram(spec, ind.Z, ind.Z), kJitter * spec.scale, "K_ZZ");
    const Eigen::MatrixXd LinvC = llt.matrixL().solve(ind.chol_sigma);
    const Eigen::VectorXd Linv_eta = llt.matrixL().solve(ind.eta);
    const double logdet_s = 2.0 * ind.chol_sigma.diagonal().array().log().sum();
    kl += 0.5 * (LinvC.squaredNorm() + Linv_eta.squaredNorm() - static_cast<double>(ind.size()) +
                 log_det(llt) - logdet_s);
  }
  return kl;
}

double kl_term(const MVBAggModel& model) { return kl_term(model.vstate, model.kernels); }

double bag_noise_var(const MVBAggModel& model, const MultiResDataset& data, Index i) {
  if (model.noise_mode == NoiseMode::Plain) return model.noise_var;
  double wsq = 0.0;
  for (Index l = 0; l < data.num_resolutions(); ++l) wsq += data.resolution(l).weights(i).squaredNorm();
  return wsq * model.noise_var;
}

double elbo(const MVBAggModel& model, const MultiResDataset& data, std::span<const Index> batch,
            Index n_total) {
  if (!(model.noise_var > 0.0)) throw ParameterError("elbo: noise variance must be positive");
  model.validate();
  check_data(model, data);
  if (batch.empty()) throw InputError("elbo: empty batch");
  if (n_total < static_cast<Index>(batch.size())) throw InputError("elbo: n_total smaller than the batch");
  const Eigen::VectorXd& y = data.labels();

  const Index D = model.num_resolutions();
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llts;
  std::vector<Eigen::MatrixXd> K_minus_S;
  for (Index l = 0; l < D; ++l) {
    const Eigen::MatrixXd K = inducing_gram(model, l);
    const InducingSet& ind = model.vstate.resolutions[static_cast<std::size_t>(l)];
    llts.push_back(cholesky(K, 0.0, "K_ZZ"));
    K_minus_S.push_back(K - ind.chol_sigma * ind.chol_sigma.transpose());
  }

  double data_term = 0.0;
  for (Index i : batch) {
    if (i < 0 || i >= data.size()) throw InputError("elbo: batch index out of range");
    double mu = 0.0;
    double var = 0.0;
    for (Index l = 0; l < D; ++l) {
      const KernelSpec& spec = model.kernels[static_cast<std::size_t>(l)];
      const InducingSet& ind = model.vstate.resolutions[static_cast<std::size_t>(l)];
      const auto X = data.resolution(l).points(i);
      const Eigen::VectorXd w = data.resolution(l).weights(i);
      const Eigen::MatrixXd A = llts[static_cast<std::size_t>(l)].solve(gram(spec, ind.Z, X)).transpose();
      const Eigen::VectorXd m = A * ind.eta;
      const Eigen::MatrixXd k = gram(spec, X, X) - A * K_minus_S[static_cast<std::size_t>(l)] * A.transpose();
      mu += w.dot(m);
      var += w.dot(k * w);
    }
    const double s2 = bag_noise_var(model, data, i);
    const double r = y[i] - mu;
    data_term += -(r * r + var) / (2.0 * s2) - 0.5 * std::log(2.0 * std::numbers::pi * s2);
  }
  const double scale = static_cast<double>(n_total) / static_cast<double>(batch.size());
  return scale * data_term - kl_term(model);
}

double elbo(const MVBAggModel& model, const MultiResDataset& data) {
  std::vector<Index> all(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return elbo(model, data, all, data.size());
}

std::vector<GaussianPrediction> predict(const MVBAggModel& model, const MultiResDataset& data,
                                        bool include_noise) {
  model.validate();
  check_data(model, data);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(data.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(data.size());
  for (Index l = 0; l < model.num_resolutions(); ++l) {
    const auto mom = resolution_moments(model, l, data.resolution(l), true);
    mean += mom.mean;
    var += mom.var;
  }
  std::vector<GaussianPrediction> out(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) {
    double v = std::max(0.0, var[i]);
    if (include_noise) v += bag_noise_var(model, data, i);
    out[static_cast<std::size_t>(i)] = GaussianPrediction{mean[i], v};
  }
  return out;
}

GaussianPrediction predict_bag(const MVBAggModel& model, const MultiResBag& bag, bool include_noise) {
  MultiResBag unlabeled = bag;
  unlabeled.label.reset();
  std::vector<ResolutionMeta> meta;
  for (std::size_t l = 0; l < model.resolution_names.size(); ++l) {
    meta.push_back(ResolutionMeta{model.resolution_names[l], model.kernels[l].family});
  }
  return predict(model, MultiResDataset::from_bags({unlabeled}, std::move(meta)), include_noise).front();
}

std::vector<GaussianPrediction> disaggregate(const MVBAggModel& model, Index l,
                                             const Eigen::Ref<const Eigen::MatrixXd>& Xq) {
  model.validate();
  if (l < 0 || l >= model.num_resolutions()) throw InputError("disaggregate: resolution out of range");
  const KernelSpec& spec = model.kernels[static_cast<std::size_t>(l)];
  const InducingSet& ind = model.vstate.resolutions[static_cast<std::size_t>(l)];
  if (Xq.cols() != spec.input_dim) throw InputError("disaggregate: query dimension mismatch");
  const auto llt = cholesky(inducing_gram(model, l), 0.0, "K_ZZ");
  const Eigen::MatrixXd kzx = gram(spec, ind.Z, Xq);
  const Eigen::MatrixXd B = llt.solve(kzx);
  const Eigen::VectorXd mean = B.transpose() * ind.eta;
  const Eigen::MatrixXd CtB = ind.chol_sigma.transpose() * B;
  const Eigen::VectorXd var = (spec.scale - (kzx.array() * B.array()).colwise().sum()).transpose().matrix() +
                              CtB.colwise().squaredNorm().transpose();
  std::vector<GaussianPrediction> out(static_cast<std::size_t>(Xq.rows()));
  for (Index j = 0; j < Xq.rows(); ++j) {
    out[static_cast<std::size_t>(j)] = GaussianPrediction{mean[j], std::max(0.0, var[j])};
  }
  return out;
}

void optimize_q(MVBAggModel& model, const MultiResDataset& data, Index sweeps) {
  model.validate();
  check_data(model, data);
  const Eigen::VectorXd& y = data.labels();
  const Index n = data.size();
  const Index D = model.num_resolutions();
  Eigen::VectorXd precision(n);
  for (Index i = 0; i < n; ++i) precision[i] = 1.0 / bag_noise_var(model, data, i);

  std::vector<Eigen::VectorXd> means(static_cast<std::size_t>(D));
  std::vector<Eigen::MatrixXd> P(static_cast<std::size_t>(D));
  for (Index l = 0; l < D; ++l) {
    auto mom = resolution_moments(model, l, data.resolution(l), false);
    means[static_cast<std::size_t>(l)] = std::move(mom.mean);
    P[static_cast<std::size_t>(l)] = std::move(mom.P);
  }
  for (Index sweep = 0; sweep < sweeps; ++sweep) {
    for (Index l = 0; l < D; ++l) {
      Eigen::VectorXd resid = y;
      for (Index m = 0; m < D; ++m) {
        if (m != l) resid -= means[static_cast<std::size_t>(m)];
      }
      const Eigen::MatrixXd& Pl = P[static_cast<std::size_t>(l)];
      const Eigen::MatrixXd K = inducing_gram(model, l);
      // Sigma = K (K + P D P^T)^{-1} K,  eta = K (K + P D P^T)^{-1} P D r.
      Eigen::MatrixXd inner = K + Pl * precision.asDiagonal() * Pl.transpose();
      inner = 0.5 * (inner + inner.transpose()).eval();
      const auto llt = cholesky(inner, 0.0, "K + P D P^T");
      const Eigen::VectorXd pdr = Pl * (precision.array() * resid.array()).matrix();
      InducingSet& ind = model.vstate.resolutions[static_cast<std::size_t>(l)];
      ind.eta = K * llt.solve(pdr);
      Eigen::MatrixXd sigma = K * llt.solve(K);
      sigma = 0.5 * (sigma + sigma.transpose()).eval();
      Eigen::LLT<Eigen::MatrixXd> s_llt(sigma);
      if (s_llt.info() != Eigen::Success) {
        s_llt = cholesky(sigma, kJitter * model.kernels[static_cast<std::size_t>(l)].scale, "optimal Sigma");
      }
      ind.chol_sigma = s_llt.matrixL();
      const auto kllt = cholesky(K, 0.0, "K_ZZ");
      means[static_cast<std::size_t>(l)] = kllt.solve(Pl).transpose() * ind.eta;
    }
  }
}

}  // namespace agggp
