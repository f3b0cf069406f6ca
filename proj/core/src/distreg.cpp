#include "agggp/distreg.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "agggp/errors.hpp"

namespace agggp {

namespace {

BagSet with_uniform_weights(const BagSet& set) {
  Eigen::VectorXd w(set.total_points());
  for (Index i = 0; i < set.size(); ++i) {
    w.segment(set.offset(i), set.bag_size(i)).setConstant(1.0 / static_cast<double>(set.bag_size(i)));
  }
  return BagSet(set.region_ids(), set.all_points(), std::move(w), set.offsets());
}

Eigen::VectorXd embedding_self(const std::vector<KernelSpec>& specs, const MultiResDataset& data) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(data.size());
  for (Index l = 0; l < data.num_resolutions(); ++l) {
    out += aggregated_self_variance(specs[static_cast<std::size_t>(l)],
                                    with_uniform_weights(data.resolution(l)));
  }
  return out;
}

Eigen::MatrixXd second_level_rbf(const Eigen::MatrixXd& cross, const Eigen::VectorXd& self_a,
                                 const Eigen::VectorXd& self_b, double lengthscale) {
  Eigen::MatrixXd out(cross.rows(), cross.cols());
  for (Index j = 0; j < cross.cols(); ++j) {
    for (Index i = 0; i < cross.rows(); ++i) {
      const double d2 = std::max(0.0, self_a[i] - 2.0 * cross(i, j) + self_b[j]);
      out(i, j) = std::exp(-d2 / (2.0 * lengthscale * lengthscale));
    }
  }
  return out;
}

void check_fit_inputs(const MultiResDataset& train, const std::vector<KernelSpec>& level1, double ridge) {
  if (!(ridge > 0.0)) throw ParameterError("distribution regression: ridge must be positive");
  if (train.size() < 1) throw InputError("distribution regression: no training regions");
  if (static_cast<Index>(level1.size()) != train.num_resolutions()) {
    throw InputError("distribution regression: need one level-1 kernel per resolution");
  }
  for (const auto& s : level1) s.validate();
  (void)train.labels();
}

Eigen::VectorXd ridge_solve(Eigen::MatrixXd K, double ridge, const Eigen::VectorXd& y) {
  K.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("distribution regression: ridge system is not positive definite");
  }
  return llt.solve(y);
}

}  // namespace

Eigen::MatrixXd embedding_gram(const KernelSpec& spec, const BagSet& a, const BagSet& b) {
  return aggregated_gram(spec, with_uniform_weights(a), with_uniform_weights(b));
}

Eigen::MatrixXd embedding_gram(const std::vector<KernelSpec>& specs, const MultiResDataset& a,
                               const MultiResDataset& b) {
  if (static_cast<Index>(specs.size()) != a.num_resolutions() ||
      a.num_resolutions() != b.num_resolutions()) {
    throw InputError("embedding_gram: resolution count mismatch");
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.size(), b.size());
  for (Index l = 0; l < a.num_resolutions(); ++l) {
    out += embedding_gram(specs[static_cast<std::size_t>(l)], a.resolution(l), b.resolution(l));
  }
  return out;
}

std::vector<KernelSpec> default_level1_specs(const MultiResDataset& data, std::uint64_t seed) {
  std::vector<KernelSpec> specs;
  for (Index l = 0; l < data.num_resolutions(); ++l) {
    const BagSet& set = data.resolution(l);
    const auto ids = set.point_bag_ids();
    KernelSpec s;
    s.family = data.meta(l).kernel;
    s.scale = 1.0;
    s.input_dim = set.dim();
    s.lengthscale = median_heuristic(set.all_points(), 10, ids, seed);
    specs.push_back(s);
  }
  return specs;
}

DistRegModel fit_lre(const MultiResDataset& train, std::vector<KernelSpec> level1, double ridge) {
  check_fit_inputs(train, level1, ridge);
  DistRegModel model;
  model.level1 = std::move(level1);
  model.second_level = SecondLevel::Linear;
  model.ridge = ridge;
  model.train = train;
  Eigen::MatrixXd K = embedding_gram(model.level1, train, train);
  K = 0.5 * (K + K.transpose()).eval();
  model.train_self = K.diagonal();
  model.coeffs = ridge_solve(std::move(K), ridge, train.labels());
  return model;
}

DistRegModel fit_krre(const MultiResDataset& train, std::vector<KernelSpec> level1, double ridge,
                      std::optional<double> second_lengthscale) {
  check_fit_inputs(train, level1, ridge);
  DistRegModel model;
  model.level1 = std::move(level1);
  model.second_level = SecondLevel::RBF;
  model.ridge = ridge;
  model.train = train;
  Eigen::MatrixXd K = embedding_gram(model.level1, train, train);
  K = 0.5 * (K + K.transpose()).eval();
  model.train_self = K.diagonal();

  if (second_lengthscale) {
    if (!(*second_lengthscale > 0.0)) throw ParameterError("KRRe: second-level lengthscale must be positive");
    model.second_lengthscale = *second_lengthscale;
  } else {
    const Index n = train.size();
    if (n < 2) throw InputError("KRRe: median heuristic needs at least two regions");
    std::vector<double> dist;
    dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) {
        dist.push_back(std::sqrt(std::max(0.0, K(i, i) - 2.0 * K(i, j) + K(j, j))));
      }
    }
    const std::size_t mid = dist.size() / 2;
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
    double median = dist[mid];
    if (dist.size() % 2 == 0) {
      median = 0.5 * (median + *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid)));
    }
    if (!(median > 0.0)) throw InputError("KRRe: median embedding distance is zero");
    model.second_lengthscale = median;
  }
  const Eigen::MatrixXd Krho =
      second_level_rbf(K, model.train_self, model.train_self, model.second_lengthscale);
  model.coeffs = ridge_solve(Krho, ridge, train.labels());
  return model;
}

Eigen::VectorXd predict(const DistRegModel& model, const MultiResDataset& test) {
  const Eigen::MatrixXd cross = embedding_gram(model.level1, model.train, test);
  if (model.second_level == SecondLevel::Linear) return cross.transpose() * model.coeffs;
  const Eigen::VectorXd test_self = embedding_self(model.level1, test);
  return second_level_rbf(cross, model.train_self, test_self, model.second_lengthscale).transpose() *
         model.coeffs;
}

double predict(const DistRegModel& model, const MultiResBag& bag) {
  MultiResBag unlabeled = bag;
  unlabeled.label.reset();
  return predict(model, MultiResDataset::from_bags({unlabeled}, model.train.meta()))[0];
}

Eigen::MatrixXd stacked_centroids(const MultiResDataset& data) {
  Index cols = 0;
  for (Index l = 0; l < data.num_resolutions(); ++l) cols += data.resolution(l).dim();
  Eigen::MatrixXd out(data.size(), cols);
  Index c = 0;
  for (Index l = 0; l < data.num_resolutions(); ++l) {
    const Index d = data.resolution(l).dim();
    out.middleCols(c, d) = centroid_features(data.resolution(l));
    c += d;
  }
  return out;
}

LinearModel fit_lr_centroid(const MultiResDataset& train, bool add_intercept) {
  const Eigen::MatrixXd X = stacked_centroids(train);
  const Eigen::VectorXd& y = train.labels();
  Eigen::MatrixXd design(X.rows(), X.cols() + (add_intercept ? 1 : 0));
  design.leftCols(X.cols()) = X;
  if (add_intercept) design.col(X.cols()).setOnes();
  const Eigen::VectorXd beta = design.completeOrthogonalDecomposition().solve(y);
  LinearModel model;
  model.coef = beta.head(X.cols());
  model.intercept = add_intercept ? beta[X.cols()] : 0.0;
  return model;
}

Eigen::VectorXd predict(const LinearModel& model, const MultiResDataset& test) {
  const Eigen::MatrixXd X = stacked_centroids(test);
  if (X.cols() != model.coef.size()) throw InputError("linear model: feature dimension mismatch");
  return (X * model.coef).array() + model.intercept;
}

}  // namespace agggp
