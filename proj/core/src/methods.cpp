#include "agggp/methods.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "agggp/distreg.hpp"
#include "agggp/errors.hpp"
#include "agggp/exact_gp.hpp"

namespace agggp {

namespace {

std::vector<GaussianPrediction> point_predictions(const Eigen::VectorXd& mean) {
  std::vector<GaussianPrediction> out(static_cast<std::size_t>(mean.size()));
  for (Index i = 0; i < mean.size(); ++i) out[static_cast<std::size_t>(i)] = {mean[i], 0.0};
  return out;
}

class VariationalFit final : public FittedMethod {
 public:
  VariationalFit(TrainResult result, std::optional<Index> only) : result_(std::move(result)), only_(only) {}
  std::vector<GaussianPrediction> predict(const MultiResDataset& test) const override {
    if (only_) {
      const Index sel[] = {*only_};
      return agggp::predict(result_.model, test.select_resolutions(sel));
    }
    return agggp::predict(result_.model, test);
  }
  bool has_variance() const override { return true; }
  const MVBAggModel* variational_model() const override { return &result_.model; }
  const std::vector<TraceEntry>* trace() const override { return &result_.trace; }

 private:
  TrainResult result_;
  std::optional<Index> only_;
};

class ExactFit final : public FittedMethod {
 public:
  ExactFit(ExactAggGP gp, bool centroid) : gp_(std::move(gp)), centroid_(centroid) {}
  std::vector<GaussianPrediction> predict(const MultiResDataset& test) const override {
    return gp_.predict(centroid_ ? centroid_dataset(test) : test);
  }
  bool has_variance() const override { return true; }

 private:
  ExactAggGP gp_;
  bool centroid_;
};

class DistRegFit final : public FittedMethod {
 public:
  explicit DistRegFit(DistRegModel m) : model_(std::move(m)) {}
  std::vector<GaussianPrediction> predict(const MultiResDataset& test) const override {
    return point_predictions(agggp::predict(model_, test));
  }
  bool has_variance() const override { return false; }

 private:
  DistRegModel model_;
};

class LinearFit final : public FittedMethod {
 public:
  explicit LinearFit(LinearModel m) : model_(std::move(m)) {}
  std::vector<GaussianPrediction> predict(const MultiResDataset& test) const override {
    return point_predictions(agggp::predict(model_, test));
  }
  bool has_variance() const override { return false; }

 private:
  LinearModel model_;
};

double sample_variance(const Eigen::VectorXd& y) {
  if (y.size() < 2) return 1.0;
  const double v = (y.array() - y.mean()).square().sum() / static_cast<double>(y.size() - 1);
  return v > 0.0 ? v : 1.0;
}

}  // namespace

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"mvbagg", "vbagg", "exact-agg", "centroid-gp", "lre", "krre", "lr"};
  return names;
}

bool is_probabilistic(const std::string& method) {
  return method == "mvbagg" || method == "vbagg" || method == "exact-agg" || method == "centroid-gp";
}

MultiResDataset centroid_dataset(const MultiResDataset& data) {
  std::vector<BagSet> sets;
  for (Index l = 0; l < data.num_resolutions(); ++l) {
    const BagSet& src = data.resolution(l);
    std::vector<Index> offsets(static_cast<std::size_t>(src.size() + 1));
    std::iota(offsets.begin(), offsets.end(), Index{0});
    sets.emplace_back(src.region_ids(), centroid_features(src), Eigen::VectorXd::Ones(src.size()), std::move(offsets));
  }
  std::optional<Eigen::VectorXd> labels;
  if (data.has_labels()) labels = data.labels();
  return MultiResDataset(data.meta(), std::move(sets), std::move(labels));
}

CentroidGPFit fit_centroid_gp_hyperparameters(const MultiResDataset& centroids, std::uint64_t seed) {
  const Index D = centroids.num_resolutions();
  const double vy = sample_variance(centroids.labels());
  std::vector<KernelSpec> base;
  Eigen::VectorXd theta(2 * D + 1);
  for (Index l = 0; l < D; ++l) {
    const BagSet& set = centroids.resolution(l);
    KernelSpec k;
    k.family = centroids.meta(l).kernel;
    k.input_dim = set.dim();
    k.scale = vy / static_cast<double>(D);
    const auto ids = set.point_bag_ids();
    try {
      k.lengthscale = median_heuristic(set.all_points(), 1, ids, seed);
    } catch (const InputError&) {
      k.lengthscale = 1.0;
    }
    base.push_back(k);
    theta[2 * l] = std::log(k.scale);
    theta[2 * l + 1] = std::log(k.lengthscale);
  }
  theta[2 * D] = std::log(0.1 * vy);

  auto specs_of = [&](const Eigen::VectorXd& t) {
    std::vector<KernelSpec> s = base;
    for (Index l = 0; l < D; ++l) {
      s[static_cast<std::size_t>(l)].scale = std::exp(t[2 * l]);
      s[static_cast<std::size_t>(l)].lengthscale = std::exp(t[2 * l + 1]);
    }
    return s;
  };
  auto objective = [&](const Eigen::VectorXd& t) {
    if ((t.array().abs() > 30.0).any()) return -std::numeric_limits<double>::infinity();
    try {
      return ExactAggGP::fit(centroids, specs_of(t), std::exp(t[2 * D])).log_marginal_likelihood();
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  double best = objective(theta);
  double step = 1.0;
  Index evals = 1;
  constexpr Index kMaxEvals = 4000;
  while (step > 1e-4 && evals < kMaxEvals) {
    bool improved = false;
    for (Index c = 0; c < theta.size() && evals < kMaxEvals; ++c) {
      for (double dir : {1.0, -1.0}) {
        Eigen::VectorXd trial = theta;
        trial[c] += dir * step;
        const double v = objective(trial);
        ++evals;
        if (v > best) {
          best = v;
          theta = trial;
          improved = true;
          break;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  if (!std::isfinite(best)) throw NumericalError("centroid GP: marginal likelihood is not finite");
  CentroidGPFit out;
  out.kernels = specs_of(theta);
  out.noise_var = std::exp(theta[2 * D]);
  out.log_marginal_likelihood = best;
  return out;
}

std::unique_ptr<FittedMethod> fit_method(const MethodConfig& config, const MultiResDataset& train) {
  const std::string& m = config.method;
  if (m == "mvbagg" || m == "vbagg") {
    std::optional<Index> only;
    MultiResDataset data = train;
    if (m == "vbagg") {
      if (config.vbagg_resolution < 0 || config.vbagg_resolution >= train.num_resolutions()) {
        throw InputError("vbagg: resolution index out of range");
      }
      only = config.vbagg_resolution;
      const Index sel[] = {*only};
      data = train.select_resolutions(sel);
    }
    ModelInitOptions init = config.init;
    init.seed = config.seed;
    TrainOptions opts = config.train;
    opts.seed = config.seed;
    if (opts.batch_size > data.size()) opts.batch_size = data.size();
    const MVBAggModel start = initialize_model(data, init);
    return std::make_unique<VariationalFit>(agggp::train(start, data, opts), only);
  }
  if (m == "exact-agg") {
    MVBAggModel hyper;
    if (config.hyper_source) {
      hyper = *config.hyper_source;
    } else {
      ModelInitOptions init = config.init;
      init.seed = config.seed;
      hyper = initialize_model(train, init);
    }
    return std::make_unique<ExactFit>(ExactAggGP::fit(train, hyper.kernels, hyper.noise_var), false);
  }
  if (m == "centroid-gp") {
    const MultiResDataset c = centroid_dataset(train);
    const CentroidGPFit h = fit_centroid_gp_hyperparameters(c, config.seed);
    return std::make_unique<ExactFit>(ExactAggGP::fit(c, h.kernels, h.noise_var), true);
  }
  if (m == "lre") {
    return std::make_unique<DistRegFit>(fit_lre(train, default_level1_specs(train, config.seed), config.ridge));
  }
  if (m == "krre") {
    return std::make_unique<DistRegFit>(fit_krre(train, default_level1_specs(train, config.seed), config.ridge));
  }
  if (m == "lr") return std::make_unique<LinearFit>(fit_lr_centroid(train));
  throw InputError("unknown method '" + m + "'");
}

}  // namespace agggp
