#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "agggp/bags.hpp"
#include "agggp/optim.hpp"
#include "agggp/types.hpp"
#include "agggp/variational.hpp"

namespace agggp {

/// Everything needed to fit one of the supported methods.
struct MethodConfig {
  std::string method = "mvbagg";  // mvbagg | vbagg | exact-agg | centroid-gp | lre | krre | lr
  ModelInitOptions init;
  TrainOptions train;
  double ridge = 0.1;
  /// Resolution used by vbagg.
  Index vbagg_resolution = 0;
  /// Kernel and noise hyperparameters for exact-agg; defaults to the
  /// initial MVBAgg values when absent.
  std::optional<MVBAggModel> hyper_source;
  std::uint64_t seed = 0;
};

const std::vector<std::string>& method_names();
bool is_probabilistic(const std::string& method);

class FittedMethod {
 public:
  virtual ~FittedMethod() = default;
  /// Predictions for every region of test; variance is 0 for point predictors.
  virtual std::vector<GaussianPrediction> predict(const MultiResDataset& test) const = 0;
  virtual bool has_variance() const = 0;
  /// Set for the variational methods.
  virtual const MVBAggModel* variational_model() const { return nullptr; }
  virtual const std::vector<TraceEntry>* trace() const { return nullptr; }
};

std::unique_ptr<FittedMethod> fit_method(const MethodConfig& config, const MultiResDataset& train);

/// One bag per region and resolution holding the bag's weighted centroid.
MultiResDataset centroid_dataset(const MultiResDataset& data);

struct CentroidGPFit {
  std::vector<KernelSpec> kernels;
  double noise_var = 1.0;
  double log_marginal_likelihood = 0.0;
};

/// Maximum-likelihood kernel scales, lengthscales and noise for a GP on the
/// centroid features (coordinate pattern search in log space).
CentroidGPFit fit_centroid_gp_hyperparameters(const MultiResDataset& centroids, std::uint64_t seed = 0);

}  // namespace agggp
