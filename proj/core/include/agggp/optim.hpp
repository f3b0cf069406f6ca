#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "agggp/bags.hpp"
#include "agggp/errors.hpp"
#include "agggp/variational.hpp"

namespace agggp {

double softplus(double x);
/// Inverse of softplus on (0, inf).
double softplus_inverse(double y);
double sigmoid(double x);

/// Where each unconstrained parameter of a model lives in the flat vector.
/// Per resolution: log scale, log lengthscale, eta, the Cholesky factor's lower
/// triangle row by row (diagonal stored through softplus), Z row-major when
/// trainable. The log noise variance comes last.
struct ParamLayout {
  struct Block {
    std::string name;
    Index log_scale = 0;
    Index log_lengthscale = 0;
    Index eta = 0;
    Index chol = 0;
    Index z = -1;  // -1 when Z is fixed
    Index inducing = 0;
    Index dim = 0;
  };
  std::vector<Block> blocks;
  Index log_noise = 0;
  Index size = 0;

  static ParamLayout of(const MVBAggModel& model);
  /// Human-readable name of entry k, e.g. "res[space].eta[3]".
  std::string name(Index k) const;
  /// True for kernel and noise hyperparameters.
  bool is_hyperparameter(Index k) const;
  bool compatible_with(const MVBAggModel& model) const;
};

struct ParamVector {
  ParamLayout layout;
  Eigen::VectorXd values;

  Index size() const { return values.size(); }
};

ParamVector pack(const MVBAggModel& model);
/// Writes the values into a model with the same structure.
void unpack(const ParamVector& params, MVBAggModel& model);

struct ElboGradient {
  double value = 0.0;
  ParamVector gradient;
};

/// ELBO of elbo(model, data, batch, n_total) and its analytic gradient with
/// respect to every unconstrained parameter. Throws NumericalError naming the
/// first non-finite gradient entry.
ElboGradient elbo_grad(const MVBAggModel& model, const MultiResDataset& data, std::span<const Index> batch,
                       Index n_total);
ElboGradient elbo_grad(const MVBAggModel& model, const MultiResDataset& data);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;

  explicit AdamState(Index size = 0, double learning_rate = 1e-3);
  /// One ascent step: params += lr * mhat / (sqrt(vhat) + eps).
  void ascend(Eigen::VectorXd& params, const Eigen::VectorXd& gradient);
};

enum class UpdateMode { PerEpoch, PerBatch };
enum class Sampling { Epoch, Iid };

std::string_view to_string(UpdateMode mode);
UpdateMode parse_update_mode(std::string_view name);
std::string_view to_string(Sampling sampling);
Sampling parse_sampling(std::string_view name);

/// Draws minibatches of region indices. Epoch sampling walks a fresh
/// permutation each pass (the last batch of a pass may be short); iid sampling
/// draws each batch without replacement independently.
class MinibatchSampler {
 public:
  MinibatchSampler(Index n, Index batch_size, Sampling sampling, std::uint64_t seed);
  std::vector<Index> next();
  Index batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }

 private:
  Index n_;
  Index batch_;
  Sampling sampling_;
  std::mt19937_64 rng_;
  std::vector<Index> order_;
  Index cursor_ = 0;
};

struct TrainOptions {
  Index iterations = 20000;
  double lr = 1e-3;
  Index batch_size = 0;  // 0 means all regions
  std::uint64_t seed = 0;
  UpdateMode update = UpdateMode::PerEpoch;
  Sampling sampling = Sampling::Epoch;
  bool freeze_hyperparameters = false;
  /// Stop after this many full-data ELBO evaluations without improvement
  /// (evaluated once per epoch); 0 disables.
  Index patience = 0;
  /// Record the full-data ELBO in the trace instead of the minibatch estimate.
  bool trace_full_elbo = false;
  std::function<void(Index iteration, double elbo)> on_update;
};

struct TraceEntry {
  Index iteration = 0;
  double elbo = 0.0;
};

struct TrainResult {
  MVBAggModel model;
  std::vector<TraceEntry> trace;
  Index updates = 0;
  bool stopped_early = false;
};

/// Raised when the objective becomes non-finite; carries the trace so far.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const std::string& what, std::vector<TraceEntry> trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  const std::vector<TraceEntry>& trace() const { return trace_; }

 private:
  std::vector<TraceEntry> trace_;
};

/// Minibatch Adam ascent on the ELBO. In PerEpoch mode the batch objectives of
/// one pass are accumulated and a single update is made per pass; iterations
/// count batches in both modes.
TrainResult train(const MVBAggModel& init, const MultiResDataset& data, const TrainOptions& options = {});

struct GradientCheckEntry {
  std::string name;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> entries;
  double max_rel_error = 0.0;
  std::string worst;
};

/// Central differences of the value-only ELBO, step 1e-5 * (1 + |theta|).
/// Relative error is |a - n| / max(|a|, |n|, floor).
GradientCheckReport check_gradient(const MVBAggModel& model, const MultiResDataset& data,
                                   std::span<const Index> batch, Index n_total, double floor = 1e-6);
GradientCheckReport check_gradient(const MVBAggModel& model, const MultiResDataset& data, double floor = 1e-6);

}  // namespace agggp
