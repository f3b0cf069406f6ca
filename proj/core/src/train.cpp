#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "agggp/errors.hpp"
#include "agggp/optim.hpp"
#include "detail/elbo_engine.hpp"

namespace agggp {

std::string_view to_string(UpdateMode mode) { return mode == UpdateMode::PerEpoch ? "per-epoch" : "per-batch"; }

UpdateMode parse_update_mode(std::string_view name) {
  if (name == "per-epoch") return UpdateMode::PerEpoch;
  if (name == "per-batch") return UpdateMode::PerBatch;
  throw InputError("unknown update mode '" + std::string(name) + "'");
}

std::string_view to_string(Sampling sampling) { return sampling == Sampling::Epoch ? "epoch" : "iid"; }

Sampling parse_sampling(std::string_view name) {
  if (name == "epoch") return Sampling::Epoch;
  if (name == "iid") return Sampling::Iid;
  throw InputError("unknown sampling scheme '" + std::string(name) + "'");
}

AdamState::AdamState(Index size, double learning_rate)
    : lr(learning_rate), m(Eigen::VectorXd::Zero(size)), v(Eigen::VectorXd::Zero(size)) {}

void AdamState::ascend(Eigen::VectorXd& params, const Eigen::VectorXd& gradient) {
  if (gradient.size() != params.size() || m.size() != params.size()) {
    throw InputError("Adam: gradient and state sizes differ from the parameters");
  }
  ++step;
  m = beta1 * m + (1.0 - beta1) * gradient;
  v = beta2 * v + (1.0 - beta2) * gradient.cwiseProduct(gradient);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  params.array() += lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

MinibatchSampler::MinibatchSampler(Index n, Index batch_size, Sampling sampling, std::uint64_t seed)
    : n_(n), batch_(batch_size), sampling_(sampling), rng_(seed) {
  if (n < 1) throw InputError("sampler: need at least one region");
  if (batch_size < 1 || batch_size > n) throw InputError("batch size must be in [1, n]");
  order_.resize(static_cast<std::size_t>(n));
  std::iota(order_.begin(), order_.end(), Index{0});
  cursor_ = n_;
}

std::vector<Index> MinibatchSampler::next() {
  if (sampling_ == Sampling::Iid) {
    std::shuffle(order_.begin(), order_.end(), rng_);
    std::vector<Index> out(order_.begin(), order_.begin() + batch_);
    std::sort(out.begin(), out.end());
    return out;
  }
  if (cursor_ >= n_) {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }
  const Index end = std::min(n_, cursor_ + batch_);
  std::vector<Index> out(order_.begin() + cursor_, order_.begin() + end);
  cursor_ = end;
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

double full_elbo(detail::ElboEngine& engine, const MVBAggModel& model, Index n) {
  engine.prepare(model, false);
  constexpr Index chunk = 256;
  std::vector<Index> idx;
  for (Index start = 0; start < n; start += chunk) {
    idx.clear();
    for (Index i = start; i < std::min(n, start + chunk); ++i) idx.push_back(i);
    engine.add_batch(idx);
  }
  return engine.finish(1.0, nullptr);
}

}  // namespace

TrainResult train(const MVBAggModel& init, const MultiResDataset& data, const TrainOptions& options) {
  init.validate();
  const Index n = data.size();
  if (n < 1) throw InputError("train: empty dataset");
  if (options.iterations < 0) throw InputError("train: iterations must be non-negative");
  if (!(options.lr > 0.0)) throw InputError("train: learning rate must be positive");
  const Index batch = options.batch_size == 0 ? n : options.batch_size;
  if (batch < 1 || batch > n) throw InputError("train: batch size must be in [1, n]");

  TrainResult result;
  result.model = init;
  ParamVector params = pack(init);
  const Index P = params.size();
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(P);
  if (options.freeze_hyperparameters) {
    for (Index k = 0; k < P; ++k) {
      if (params.layout.is_hyperparameter(k)) mask[k] = 0.0;
    }
  }

  detail::ElboEngine engine(data, true);
  detail::ElboEngine evaluator(data, true);
  MinibatchSampler sampler(n, batch, options.sampling, options.seed);
  AdamState adam(P, options.lr);
  const Index group = options.update == UpdateMode::PerEpoch ? sampler.batches_per_epoch() : 1;
  const Index updates_per_check = options.update == UpdateMode::PerEpoch ? 1 : sampler.batches_per_epoch();

  MVBAggModel& model = result.model;
  Eigen::VectorXd gradient;
  Index in_group = 0;
  Index bags_in_group = 0;
  double best = -std::numeric_limits<double>::infinity();
  Index since_best = 0;
  MVBAggModel best_model = model;

  auto abort = [&](const std::string& why) { throw TrainingAborted(why, result.trace); };

  for (Index it = 1; it <= options.iterations; ++it) {
    const std::vector<Index> idx = sampler.next();
    try {
      if (in_group == 0) {
        engine.prepare(model, true);
        bags_in_group = 0;
      }
      engine.add_batch(idx);
      bags_in_group += static_cast<Index>(idx.size());
      if (++in_group < group) continue;
      in_group = 0;
      const double value =
          engine.finish(static_cast<double>(n) / static_cast<double>(bags_in_group), &gradient);
      if (!std::isfinite(value)) abort("non-finite ELBO at iteration " + std::to_string(it));
      gradient.array() *= mask.array();
      adam.ascend(params.values, gradient);
      unpack(params, model);
      ++result.updates;

      double traced = value;
      const bool check = options.patience > 0 && result.updates % updates_per_check == 0;
      if (options.trace_full_elbo || check) {
        const double full = full_elbo(evaluator, model, n);
        if (!std::isfinite(full)) abort("non-finite ELBO at iteration " + std::to_string(it));
        if (options.trace_full_elbo) traced = full;
        if (check) {
          if (full > best) {
            best = full;
            best_model = model;
            since_best = 0;
          } else if (++since_best >= options.patience) {
            result.trace.push_back({it, traced});
            if (options.on_update) options.on_update(it, traced);
            result.model = best_model;
            result.stopped_early = true;
            return result;
          }
        }
      }
      result.trace.push_back({it, traced});
      if (options.on_update) options.on_update(it, traced);
    } catch (const TrainingAborted&) {
      throw;
    } catch (const NumericalError& e) {
      abort(std::string("training aborted at iteration ") + std::to_string(it) + ": " + e.what());
    } catch (const ParameterError& e) {
      abort(std::string("training aborted at iteration ") + std::to_string(it) + ": " + e.what());
    }
  }
  return result;
}

}  // namespace agggp
