#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "agggp/bags.hpp"
#include "agggp/methods.hpp"
#include "agggp/types.hpp"

namespace agggp {

/// Fold id (0..k-1) of each of n regions: seeded shuffle, then contiguous split.
std::vector<Index> kfold(Index n, Index k, std::uint64_t seed);

double rmse(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& yhat);
/// Throws InputError if any y is zero.
double mape(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& yhat);
/// MAPE over regions with |y| >= 1e-12; excluded regions are counted and warned about.
double mape_guarded(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& yhat,
                    Index* excluded = nullptr);
/// Fraction of y inside mean -/+ z_{(1+level)/2} sqrt(variance).
double coverage(const std::vector<GaussianPrediction>& predictions, const Eigen::Ref<const Eigen::VectorXd>& y,
                double level);

struct FoldResult {
  Index fold = 0;
  Index n_train = 0;
  Index n_test = 0;
  double rmse = 0.0;
  double mape = 0.0;
  double runtime_seconds = 0.0;
  double coverage80 = 0.0;
  double coverage95 = 0.0;
  bool failed = false;
  std::string error;
};

struct CVReport {
  std::string method;
  std::string covariates;
  Index k = 5;
  std::uint64_t seed = 0;
  std::vector<Index> assignments;
  std::vector<FoldResult> folds;
  double rmse_mean = 0.0, rmse_stderr = 0.0;
  double mape_mean = 0.0, mape_stderr = 0.0;
  double runtime_mean = 0.0, runtime_stderr = 0.0;
  bool has_coverage = false;
  double coverage80 = 0.0;  // pooled over all held-out regions
  double coverage95 = 0.0;
  /// Held-out prediction of every region, in dataset order.
  std::vector<GaussianPrediction> predictions;
  /// Extra named timings (seconds), e.g. Gram assembly for comparison.
  std::map<std::string, double> timings;
};

struct CVOptions {
  Index k = 5;
  std::uint64_t seed = 0;
};

/// Trains on k-1 folds and scores the held-out fold, for every fold. A fold
/// whose fit throws is marked failed and left out of the summary.
CVReport run_cv(const MultiResDataset& data, const MethodConfig& method, const CVOptions& options = {});

/// mean and sample-stddev / sqrt(count).
std::pair<double, double> mean_stderr(const std::vector<double>& values);

std::string report_to_json(const CVReport& report);
/// Method | Covariates | RMSE | MAPE | Runtime
std::string report_table(const std::vector<CVReport>& reports);

}  // namespace agggp
