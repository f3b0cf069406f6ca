#include "agggp/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "agggp/errors.hpp"
#include "agggp/log.hpp"

namespace agggp {

namespace {

void check_lengths(Index a, Index b, const char* what) {
  if (a != b) throw InputError(std::string(what) + ": y and predictions differ in length");
  if (a == 0) throw InputError(std::string(what) + ": empty input");
}

std::string covariate_label(const MultiResDataset& data, const MethodConfig& m) {
  std::string names;
  if (m.method == "vbagg") {
    names = data.meta(m.vbagg_resolution).name;
  } else {
    for (Index l = 0; l < data.num_resolutions(); ++l) {
      if (l > 0) names += " + ";
      names += data.meta(l).name;
    }
  }
  const bool centroid = m.method == "lr" || m.method == "centroid-gp";
  return std::string(centroid ? "Centroid " : "Stacked ") + names;
}

}  // namespace

std::vector<Index> kfold(Index n, Index k, std::uint64_t seed) {
  if (k < 1) throw InputError("kfold: k must be >= 1");
  if (k > n) throw InputError("kfold: more folds than regions");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Index> fold(static_cast<std::size_t>(n));
  // The first n % k folds get one extra region.
  Index pos = 0;
  for (Index f = 0; f < k; ++f) {
    const Index size = n / k + (f < n % k ? 1 : 0);
    for (Index t = 0; t < size; ++t) fold[static_cast<std::size_t>(order[static_cast<std::size_t>(pos++)])] = f;
  }
  return fold;
}

double rmse(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& yhat) {
  check_lengths(y.size(), yhat.size(), "rmse");
  return std::sqrt((y - yhat).squaredNorm() / static_cast<double>(y.size()));
}

double mape(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& yhat) {
  check_lengths(y.size(), yhat.size(), "mape");
  if ((y.array() == 0.0).any()) throw InputError("mape: a label is zero");
  return ((y - yhat).array() / y.array()).abs().mean();
}

double mape_guarded(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& yhat,
                    Index* excluded) {
  check_lengths(y.size(), yhat.size(), "mape");
  double sum = 0.0;
  Index used = 0;
  for (Index i = 0; i < y.size(); ++i) {
    if (std::abs(y[i]) < 1e-12) continue;
    sum += std::abs((y[i] - yhat[i]) / y[i]);
    ++used;
  }
  const Index skipped = y.size() - used;
  if (excluded) *excluded = skipped;
  if (skipped > 0) warn("MAPE: " + std::to_string(skipped) + " region(s) with |y| < 1e-12 excluded");
  return used > 0 ? sum / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
}

double coverage(const std::vector<GaussianPrediction>& predictions, const Eigen::Ref<const Eigen::VectorXd>& y,
                double level) {
  check_lengths(static_cast<Index>(predictions.size()), y.size(), "coverage");
  if (!(level > 0.0 && level < 1.0)) throw InputError("coverage: level must be in (0, 1)");
  const double z = boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 * (1.0 + level));
  Index inside = 0;
  for (Index i = 0; i < y.size(); ++i) {
    const auto& p = predictions[static_cast<std::size_t>(i)];
    const double half = z * std::sqrt(std::max(0.0, p.variance));
    if (y[i] >= p.mean - half && y[i] <= p.mean + half) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(y.size());
}

std::pair<double, double> mean_stderr(const std::vector<double>& values) {
  if (values.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan};
  }
  const double k = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / k;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (k - 1.0)) / std::sqrt(k)};
}

CVReport run_cv(const MultiResDataset& data, const MethodConfig& method, const CVOptions& options) {
  const Index n = data.size();
  const Eigen::VectorXd& y = data.labels();
  CVReport report;
  report.method = method.method;
  report.covariates = covariate_label(data, method);
  report.k = options.k;
  report.seed = options.seed;
  report.assignments = kfold(n, options.k, options.seed);
  report.predictions.assign(static_cast<std::size_t>(n), GaussianPrediction{});
  report.has_coverage = is_probabilistic(method.method);

  std::vector<double> rmses, mapes, runtimes;
  std::vector<Index> scored;
  for (Index f = 0; f < options.k; ++f) {
    std::vector<Index> train_idx, test_idx;
    for (Index i = 0; i < n; ++i) {
      (report.assignments[static_cast<std::size_t>(i)] == f ? test_idx : train_idx).push_back(i);
    }
    FoldResult fr;
    fr.fold = f;
    fr.n_train = static_cast<Index>(train_idx.size());
    fr.n_test = static_cast<Index>(test_idx.size());
    const MultiResDataset train = data.subset(train_idx);
    const MultiResDataset test = data.subset(test_idx);
    const auto start = std::chrono::steady_clock::now();
    try {
      auto fitted = fit_method(method, train);
      const auto preds = fitted->predict(test);
      fr.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      Eigen::VectorXd mean(fr.n_test);
      for (Index t = 0; t < fr.n_test; ++t) mean[t] = preds[static_cast<std::size_t>(t)].mean;
      const Eigen::VectorXd& yt = test.labels();
      fr.rmse = rmse(yt, mean);
      fr.mape = mape_guarded(yt, mean);
      if (report.has_coverage) {
        fr.coverage80 = coverage(preds, yt, 0.8);
        fr.coverage95 = coverage(preds, yt, 0.95);
      }
      for (Index t = 0; t < fr.n_test; ++t) {
        report.predictions[static_cast<std::size_t>(test_idx[static_cast<std::size_t>(t)])] =
            preds[static_cast<std::size_t>(t)];
        scored.push_back(test_idx[static_cast<std::size_t>(t)]);
      }
      rmses.push_back(fr.rmse);
      mapes.push_back(fr.mape);
      runtimes.push_back(fr.runtime_seconds);
    } catch (const Error& e) {
      fr.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      fr.failed = true;
      fr.error = e.what();
      warn("fold " + std::to_string(f) + " failed: " + e.what());
    }
    report.folds.push_back(std::move(fr));
  }
  std::tie(report.rmse_mean, report.rmse_stderr) = mean_stderr(rmses);
  std::tie(report.mape_mean, report.mape_stderr) = mean_stderr(mapes);
  std::tie(report.runtime_mean, report.runtime_stderr) = mean_stderr(runtimes);
  if (report.has_coverage && !scored.empty()) {
    std::sort(scored.begin(), scored.end());
    std::vector<GaussianPrediction> p;
    Eigen::VectorXd ys(static_cast<Index>(scored.size()));
    for (std::size_t t = 0; t < scored.size(); ++t) {
      p.push_back(report.predictions[static_cast<std::size_t>(scored[t])]);
      ys[static_cast<Index>(t)] = y[scored[t]];
    }
    report.coverage80 = coverage(p, ys, 0.8);
    report.coverage95 = coverage(p, ys, 0.95);
  }
  return report;
}

std::string report_to_json(const CVReport& r) {
  using nlohmann::json;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json doc;
  doc["method"] = r.method;
  doc["covariates"] = r.covariates;
  doc["k"] = r.k;
  doc["seed"] = r.seed;
  doc["rmse"] = {{"mean", num(r.rmse_mean)}, {"stderr", num(r.rmse_stderr)}};
  doc["mape"] = {{"mean", num(r.mape_mean)}, {"stderr", num(r.mape_stderr)}};
  doc["runtime_seconds"] = {{"mean", num(r.runtime_mean)}, {"stderr", num(r.runtime_stderr)}};
  if (r.has_coverage) doc["coverage"] = {{"0.80", num(r.coverage80)}, {"0.95", num(r.coverage95)}};
  doc["folds"] = json::array();
  for (const auto& f : r.folds) {
    json jf = {{"fold", f.fold},       {"n_train", f.n_train}, {"n_test", f.n_test},
               {"failed", f.failed},   {"rmse", num(f.rmse)},  {"mape", num(f.mape)},
               {"runtime_seconds", f.runtime_seconds}};
    if (r.has_coverage) jf["coverage"] = {{"0.80", num(f.coverage80)}, {"0.95", num(f.coverage95)}};
    if (f.failed) jf["error"] = f.error;
    doc["folds"].push_back(std::move(jf));
  }
  doc["assignments"] = r.assignments;
  if (!r.timings.empty()) {
    json t = json::object();
    for (const auto& [name, secs] : r.timings) t[name] = secs;
    doc["timings"] = std::move(t);
  }
  return doc.dump(2) + "\n";
}

std::string report_table(const std::vector<CVReport>& reports) {
  std::ostringstream out;
  char line[512];
  std::snprintf(line, sizeof line, "%-12s %-36s %-22s %-22s %-22s\n", "Method", "Covariates", "RMSE", "MAPE",
                "Runtime");
  out << line;
  auto cell = [](double m, double s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g +/- %.3g", m, s);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-12s %-36s %-22s %-22s %-22s\n", r.method.c_str(), r.covariates.c_str(),
                  cell(r.rmse_mean, r.rmse_stderr).c_str(), cell(r.mape_mean, r.mape_stderr).c_str(),
                  cell(r.runtime_mean, r.runtime_stderr).c_str());
    out << line;
  }
  return out.str();
}

}  // namespace agggp
