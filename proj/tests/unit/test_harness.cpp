#include <cmath>
#include <random>
#include <set>

#include <doctest.h>
#include <json.hpp>

#include "agggp/errors.hpp"
#include "agggp/harness.hpp"
#include "agggp/methods.hpp"
#include "oracles.hpp"

using namespace agggp;

TEST_CASE("k-fold assignment") {
  SUBCASE("leave one out") {
    const auto a = kfold(5, 5, 3);
    CHECK(std::set<Index>(a.begin(), a.end()).size() == 5);
  }
  SUBCASE("sizes") {
    for (Index n : {375, 377, 10, 7}) {
      const auto a = kfold(n, 5, 1);
      REQUIRE(static_cast<Index>(a.size()) == n);
      std::vector<Index> count(5, 0);
      for (Index f : a) {
        REQUIRE(f >= 0);
        REQUIRE(f < 5);
        ++count[static_cast<std::size_t>(f)];
      }
      const auto [lo, hi] = std::minmax_element(count.begin(), count.end());
      CHECK(*hi - *lo <= 1);
      if (n == 375) CHECK(count == std::vector<Index>(5, 75));
    }
  }
  SUBCASE("seeded") {
    CHECK(kfold(100, 5, 9) == kfold(100, 5, 9));
    CHECK(kfold(100, 5, 9) != kfold(100, 5, 10));
  }
  CHECK_THROWS_AS(kfold(3, 5, 0), InputError);
  CHECK_THROWS_AS(kfold(3, 0, 0), InputError);
}

TEST_CASE("metric examples") {
  const Eigen::VectorXd y = Eigen::Vector2d(1.0, 1.0);
  CHECK(rmse(y, y) == 0.0);
  CHECK(mape(y, y) == 0.0);
  CHECK(rmse(y, Eigen::Vector2d(0.0, 2.0)) == 1.0);
  CHECK(mape(y, Eigen::Vector2d(0.0, 2.0)) == 1.0);
  CHECK(rmse(Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 1.0)) == 1.0);
  CHECK(mape(Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 1.0)) == 0.5);
  CHECK_THROWS_AS(mape(Eigen::Vector2d(0.0, 1.0), Eigen::Vector2d(1.0, 1.0)), InputError);
  CHECK_THROWS_AS(rmse(y, Eigen::VectorXd::Zero(3)), InputError);
  Index excluded = 0;
  CHECK(mape_guarded(Eigen::Vector3d(0.0, 2.0, 4.0), Eigen::Vector3d(5.0, 1.0, 4.0), &excluded) == 0.25);
  CHECK(excluded == 1);
}

TEST_CASE("constant predictor scores the label standard deviation") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(1.0, 2.0);
  Eigen::VectorXd y(200);
  for (Index i = 0; i < 200; ++i) y[i] = normal(rng);
  const double sd = std::sqrt((y.array() - y.mean()).square().mean());
  CHECK(rmse(y, Eigen::VectorXd::Constant(200, y.mean())) == doctest::Approx(sd).epsilon(1e-14));
}

TEST_CASE("coverage") {
  const Eigen::VectorXd y = Eigen::Vector3d(0.5, -1.0, 2.0);
  std::vector<GaussianPrediction> exact;
  for (Index i = 0; i < 3; ++i) exact.push_back({y[i], 0.0});
  CHECK(coverage(exact, y, 0.95) == 1.0);
  CHECK(coverage({{0.0, 1.0}}, Eigen::VectorXd::Constant(1, 1.95), 0.95) == 1.0);
  CHECK(coverage({{0.0, 1.0}}, Eigen::VectorXd::Constant(1, 1.97), 0.95) == 0.0);
  CHECK(coverage({{0.0, 1.0}}, Eigen::VectorXd::Constant(1, 1.28), 0.80) == 1.0);
  CHECK(coverage({{0.0, 1.0}}, Eigen::VectorXd::Constant(1, 1.29), 0.80) == 0.0);
  CHECK_THROWS_AS(coverage(exact, y, 1.0), InputError);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  std::vector<GaussianPrediction> preds;
  Eigen::VectorXd draws(10000);
  for (Index i = 0; i < 10000; ++i) {
    const double m = unif(rng), v = 0.1 + std::abs(unif(rng));
    std::normal_distribution<double> nd(m, std::sqrt(v));
    preds.push_back({m, v});
    draws[i] = nd(rng);
  }
  for (double level : {0.5, 0.8, 0.95}) CHECK(std::abs(coverage(preds, draws, level) - level) <= 0.02);
}

TEST_CASE("mean and standard error") {
  const auto [m, se] = mean_stderr({1.0, 2.0, 3.0, 6.0});
  CHECK(m == 3.0);
  CHECK(se == doctest::Approx(std::sqrt(14.0 / 3.0) / 2.0).epsilon(1e-15));
  CHECK(mean_stderr({4.0}).second == 0.0);
}

TEST_CASE("cross-validation report") {
  std::mt19937_64 rng(7);
  auto data = oracle::random_dataset(rng, 23, 2, 3, 2, true);
  MethodConfig method;
  method.method = "lre";
  CVOptions opts;
  opts.seed = 4;
  const auto report = run_cv(data, method, opts);
  CHECK(report.assignments == kfold(23, 5, 4));
  REQUIRE(report.folds.size() == 5);
  std::vector<double> r, p;
  for (const auto& f : report.folds) {
    CHECK_FALSE(f.failed);
    CHECK(f.n_train + f.n_test == 23);
    r.push_back(f.rmse);
    p.push_back(f.mape);
  }
  CHECK(report.rmse_mean == (r[0] + r[1] + r[2] + r[3] + r[4]) / 5.0);
  CHECK(report.rmse_stderr == mean_stderr(r).second);
  CHECK(report.mape_mean == mean_stderr(p).first);
  CHECK(report.predictions.size() == 23);
  CHECK_FALSE(report.has_coverage);

  // Held-out predictions come from a model fitted without the region.
  for (Index f = 0; f < 5; ++f) {
    std::vector<Index> tr, te;
    for (Index i = 0; i < 23; ++i) (report.assignments[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
    const auto fitted = fit_method(method, data.subset(tr));
    const auto pred = fitted->predict(data.subset(te));
    for (std::size_t j = 0; j < te.size(); ++j) {
      CHECK(pred[j].mean == report.predictions[static_cast<std::size_t>(te[j])].mean);
    }
  }

  const auto again = run_cv(data, method, opts);
  CHECK(again.rmse_mean == report.rmse_mean);
  CHECK(report_to_json(again).size() > 0);
  const auto doc = nlohmann::json::parse(report_to_json(report));
  CHECK(doc.at("folds").size() == 5);
  const std::string table = report_table({report});
  CHECK(table.find("RMSE") != std::string::npos);
  CHECK(table.find("lre") != std::string::npos);
}

TEST_CASE("cross-validation of a probabilistic method reports coverage") {
  std::mt19937_64 rng(9);
  const auto data = oracle::random_dataset(rng, 15, 1, 3, 1);
  MethodConfig method;
  method.method = "exact-agg";
  const auto report = run_cv(data, method, {3, 1});
  CHECK(report.has_coverage);
  CHECK(report.coverage95 >= 0.0);
  CHECK(report.coverage95 <= 1.0);
  CHECK(report.coverage80 <= report.coverage95);
}

TEST_CASE("a failing fold is marked") {
  std::mt19937_64 rng(11);
  auto data = oracle::random_dataset(rng, 10, 1, 2);
  MethodConfig method;
  method.method = "krre";
  // Identical bags have zero embedding distance, so the median heuristic fails.
  std::vector<MultiResBag> same;
  for (Index i = 0; i < 10; ++i) {
    auto b = data.bag(0);
    b.region_id = "r" + std::to_string(i);
    for (auto& r : b.resolutions) r.region_id = b.region_id;
    b.label = static_cast<double>(i);
    same.push_back(b);
  }
  const auto report = run_cv(MultiResDataset::from_bags(same, data.meta()), method, {2, 0});
  CHECK(report.folds[0].failed);
  CHECK_FALSE(report.folds[0].error.empty());
}
