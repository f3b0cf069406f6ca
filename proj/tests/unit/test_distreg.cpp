#include <algorithm>
#include <cmath>
#include <random>

#include <doctest.h>

#include "agggp/bags.hpp"
#include "agggp/distreg.hpp"
#include "agggp/errors.hpp"
#include "agggp/exact_gp.hpp"
#include "oracles.hpp"

using namespace agggp;

namespace {

const KernelSpec kRbf{KernelFamily::RBF, 1.0, 1.0, 1};

MultiResDataset single_bag(std::initializer_list<double> xs, std::optional<double> label, const std::string& id = "a") {
  MultiResBag mb;
  mb.region_id = id;
  Bag b;
  b.region_id = id;
  b.points.resize(static_cast<Index>(xs.size()), 1);
  Index t = 0;
  for (double x : xs) b.points(t++, 0) = x;
  b.weights = Eigen::VectorXd::Constant(b.points.rows(), 1.0 / static_cast<double>(b.points.rows()));
  mb.resolutions.push_back(b);
  mb.label = label;
  return MultiResDataset::from_bags({mb}, {{"x", KernelFamily::RBF}});
}

// Uniform-weight mean-embedding inner products by explicit double sums.
Eigen::MatrixXd embedding_oracle(const std::vector<KernelSpec>& specs, const MultiResDataset& a,
                                 const MultiResDataset& b) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.size(), b.size());
  for (Index l = 0; l < a.num_resolutions(); ++l) {
    for (Index i = 0; i < a.size(); ++i) {
      for (Index j = 0; j < b.size(); ++j) {
        const auto Xi = a.resolution(l).points(i);
        const auto Xj = b.resolution(l).points(j);
        double s = 0.0;
        for (Index p = 0; p < Xi.rows(); ++p) {
          for (Index q = 0; q < Xj.rows(); ++q) {
            s += oracle::kernel(specs[static_cast<std::size_t>(l)], Xi.row(p).transpose(), Xj.row(q).transpose());
          }
        }
        out(i, j) += s / static_cast<double>(Xi.rows() * Xj.rows());
      }
    }
  }
  return out;
}

std::vector<KernelSpec> specs_for(const MultiResDataset& data, double lengthscale = 0.8) {
  std::vector<KernelSpec> specs;
  for (Index l = 0; l < data.num_resolutions(); ++l) {
    specs.push_back({data.meta(l).kernel, 1.0, lengthscale, data.resolution(l).dim()});
  }
  return specs;
}

}  // namespace

TEST_CASE("embedding gram examples") {
  const auto a = single_bag({0.0, 2.0}, 1.0);
  const auto b = single_bag({1.0}, 1.0);
  CHECK(embedding_gram({kRbf}, a, b)(0, 0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  const auto twins = single_bag({0.4, 0.4}, 1.0);
  const KernelSpec scaled{KernelFamily::RBF, 2.5, 1.0, 1};
  CHECK(embedding_gram({scaled}, twins, twins)(0, 0) == doctest::Approx(2.5).epsilon(1e-14));

  std::mt19937_64 rng(3);
  const Eigen::MatrixXd X = Eigen::MatrixXd::Random(5, 1);
  const auto pts = oracle::point_dataset(X, std::nullopt);
  CHECK((embedding_gram({kRbf}, pts, pts) - oracle::gram(kRbf, X, X)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("embedding gram ignores stored weights and matches uniform aggregated gram") {
  std::mt19937_64 rng(5);
  const auto weighted = oracle::random_dataset(rng, 6, 2, 4, 2, false);
  const auto specs = specs_for(weighted);
  const Eigen::MatrixXd ref = embedding_oracle(specs, weighted, weighted);
  CHECK((embedding_gram(specs, weighted, weighted) - ref).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("LRe scalar example") {
  const auto data = single_bag({0.0}, 2.0);
  const auto model = fit_lre(data, {kRbf}, 1.0);
  CHECK(model.coeffs[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(predict(model, data.bag(0)) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("LRe interpolates as the ridge vanishes") {
  std::mt19937_64 rng(7);
  const auto data = oracle::random_dataset(rng, 5, 1, 3, 1, true);
  const auto model = fit_lre(data, specs_for(data, 0.3), 1e-9);
  const Eigen::VectorXd pred = predict(model, data);
  CHECK((pred - data.labels()).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("LRe equals the exact aggregated GP mean") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    const auto all = oracle::random_dataset(rng, 7, 1, 4, 2, true);
    const std::vector<Index> tr{0, 1, 2, 3}, te{4, 5, 6};
    const auto train = all.subset(tr);
    const auto test = all.subset(te);
    const auto specs = specs_for(train, 0.9);
    const double lambda = 0.1;
    const auto lre = fit_lre(train, specs, lambda);
    const auto gp = ExactAggGP::fit(train, specs, lambda);
    const Eigen::VectorXd a = predict(lre, test);
    const auto b = gp.predict(test);
    for (Index i = 0; i < test.size(); ++i) CHECK(std::abs(a[i] - b[static_cast<std::size_t>(i)].mean) < 1e-10);
  }
}

TEST_CASE("LRe and KRRe match dense oracles") {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 5; ++rep) {
    const auto all = oracle::random_dataset(rng, 7, 2, 3, 2, true);
    const std::vector<Index> tr{0, 1, 2, 3}, te{4, 5, 6};
    const auto train = all.subset(tr);
    const auto test = all.subset(te);
    const auto specs = specs_for(train);
    const double lambda = 0.1;
    const Eigen::VectorXd y = train.labels();
    const Eigen::MatrixXd K = embedding_oracle(specs, train, train);
    const Eigen::MatrixXd Ks = embedding_oracle(specs, test, train);

    const auto lre = fit_lre(train, specs, lambda);
    const Eigen::VectorXd lre_ref = Ks * oracle::ridge_solve(K, y, lambda);
    CHECK((predict(lre, test) - lre_ref).cwiseAbs().maxCoeff() < 1e-10);

    std::vector<double> dists;
    for (Index i = 0; i < 4; ++i) {
      for (Index j = i + 1; j < 4; ++j) dists.push_back(std::sqrt(std::max(0.0, K(i, i) - 2 * K(i, j) + K(j, j))));
    }
    std::sort(dists.begin(), dists.end());
    const double median = 0.5 * (dists[2] + dists[3]);
    const Eigen::VectorXd test_self = embedding_oracle(specs, test, test).diagonal();
    auto rho = [&](double kii, double kij, double kjj, double ell) {
      return std::exp(-std::max(0.0, kii - 2 * kij + kjj) / (2 * ell * ell));
    };
    for (std::optional<double> ell : {std::optional<double>{}, std::optional<double>{0.7}}) {
      const double used = ell.value_or(median);
      Eigen::MatrixXd R(4, 4), Rs(3, 4);
      for (Index i = 0; i < 4; ++i) {
        for (Index j = 0; j < 4; ++j) R(i, j) = rho(K(i, i), K(i, j), K(j, j), used);
      }
      for (Index i = 0; i < 3; ++i) {
        for (Index j = 0; j < 4; ++j) Rs(i, j) = rho(test_self[i], Ks(i, j), K(j, j), used);
      }
      const auto krre = fit_krre(train, specs, lambda, ell);
      CHECK(krre.second_lengthscale == doctest::Approx(used).epsilon(1e-12));
      const Eigen::VectorXd ref = Rs * oracle::ridge_solve(R, y, lambda);
      CHECK((predict(krre, test) - ref).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("KRRe on identical bags shrinks the common label") {
  std::vector<MultiResBag> bags;
  for (int i = 0; i < 3; ++i) {
    auto d = single_bag({0.1, 0.7}, 2.0, "r" + std::to_string(i));
    bags.push_back(d.bag(0));
  }
  const auto data = MultiResDataset::from_bags(bags, {{"x", KernelFamily::RBF}});
  const auto model = fit_krre(data, {kRbf}, 0.5, 1.0);
  const Eigen::VectorXd pred = predict(model, data);
  for (Index i = 0; i < 3; ++i) CHECK(pred[i] == doctest::Approx(3.0 * 2.0 / (3.0 + 0.5)).epsilon(1e-12));
  CHECK_THROWS_AS(fit_krre(data, {kRbf}, 0.5), InputError);
}

TEST_CASE("KRRe prediction decays for a distant bag") {
  std::mt19937_64 rng(17);
  const auto data = oracle::random_dataset(rng, 6, 1, 3, 1, true);
  const auto model = fit_krre(data, specs_for(data, 0.5), 0.1, 0.05);
  const auto far = single_bag({500.0, 501.0}, std::nullopt, "far");
  CHECK(std::abs(predict(model, far.bag(0))) < 1e-8);
}

TEST_CASE("LRe embedding invariances") {
  std::mt19937_64 rng(19);
  const auto data = oracle::random_dataset(rng, 5, 2, 4, 2, true);
  const auto specs = specs_for(data);
  const auto model = fit_lre(data, specs, 0.1);
  std::vector<MultiResBag> perm, dup;
  for (Index i = 0; i < data.size(); ++i) {
    auto b = data.bag(i);
    auto p = b, d = b;
    for (std::size_t l = 0; l < b.resolutions.size(); ++l) {
      const Eigen::MatrixXd X = b.resolutions[l].points;
      p.resolutions[l].points = X.colwise().reverse();
      Eigen::MatrixXd twice(2 * X.rows(), X.cols());
      twice << X, X;
      d.resolutions[l].points = twice;
      d.resolutions[l].weights = Eigen::VectorXd::Constant(twice.rows(), 1.0 / static_cast<double>(twice.rows()));
    }
    perm.push_back(p);
    dup.push_back(d);
  }
  const Eigen::VectorXd base = predict(model, data);
  CHECK((predict(model, MultiResDataset::from_bags(perm, data.meta())) - base).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((predict(model, MultiResDataset::from_bags(dup, data.meta())) - base).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ridge path shrinks the coefficient norm") {
  std::mt19937_64 rng(23);
  const auto data = oracle::random_dataset(rng, 8, 2, 3, 2, true);
  const auto specs = specs_for(data);
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {1e-3, 1e-2, 0.1, 0.5, 1.0, 5.0, 50.0}) {
    const double norm = fit_lre(data, specs, lambda).coeffs.norm();
    CHECK(norm <= prev + 1e-12);
    prev = norm;
  }
  CHECK_THROWS_AS(fit_lre(data, specs, 0.0), ParameterError);
}

TEST_CASE("centroid least squares") {
  SUBCASE("two points on a line") {
    Eigen::MatrixXd X(2, 1);
    X << 1.0, 3.0;
    const Eigen::VectorXd y = (Eigen::VectorXd(2) << 5.0, 11.0).finished();
    const auto fit = fit_lr_centroid(oracle::point_dataset(X, y));
    CHECK(fit.coef[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(fit.intercept == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("constant labels") {
    const Eigen::MatrixXd X = (Eigen::MatrixXd(4, 1) << 0.0, 1.0, 2.0, 5.0).finished();
    const auto fit = fit_lr_centroid(oracle::point_dataset(X, Eigen::VectorXd::Constant(4, -1.5)));
    CHECK(std::abs(fit.coef[0]) < 1e-12);
    CHECK(fit.intercept == doctest::Approx(-1.5).epsilon(1e-12));
  }
  SUBCASE("normal equations") {
    std::mt19937_64 rng(29);
    const auto data = oracle::random_dataset(rng, 20, 2, 4, 2, false);
    const auto fit = fit_lr_centroid(data);
    const Eigen::MatrixXd F = stacked_centroids(data);
    Eigen::MatrixXd A(F.rows(), F.cols() + 1);
    A << F, Eigen::VectorXd::Ones(F.rows());
    const Eigen::VectorXd beta = (A.transpose() * A).inverse() * A.transpose() * data.labels();
    CHECK((fit.coef - beta.head(F.cols())).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(fit.intercept - beta[F.cols()]) < 1e-8);
    Eigen::MatrixXd cent(data.size(), F.cols());
    for (Index i = 0; i < data.size(); ++i) {
      Index c = 0;
      for (Index l = 0; l < data.num_resolutions(); ++l) {
        const auto& r = data.resolution(l);
        const Eigen::RowVectorXd m = r.weights(i).transpose() * r.points(i);
        cent.block(i, c, 1, m.size()) = m;
        c += m.size();
      }
    }
    CHECK((F - cent).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("rank-deficient design falls back to minimum norm") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(3, 1);
    const auto fit = fit_lr_centroid(oracle::point_dataset(X, Eigen::VectorXd::Constant(3, 4.0)));
    const Eigen::VectorXd pred = predict(fit, oracle::point_dataset(X, std::nullopt));
    CHECK((pred.array() - 4.0).abs().maxCoeff() < 1e-10);
  }
}
