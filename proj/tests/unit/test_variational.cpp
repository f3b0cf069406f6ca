#include <cmath>
#include <numbers>
#include <random>

#include <doctest.h>

#include "agggp/bags.hpp"
#include "agggp/errors.hpp"
#include "agggp/exact_gp.hpp"
#include "agggp/variational.hpp"
#include "oracles.hpp"

using namespace agggp;

namespace {

Eigen::MatrixXd jittered(const KernelSpec& k, const Eigen::MatrixXd& Z) {
  Eigen::MatrixXd K = oracle::gram(k, Z, Z);
  K.diagonal().array() += kJitter * k.scale;
  return K;
}

// ELBO from dense formulas: explicit inverses, per-bag expectations, textbook KL.
double elbo_oracle(const MVBAggModel& m, const MultiResDataset& data, const std::vector<Index>& batch, Index n_total) {
  double data_term = 0.0;
  for (Index i : batch) {
    double mean = 0.0, var = 0.0, wsq = 0.0;
    for (Index l = 0; l < data.num_resolutions(); ++l) {
      const auto& k = m.kernels[static_cast<std::size_t>(l)];
      const auto& ind = m.vstate.resolutions[static_cast<std::size_t>(l)];
      const Eigen::MatrixXd X = data.resolution(l).points(i);
      const Eigen::VectorXd w = data.resolution(l).weights(i);
      const Eigen::MatrixXd Kz = jittered(k, ind.Z);
      const Eigen::MatrixXd A = oracle::gram(k, X, ind.Z) * Kz.inverse();
      const Eigen::MatrixXd S = ind.chol_sigma * ind.chol_sigma.transpose();
      const Eigen::VectorXd mt = A * ind.eta;
      const Eigen::MatrixXd kt = oracle::gram(k, X, X) - A * (Kz - S) * A.transpose();
      mean += w.dot(mt);
      var += w.dot(kt * w);
      wsq += w.squaredNorm();
    }
    const double s2 = m.noise_mode == NoiseMode::Plain ? m.noise_var : m.noise_var * wsq;
    const double y = data.labels()[i];
    data_term += -(y * y - 2 * y * mean + mean * mean + var) / (2 * s2) - 0.5 * std::log(2 * std::numbers::pi * s2);
  }
  double kl = 0.0;
  for (std::size_t l = 0; l < m.kernels.size(); ++l) {
    const auto& ind = m.vstate.resolutions[l];
    kl += oracle::gaussian_kl(ind.eta, ind.chol_sigma * ind.chol_sigma.transpose(), jittered(m.kernels[l], ind.Z));
  }
  return static_cast<double>(n_total) / static_cast<double>(batch.size()) * data_term - kl;
}

std::vector<Index> iota(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

// q equal to the prior over the given inducing sets.
MVBAggModel prior_model(const MultiResDataset& data, const std::vector<KernelSpec>& specs, double noise,
                        const std::vector<Eigen::MatrixXd>& Zs) {
  MVBAggModel m;
  m.noise_var = noise;
  for (Index l = 0; l < data.num_resolutions(); ++l) {
    const auto& k = specs[static_cast<std::size_t>(l)];
    InducingSet ind;
    ind.Z = Zs[static_cast<std::size_t>(l)];
    ind.eta = Eigen::VectorXd::Zero(ind.Z.rows());
    ind.chol_sigma = jittered(k, ind.Z).llt().matrixL();
    m.resolution_names.push_back(data.meta(l).name);
    m.kernels.push_back(k);
    m.vstate.resolutions.push_back(ind);
  }
  return m;
}

std::vector<KernelSpec> specs_for(const MultiResDataset& data, double scale = 1.0, double ell = 0.7) {
  std::vector<KernelSpec> specs;
  for (Index l = 0; l < data.num_resolutions(); ++l) {
    specs.push_back({data.meta(l).kernel, scale, ell, data.resolution(l).dim()});
  }
  return specs;
}

std::vector<Eigen::MatrixXd> all_points(const MultiResDataset& data) {
  std::vector<Eigen::MatrixXd> Zs;
  for (Index l = 0; l < data.num_resolutions(); ++l) Zs.push_back(oracle::all_points(data, l));
  return Zs;
}

}  // namespace

TEST_CASE("ELBO matches the dense oracle") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Index D = 1 + rep % 3;
    const auto data = oracle::random_dataset(rng, 7, D, 4);
    auto m = oracle::random_model(rng, data, 4);
    m.noise_mode = rep % 2 == 0 ? NoiseMode::Plain : NoiseMode::Weighted;
    const double full = elbo_oracle(m, data, iota(7), 7);
    CHECK(std::abs(elbo(m, data) - full) <= 1e-9 * (1.0 + std::abs(full)));
    const std::vector<Index> batch{1, 4, 5};
    const double part = elbo_oracle(m, data, batch, 7);
    CHECK(std::abs(elbo(m, data, batch, 7) - part) <= 1e-9 * (1.0 + std::abs(part)));
  }
}

TEST_CASE("ELBO never exceeds the exact evidence") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    const Index n = 3 + rep % 18;
    const auto data = oracle::random_dataset(rng, n, 1 + rep % 2, 5);
    auto m = oracle::random_model(rng, data, 1 + rep % 6);
    const double lml = ExactAggGP::fit(data, m.kernels, m.noise_var).log_marginal_likelihood();
    CHECK(elbo(m, data) <= lml + 1e-6);
    optimize_q(m, data, 5);
    CHECK(elbo(m, data) <= lml + 1e-6);
  }
}

TEST_CASE("optimal q at full inducing set closes the gap") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const auto data = oracle::random_dataset(rng, 8, 1, 3, 2);
    auto m = prior_model(data, specs_for(data, 1.0, 0.6), 0.2, all_points(data));
    const double lml = ExactAggGP::fit(data, m.kernels, m.noise_var).log_marginal_likelihood();
    optimize_q(m, data);
    const double bound = elbo(m, data);
    CHECK(bound <= lml + 1e-6);
    CHECK(lml - bound <= 1e-3);
  }
}

TEST_CASE("optimal q is stationary for the ELBO") {
  std::mt19937_64 rng(9);
  const auto data = oracle::random_dataset(rng, 10, 2, 3);
  auto m = oracle::random_model(rng, data, 4);
  optimize_q(m, data, 50);
  const double best = elbo(m, data);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    auto p = m;
    for (auto& ind : p.vstate.resolutions) {
      for (Index t = 0; t < ind.eta.size(); ++t) ind.eta[t] += 1e-3 * normal(rng);
    }
    CHECK(elbo(p, data) <= best + 1e-9);
  }
}

TEST_CASE("minibatch bound is unbiased over partitions") {
  std::mt19937_64 rng(11);
  const auto data = oracle::random_dataset(rng, 4, 2, 3);
  const auto m = oracle::random_model(rng, data, 3);
  const double full = elbo(m, data);
  const std::vector<std::pair<std::vector<Index>, std::vector<Index>>> partitions{
      {{0, 1}, {2, 3}}, {{0, 2}, {1, 3}}, {{0, 3}, {1, 2}}};
  double grand = 0.0;
  for (const auto& [a, b] : partitions) {
    const double avg = 0.5 * (elbo(m, data, a, 4) + elbo(m, data, b, 4));
    CHECK(std::abs(avg - full) < 1e-10 * (1.0 + std::abs(full)));
    grand += avg / 3.0;
  }
  CHECK(std::abs(grand - full) < 1e-10 * (1.0 + std::abs(full)));
  CHECK(elbo(m, data) == elbo(m, data));
}

TEST_CASE("ELBO rejects bad inputs") {
  std::mt19937_64 rng(13);
  const auto data = oracle::random_dataset(rng, 4, 1, 3);
  auto m = oracle::random_model(rng, data, 2);
  CHECK_THROWS_AS(elbo(m, data, std::vector<Index>{}, 4), InputError);
  CHECK_THROWS_AS(elbo(m, data, std::vector<Index>{0, 1}, 1), InputError);
  m.noise_var = 0.0;
  CHECK_THROWS_AS(elbo(m, data), ParameterError);
  m.noise_var = -1.0;
  CHECK_THROWS_AS(elbo(m, data), ParameterError);
}

TEST_CASE("KL term") {
  SUBCASE("q equal to the prior") {
    std::mt19937_64 rng(17);
    const auto data = oracle::random_dataset(rng, 6, 2, 3);
    const auto m = prior_model(data, specs_for(data), 0.1, all_points(data));
    CHECK(std::abs(kl_term(m)) < 1e-9);
  }
  SUBCASE("scalar example") {
    MVBAggModel m;
    m.resolution_names = {"x"};
    m.kernels = {{KernelFamily::RBF, 1.0 / (1.0 + kJitter), 1.0, 1}};
    InducingSet ind;
    ind.Z = Eigen::MatrixXd::Zero(1, 1);
    ind.eta = Eigen::VectorXd::Ones(1);
    ind.chol_sigma = Eigen::MatrixXd::Ones(1, 1);
    m.vstate.resolutions = {ind};
    CHECK(kl_term(m) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("non-negative and equal to the textbook formula") {
    std::mt19937_64 rng(19);
    for (int rep = 0; rep < 30; ++rep) {
      const auto data = oracle::random_dataset(rng, 5, 2, 3);
      const auto m = oracle::random_model(rng, data, 1 + rep % 5);
      double ref = 0.0;
      for (std::size_t l = 0; l < m.kernels.size(); ++l) {
        const auto& ind = m.vstate.resolutions[l];
        ref += oracle::gaussian_kl(ind.eta, ind.chol_sigma * ind.chol_sigma.transpose(), jittered(m.kernels[l], ind.Z));
      }
      CHECK(kl_term(m) >= 0.0);
      CHECK(std::abs(kl_term(m) - ref) < 1e-9 * (1.0 + ref));
    }
  }
}

TEST_CASE("q posterior at arbitrary points") {
  std::mt19937_64 rng(23);
  const auto data = oracle::random_dataset(rng, 6, 1, 3, 2);
  const auto m = oracle::random_model(rng, data, 5);
  const auto& k = m.kernels[0];
  const auto& ind = m.vstate.resolutions[0];
  const Eigen::MatrixXd S = ind.chol_sigma * ind.chol_sigma.transpose();

  // Inducing points spread out so that explicit inverses in the oracle stay accurate.
  auto spread = m;
  auto& Z = spread.vstate.resolutions[0].Z;
  for (Index j = 0; j < Z.rows(); ++j) Z.row(j).setConstant(1.5 * k.lengthscale * static_cast<double>(j));

  SUBCASE("direct formula") {
    const Eigen::MatrixXd Xq = 3.0 * Eigen::MatrixXd::Random(7, k.input_dim);
    const auto q = q_posterior_at(spread, 0, Xq);
    const Eigen::MatrixXd Kz = jittered(k, Z);
    const Eigen::MatrixXd A = oracle::gram(k, Xq, Z) * Kz.inverse();
    CHECK((q.mean - A * ind.eta).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((q.cov - (oracle::gram(k, Xq, Xq) - A * (Kz - S) * A.transpose())).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("reproduces q at the inducing points") {
    // A = K (K + jitter I)^{-1} differs from the identity by O(jitter / lambda_min(K)).
    const auto q = q_posterior_at(spread, 0, Z);
    CHECK((q.mean - ind.eta).cwiseAbs().maxCoeff() < 1e-5);
    CHECK((q.cov - S).cwiseAbs().maxCoeff() < 1e-5);
    const auto pts = disaggregate(spread, 0, Z);
    for (Index j = 0; j < ind.size(); ++j) {
      CHECK(std::abs(pts[static_cast<std::size_t>(j)].mean - ind.eta[j]) < 1e-5);
      CHECK(std::abs(pts[static_cast<std::size_t>(j)].variance - S(j, j)) < 1e-5);
    }
  }
  SUBCASE("prior-matching q returns the prior") {
    const auto p = prior_model(data, m.kernels, 0.3, {ind.Z});
    const Eigen::MatrixXd Xq = Eigen::MatrixXd::Random(4, k.input_dim);
    const auto q = q_posterior_at(p, 0, Xq);
    CHECK(q.mean.cwiseAbs().maxCoeff() < 1e-14);
    CHECK((q.cov - oracle::gram(k, Xq, Xq)).cwiseAbs().maxCoeff() < 1e-5);
  }
  SUBCASE("far points revert to the prior") {
    const Eigen::MatrixXd far = Eigen::MatrixXd::Constant(2, k.input_dim, 1e4);
    const auto pts = disaggregate(m, 0, far);
    for (const auto& p : pts) {
      CHECK(std::abs(p.mean) < 1e-12);
      CHECK(p.variance == doctest::Approx(k.scale).epsilon(1e-12));
    }
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(q_posterior_at(m, 0, Eigen::MatrixXd::Zero(2, k.input_dim + 1)), InputError);
    CHECK_THROWS_AS(disaggregate(m, 3, ind.Z), InputError);
  }
}

TEST_CASE("aggregate prediction") {
  std::mt19937_64 rng(29);
  SUBCASE("prior q predicts the prior") {
    const auto data = oracle::random_dataset(rng, 5, 2, 4);
    const auto m = prior_model(data, specs_for(data), 0.25, all_points(data));
    const Eigen::VectorXd prior = oracle::aggregate_gram(m.kernels, data, data).diagonal();
    const auto with_noise = predict(m, data);
    const auto latent = predict(m, data, false);
    for (Index i = 0; i < data.size(); ++i) {
      const auto& a = with_noise[static_cast<std::size_t>(i)];
      CHECK(std::abs(a.mean) < 1e-12);
      CHECK(std::abs(a.variance - (prior[i] + 0.25)) < 1e-5);
      CHECK(std::abs(latent[static_cast<std::size_t>(i)].variance - prior[i]) < 1e-5);
      const auto single = predict_bag(m, data.bag(i));
      CHECK(std::abs(single.mean - a.mean) < 1e-12);
      CHECK(std::abs(single.variance - a.variance) < 1e-12);
    }
  }
  SUBCASE("matches the exact GP for single-point bags at the full inducing set") {
    for (int rep = 0; rep < 5; ++rep) {
      // Stratified inputs keep K_ZZ well conditioned relative to the jitter.
      Eigen::MatrixXd X(8, 1);
      for (Index i = 0; i < 8; ++i) X(i, 0) = -3.0 + 0.75 * (static_cast<double>(i) + 0.25 + 0.5 * std::abs(Eigen::VectorXd::Random(1)[0]));
      Eigen::VectorXd y(8);
      for (Index i = 0; i < 8; ++i) y[i] = std::sin(3.0 * X(i, 0)) + 0.1 * i;
      const auto train = oracle::point_dataset(X, y);
      const auto test = oracle::point_dataset(3.0 * Eigen::MatrixXd::Random(5, 1), std::nullopt);
      const std::vector<KernelSpec> specs{{KernelFamily::RBF, 1.0, 0.5, 1}};
      auto m = prior_model(train, specs, 0.05, {X});
      optimize_q(m, train);
      const auto exact = ExactAggGP::fit(train, specs, 0.05).predict(test);
      const auto approx = predict(m, test, false);
      for (std::size_t j = 0; j < exact.size(); ++j) {
        CHECK(std::abs(approx[j].mean - exact[j].mean) < 1e-4);
        CHECK(std::abs(approx[j].variance - exact[j].variance) < 1e-4);
      }
    }
  }
  SUBCASE("point permutation invariance and positive variance") {
    const auto data = oracle::random_dataset(rng, 4, 3, 5);
    const auto m = oracle::random_model(rng, data, 3);
    for (Index i = 0; i < data.size(); ++i) {
      auto bag = data.bag(i);
      const auto base = predict_bag(m, bag);
      for (auto& b : bag.resolutions) {
        b.points = b.points.colwise().reverse().eval();
        b.weights = b.weights.reverse().eval();
      }
      const auto perm = predict_bag(m, bag);
      CHECK(std::abs(perm.mean - base.mean) < 1e-12);
      CHECK(std::abs(perm.variance - base.variance) < 1e-12);
      CHECK(base.variance > 0.0);
    }
  }
  SUBCASE("a vanishing resolution leaves predictions unchanged") {
    const auto data = oracle::random_dataset(rng, 6, 2, 3);
    auto m = oracle::random_model(rng, data, 3);
    auto reduced = m;
    reduced.kernels.resize(1);
    reduced.resolution_names.resize(1);
    reduced.vstate.resolutions.resize(1);
    auto extra = m;
    extra.kernels[1].scale = 1e-12;
    auto& ind = extra.vstate.resolutions[1];
    ind.eta.setZero();
    ind.chol_sigma = jittered(extra.kernels[1], ind.Z).llt().matrixL();
    const auto a = predict(reduced, data.select_resolutions(std::vector<Index>{0}));
    const auto b = predict(extra, data);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::abs(a[i].mean - b[i].mean) < 1e-5);
      CHECK(std::abs(a[i].variance - b[i].variance) < 1e-5);
    }
  }
}

TEST_CASE("inducing initialization") {
  const auto bagset = [](std::vector<std::vector<double>> regions) {
    std::vector<Bag> bags;
    for (std::size_t r = 0; r < regions.size(); ++r) {
      Bag b;
      b.region_id = "r" + std::to_string(r);
      b.points.resize(static_cast<Index>(regions[r].size()), 1);
      for (std::size_t t = 0; t < regions[r].size(); ++t) b.points(static_cast<Index>(t), 0) = regions[r][t];
      b.weights = Eigen::VectorXd::Constant(b.points.rows(), 1.0 / static_cast<double>(b.points.rows()));
      bags.push_back(b);
    }
    return BagSet::from_bags(bags);
  };
  CHECK(init_inducing(bagset({{0.0, 0.0, 10.0, 10.0}}), 1, 0)(0, 0) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(init_inducing(bagset({{3.25}}), 1, 0)(0, 0) == 3.25);
  const auto Z = init_inducing(bagset({{1.0, 2.0}, {5.0}, {7.0, 8.0, 9.0}}), 1, 0);
  CHECK(Z.rows() == 3);
  CHECK(Z(2, 0) == doctest::Approx(8.0).epsilon(1e-14));

  const auto padded = init_inducing(bagset({{1.0}, {4.0, 6.0}}), 3, 1, 2.0);
  CHECK(padded.rows() == 6);
  for (Index r = 0; r < 3; ++r) CHECK(std::abs(padded(r, 0) - 1.0) < 1e-4);
  CHECK(init_inducing(bagset({{1.0}, {4.0, 6.0}}), 3, 1, 2.0) == padded);
  CHECK_THROWS_AS(init_inducing(bagset({{1.0}}), 0, 0), InputError);
}

TEST_CASE("initial model is the prior with median-heuristic hyperparameters") {
  std::mt19937_64 rng(31);
  const auto data = oracle::random_dataset(rng, 9, 2, 4);
  const auto m = initialize_model(data);
  const Eigen::VectorXd y = data.labels();
  const double vy = (y.array() - y.mean()).square().sum() / 8.0;
  CHECK(m.noise_var == doctest::Approx(0.1 * vy).epsilon(1e-12));
  for (Index l = 0; l < 2; ++l) {
    CHECK(m.kernels[static_cast<std::size_t>(l)].scale == doctest::Approx(vy).epsilon(1e-12));
    CHECK(m.vstate.resolutions[static_cast<std::size_t>(l)].Z.rows() == 9);
  }
  CHECK(std::abs(kl_term(m)) < 1e-9);
  CHECK_NOTHROW(m.validate());
}
