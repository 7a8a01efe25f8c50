#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gpmpc/errors.hpp"
#include "gpmpc/gp.hpp"
#include "gpmpc/mvn.hpp"
#include "support/test_support.hpp"

using namespace gpmpc;
using gpmpc::testing::fd_gradient;
using gpmpc::testing::random_dataset;
using gpmpc::testing::random_psd;
using gpmpc::testing::random_vector;

namespace {

Eigen::VectorXd vec1(double x) { return Eigen::VectorXd::Constant(1, x); }

GpHyperparams iso(double sf, double l, double sn, int dim = 1) {
  return GpHyperparams::isotropic(sf, l, sn, dim);
}

}  // namespace

TEST_CASE("kernel_rbf basics") {
  const auto h = iso(2.0, 1.3, 0.0, 2);
  Eigen::VectorXd x(2);
  x << 0.4, -0.7;
  CHECK(kernel_rbf(x, x, h) == doctest::Approx(4.0).epsilon(1e-14));

  const auto h1 = iso(1.0, 1.0, 0.0);
  const double dist = std::sqrt(2.0 * std::log(2.0));
  CHECK(kernel_rbf(vec1(0.0), vec1(dist), h1) == doctest::Approx(0.5).epsilon(1e-12));

  // Spot values at the optimized 1-D hyperparameters from the tutorial demo.
  const auto h2 = iso(0.0067, 0.0967, 0.0);
  const double expected = 0.0067 * 0.0067 * std::exp(-0.5);
  CHECK(kernel_rbf(vec1(0.0), vec1(0.0967), h2) == doctest::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(kernel_rbf(vec1(0.0), x, h), std::invalid_argument);
}

TEST_CASE("kernel_matrix matches the per-entry definition") {
  const auto h = iso(1.5, 0.8, 0.0, 2);
  Eigen::MatrixXd one(1, 2);
  one << 0.3, -0.2;
  const Eigen::MatrixXd k1 = kernel_matrix(one, one, h);
  CHECK(k1(0, 0) == doctest::Approx(2.25).epsilon(1e-14));

  Eigen::MatrixXd dup(2, 2);
  dup << 1.0, 2.0, 1.0, 2.0;
  const Eigen::MatrixXd k2 = kernel_matrix(dup, dup, h);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) CHECK(k2(i, j) == doctest::Approx(2.25).epsilon(1e-14));
  }

  std::mt19937_64 rng(101);
  const Eigen::MatrixXd a = gpmpc::testing::random_matrix(4, 2, rng);
  const Eigen::MatrixXd b = gpmpc::testing::random_matrix(5, 2, rng);
  const Eigen::MatrixXd k = kernel_matrix(a, b, h);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 5; ++j) {
      CHECK(k(i, j) ==
            doctest::Approx(kernel_rbf(a.row(i), b.row(j), h)).epsilon(1e-12));
    }
  }
}

TEST_CASE("kernel_matrix is symmetric PSD on random inputs") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 7);
    const int d = 1 + static_cast<int>(rng() % 3);
    const auto h = iso(0.5 + 2.0 * (trial % 3), 0.3 + 0.2 * (trial % 5), 0.0, d);
    const Eigen::MatrixXd x = gpmpc::testing::random_matrix(n, d, rng, 2.0);
    const Eigen::MatrixXd k = kernel_matrix(x, x, h);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * k.cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k, Eigen::EigenvaluesOnly);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10 * k.norm());
  }
}

TEST_CASE("gp_fit basics and failure modes") {
  GpDataset one;
  one.inputs = Eigen::MatrixXd::Zero(1, 1);
  one.targets = vec1(1.0);
  const GpModel m = gp_fit(one, iso(1.0, 1.0, 0.0));
  CHECK(m.alpha(0) == doctest::Approx(1.0).epsilon(1e-12));

  // Identical inputs with conflicting targets: singular beyond repair.
  GpDataset dup;
  dup.inputs = Eigen::MatrixXd::Zero(2, 1);
  dup.targets.resize(2);
  dup.targets << 0.0, 1.0;
  CHECK_THROWS_AS(gp_fit(dup, iso(1.0, 1.0, 0.0)), FitError);

  std::mt19937_64 rng(7);
  const GpDataset data = random_dataset(3, 2, rng);
  const auto h = iso(1.2, 0.9, 0.3, 2);
  const GpModel fit = gp_fit(data, h);
  const Eigen::MatrixXd ky =
      kernel_matrix(data.inputs, data.inputs, h) + 0.09 * Eigen::MatrixXd::Identity(3, 3);
  const Eigen::VectorXd alpha_oracle = ky.fullPivLu().inverse() * data.targets;
  CHECK((fit.alpha - alpha_oracle).norm() <= 1e-8 * alpha_oracle.norm());
}

TEST_CASE("gp model invariants hold after fitting") {
  std::mt19937_64 rng(11);
  const GpDataset data = random_dataset(6, 2, rng);
  const auto h = iso(0.8, 1.1, 0.2, 2);
  const GpModel m = gp_fit(data, h);
  const Eigen::MatrixXd ky =
      kernel_matrix(data.inputs, data.inputs, h) + 0.04 * Eigen::MatrixXd::Identity(6, 6);
  const Eigen::MatrixXd rebuilt = m.chol * m.chol.transpose();
  CHECK((rebuilt - ky).norm() <= 1e-10 * ky.norm());
  CHECK((ky * m.alpha - data.targets).norm() <= 1e-8 * data.targets.norm());
}

TEST_CASE("gp_predict interpolation, prior recovery, and conditioning oracle") {
  GpDataset one;
  one.inputs = Eigen::MatrixXd::Constant(1, 1, 0.7);
  one.targets = vec1(-2.5);
  const GpModel m = gp_fit(one, iso(1.0, 0.5, 0.0));
  const GpPrediction at = gp_predict(m, vec1(0.7));
  CHECK(at.mean == doctest::Approx(-2.5).epsilon(1e-10));
  CHECK(at.variance <= 1e-12);

  const GpPrediction far = gp_predict(m, vec1(0.7 + 20.0 * 0.5));
  CHECK(std::abs(far.mean) <= 1e-6);
  CHECK(far.variance == doctest::Approx(1.0).epsilon(1e-6));

  // Conditioning the joint over (noisy observations, latent query).
  std::mt19937_64 rng(13);
  const GpDataset data = random_dataset(3, 1, rng);
  const auto h = iso(1.1, 0.8, 0.25);
  const GpModel fit = gp_fit(data, h);
  const Eigen::VectorXd query = vec1(0.4);
  Eigen::MatrixXd all(4, 1);
  all << data.inputs, query.transpose();
  MvnDist joint;
  joint.mean = Eigen::VectorXd::Zero(4);
  joint.cov = kernel_matrix(all, all, h);
  for (int i = 0; i < 3; ++i) joint.cov(i, i) += 0.25 * 0.25;
  const MvnDist cond = mvn_condition(joint, {0, 1, 2}, data.targets);
  const GpPrediction pred = gp_predict(fit, query);
  CHECK(pred.mean == doctest::Approx(cond.mean(0)).epsilon(1e-8));
  CHECK(pred.variance == doctest::Approx(cond.cov(0, 0)).epsilon(1e-8));
}

TEST_CASE("gp_predict variance ignores the targets") {
  std::mt19937_64 rng(17);
  const GpDataset data = random_dataset(5, 2, rng);
  GpDataset doubled = data;
  doubled.targets *= 2.0;
  const auto h = iso(1.0, 0.7, 0.1, 2);
  const GpModel a = gp_fit(data, h);
  const GpModel b = gp_fit(doubled, h);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd q = random_vector(2, rng);
    const GpPrediction pa = gp_predict(a, q);
    const GpPrediction pb = gp_predict(b, q);
    CHECK(pa.variance == doctest::Approx(pb.variance).epsilon(1e-12));
    CHECK(pa.variance <= 1.0 + 1e-10);
  }
}

TEST_CASE("adding a training point never increases posterior variance") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    const GpDataset data = random_dataset(4, 1, rng);
    GpDataset bigger;
    bigger.inputs.resize(5, 1);
    bigger.inputs.topRows(4) = data.inputs;
    bigger.inputs.row(4) = random_vector(1, rng).transpose();
    bigger.targets.resize(5);
    bigger.targets.head(4) = data.targets;
    bigger.targets(4) = random_vector(1, rng)(0);
    const auto h = iso(1.0, 0.9, 0.2);
    const GpModel small = gp_fit(data, h);
    const GpModel large = gp_fit(bigger, h);
    const Eigen::VectorXd q = random_vector(1, rng, 1.5);
    CHECK(gp_predict(large, q).variance <= gp_predict(small, q).variance + 1e-10);
  }
}

TEST_CASE("gp_mean_gradient matches finite differences") {
  // Symmetric pair: gradient vanishes at the midpoint.
  GpDataset pair;
  pair.inputs.resize(2, 1);
  pair.inputs << -1.0, 1.0;
  pair.targets.resize(2);
  pair.targets << 3.0, 3.0;
  const GpModel sym = gp_fit(pair, iso(1.0, 1.0, 0.0));
  CHECK(std::abs(gp_mean_gradient(sym, vec1(0.0))(0)) <= 1e-12);

  GpDataset one;
  one.inputs = Eigen::MatrixXd::Constant(1, 1, 0.3);
  one.targets = vec1(2.0);
  const GpModel single = gp_fit(one, iso(1.0, 0.5, 0.0));
  CHECK(std::abs(gp_mean_gradient(single, vec1(0.3))(0)) <= 1e-12);

  std::mt19937_64 rng(23);
  const GpDataset data = random_dataset(6, 3, rng);
  const auto h = iso(1.2, 0.8, 0.15, 3);
  const GpModel fit = gp_fit(data, h);
  const Eigen::VectorXd q = random_vector(3, rng);
  const Eigen::VectorXd analytic = gp_mean_gradient(fit, q);
  const Eigen::VectorXd numeric = fd_gradient(
      [&](const Eigen::VectorXd& x) { return gp_predict(fit, x).mean; }, q, 1e-5 * 0.8);
  CHECK((analytic - numeric).norm() <= 1e-4 * std::max(1.0, numeric.norm()));
}

TEST_CASE("log marginal likelihood value and gradient") {
  GpDataset one;
  one.inputs = Eigen::MatrixXd::Zero(1, 1);
  one.targets = vec1(0.0);
  const LogMarginal at_zero = log_marginal_likelihood(one, iso(1.0, 1.0, 0.0));
  CHECK(at_zero.value ==
        doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));

  std::mt19937_64 rng(29);
  GpDataset data = random_dataset(5, 2, rng);
  const auto h = iso(0.9, 1.2, 0.3, 2);
  const LogMarginal base = log_marginal_likelihood(data, h);

  // Permutation invariance.
  GpDataset shuffled;
  const std::vector<int> perm = {3, 1, 4, 0, 2};
  shuffled.inputs.resize(5, 2);
  shuffled.targets.resize(5);
  for (int i = 0; i < 5; ++i) {
    shuffled.inputs.row(i) = data.inputs.row(perm[i]);
    shuffled.targets(i) = data.targets(perm[i]);
  }
  CHECK(log_marginal_likelihood(shuffled, h).value ==
        doctest::Approx(base.value).epsilon(1e-12));

  // Gradient in log-parameter space vs finite differences.
  const auto value_at = [&](const Eigen::VectorXd& theta) {
    GpHyperparams hh;
    hh.signal_std = std::exp(theta(0));
    hh.length_scales = theta.segment(1, 2).array().exp();
    hh.noise_std = std::exp(theta(3));
    return log_marginal_likelihood(data, hh).value;
  };
  Eigen::VectorXd theta(4);
  theta << std::log(0.9), std::log(1.2), std::log(1.2), std::log(0.3);
  const Eigen::VectorXd numeric = fd_gradient(value_at, theta, 1e-6);
  CHECK((base.grad_log - numeric).norm() <= 1e-4 * std::max(1.0, numeric.norm()));
}

TEST_CASE("optimize_hyperparams improves the objective and recovers scales") {
  // Data drawn from a known GP.
  std::mt19937_64 seeder(31);
  const double true_l = 0.6;
  GpDataset data;
  data.inputs.resize(40, 1);
  for (int i = 0; i < 40; ++i) data.inputs(i, 0) = -2.0 + 4.0 * i / 39.0;
  MvnDist prior;
  prior.mean = Eigen::VectorXd::Zero(40);
  prior.cov = kernel_matrix(data.inputs, data.inputs, iso(1.0, true_l, 0.0)) +
              1e-6 * Eigen::MatrixXd::Identity(40, 40);
  data.targets = mvn_sample(prior, 1, 777).row(0).transpose();
  for (int i = 0; i < 40; ++i) data.targets(i) += 0.05 * 0.0;  // noiseless draw

  const auto init = iso(0.5, 2.0, 0.05);
  const GpHyperparams tuned = optimize_hyperparams(data, init, 60);
  CHECK(log_marginal_likelihood(data, tuned).value >=
        log_marginal_likelihood(data, init).value - 1e-9);
  CHECK(tuned.length_scales(0) >= true_l / 2.0);
  CHECK(tuned.length_scales(0) <= true_l * 2.0);

  // Grid-search oracle over (signal, length): the optimizer should do at
  // least as well as the best grid point.
  double best_grid = -std::numeric_limits<double>::infinity();
  for (double sf : {0.5, 0.8, 1.0, 1.3}) {
    for (double l : {0.3, 0.45, 0.6, 0.9, 1.4, 2.0}) {
      best_grid =
          std::max(best_grid, log_marginal_likelihood(data, iso(sf, l, 0.05)).value);
    }
  }
  CHECK(log_marginal_likelihood(data, tuned).value >= best_grid - 0.5);

  // Starting at the grid optimum must not regress.
  double grid_sf = 1.0, grid_l = 0.6;
  double grid_best = -std::numeric_limits<double>::infinity();
  for (double sf : {0.5, 0.8, 1.0, 1.3}) {
    for (double l : {0.3, 0.45, 0.6, 0.9, 1.4, 2.0}) {
      const double v = log_marginal_likelihood(data, iso(sf, l, 0.05)).value;
      if (v > grid_best) {
        grid_best = v;
        grid_sf = sf;
        grid_l = l;
      }
    }
  }
  const GpHyperparams from_grid =
      optimize_hyperparams(data, iso(grid_sf, grid_l, 0.05), 40);
  CHECK(log_marginal_likelihood(data, from_grid).value >= grid_best - 1e-9);

  // Noisy sine: objective must not decrease from the init.
  std::mt19937_64 rng(37);
  GpDataset sine;
  sine.inputs.resize(30, 1);
  sine.targets.resize(30);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (int i = 0; i < 30; ++i) {
    sine.inputs(i, 0) = 6.0 * i / 29.0;
    sine.targets(i) = std::sin(sine.inputs(i, 0)) + noise(rng);
  }
  const auto sine_init = iso(0.7, 1.0, 0.2);
  const GpHyperparams sine_opt = optimize_hyperparams(sine, sine_init, 40);
  CHECK(log_marginal_likelihood(sine, sine_opt).value >=
        log_marginal_likelihood(sine, sine_init).value - 1e-9);
}

TEST_CASE("mvn_condition block formula") {
  // Zero cross-covariance: conditioning is a no-op on the rest.
  MvnDist ind;
  ind.mean = Eigen::VectorXd::Zero(3);
  ind.cov = Eigen::Vector3d(1.0, 2.0, 3.0).asDiagonal();
  const MvnDist c1 = mvn_condition(ind, {0}, vec1(5.0));
  CHECK(c1.mean.isZero(1e-14));
  CHECK(c1.cov(0, 0) == doctest::Approx(2.0));
  CHECK(c1.cov(1, 1) == doctest::Approx(3.0));

  // Fully correlated pair: observing one pins the other.
  MvnDist corr;
  corr.mean = Eigen::VectorXd::Zero(2);
  corr.cov.resize(2, 2);
  corr.cov << 1.0, 1.0, 1.0, 1.0;
  const MvnDist c2 = mvn_condition(corr, {0}, vec1(0.3));
  CHECK(c2.mean(0) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(std::abs(c2.cov(0, 0)) <= 1e-10);

  std::mt19937_64 rng(41);
  MvnDist joint;
  joint.mean = random_vector(4, rng);
  joint.cov = random_psd(4, rng);
  Eigen::VectorXd obs(2);
  obs << 0.2, -0.4;
  const MvnDist got = mvn_condition(joint, {1, 3}, obs);
  // Direct block-inverse evaluation.
  Eigen::MatrixXd sigma_oo(2, 2), sigma_ro(2, 2), sigma_rr(2, 2);
  const std::vector<int> o = {1, 3}, r = {0, 2};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      sigma_oo(i, j) = joint.cov(o[i], o[j]);
      sigma_ro(i, j) = joint.cov(r[i], o[j]);
      sigma_rr(i, j) = joint.cov(r[i], r[j]);
    }
  }
  Eigen::VectorXd mean_o(2), mean_r(2);
  mean_o << joint.mean(1), joint.mean(3);
  mean_r << joint.mean(0), joint.mean(2);
  const Eigen::MatrixXd oo_inv = sigma_oo.inverse();
  const Eigen::VectorXd mean_exp = mean_r + sigma_ro * oo_inv * (obs - mean_o);
  const Eigen::MatrixXd cov_exp = sigma_rr - sigma_ro * oo_inv * sigma_ro.transpose();
  CHECK((got.mean - mean_exp).norm() <= 1e-10);
  CHECK((got.cov - cov_exp).norm() <= 1e-10);

  CHECK_THROWS(mvn_condition(joint, {1, 1}, obs));
}

TEST_CASE("mvn_sample moments and determinism") {
  MvnDist point;
  point.mean = Eigen::Vector2d(1.0, -2.0);
  point.cov = Eigen::Matrix2d::Zero();
  const Eigen::MatrixXd samples = mvn_sample(point, 10, 5);
  for (int i = 0; i < 10; ++i) {
    CHECK((samples.row(i).transpose() - point.mean).norm() <= 1e-14);
  }

  MvnDist standard;
  standard.mean = Eigen::VectorXd::Zero(3);
  standard.cov = Eigen::MatrixXd::Identity(3, 3);
  const Eigen::MatrixXd big = mvn_sample(standard, 100000, 99);
  const Eigen::VectorXd mean = big.colwise().mean();
  Eigen::MatrixXd centered = big.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / (big.rows() - 1);
  CHECK((cov - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <= 0.05);

  const Eigen::MatrixXd again = mvn_sample(standard, 100, 1234);
  const Eigen::MatrixXd again2 = mvn_sample(standard, 100, 1234);
  CHECK((again - again2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gp_predict agrees with mvn_condition on random instances") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 8);
    const int d = 1 + static_cast<int>(rng() % 3);
    const GpDataset data = random_dataset(n, d, rng);
    const double sn = 0.05 + 0.3 * std::abs(random_vector(1, rng)(0));
    const auto h = iso(0.7 + 0.5 * (trial % 3), 0.6 + 0.2 * (trial % 4), sn, d);
    const GpModel fit = gp_fit(data, h);
    const Eigen::VectorXd q = random_vector(d, rng);
    Eigen::MatrixXd all(n + 1, d);
    all << data.inputs, q.transpose();
    MvnDist joint;
    joint.mean = Eigen::VectorXd::Zero(n + 1);
    joint.cov = kernel_matrix(all, all, h);
    for (int i = 0; i < n; ++i) joint.cov(i, i) += sn * sn;
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    const MvnDist cond = mvn_condition(joint, idx, data.targets);
    const GpPrediction pred = gp_predict(fit, q);
    CHECK(std::abs(pred.mean - cond.mean(0)) <= 1e-8);
    CHECK(std::abs(pred.variance - cond.cov(0, 0)) <= 1e-8);
  }
}
