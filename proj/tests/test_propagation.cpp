#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gpmpc/errors.hpp"
#include "gpmpc/propagation.hpp"
#include "support/test_support.hpp"

using namespace gpmpc;
using gpmpc::testing::random_psd;
using gpmpc::testing::random_vector;

namespace {

GpModel fit_on(const std::vector<double>& xs, const std::vector<double>& ys, double sf,
               double l, double sn) {
  GpDataset data;
  data.inputs.resize(static_cast<int>(xs.size()), 1);
  data.targets.resize(static_cast<int>(ys.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    data.inputs(static_cast<int>(i), 0) = xs[i];
    data.targets(static_cast<int>(i)) = ys[i];
  }
  return gp_fit(data, GpHyperparams::isotropic(sf, l, sn, 1));
}

/// Scalar hybrid system x+ = f(x) + d(x) + w with a GP on the state.
HybridModel scalar_model(std::function<double(double, double)> f,
                         std::function<double(double, double)> dfdx,
                         std::function<double(double, double)> dfdu,
                         const DisturbanceGp& gp, double noise_var) {
  HybridModel m;
  m.state_dim = 1;
  m.input_dim = 1;
  m.dynamics = [f](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return Eigen::VectorXd::Constant(1, f(x(0), u(0)));
  };
  m.jac_state = [dfdx](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return Eigen::MatrixXd::Constant(1, 1, dfdx(x(0), u(0)));
  };
  m.jac_input = [dfdu](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return Eigen::MatrixXd::Constant(1, 1, dfdu(x(0), u(0)));
  };
  m.gp_placement = Eigen::MatrixXd::Constant(1, 1, 1.0);
  m.gp_dims = {gp};
  m.process_noise_var = Eigen::VectorXd::Constant(1, noise_var);
  m.gp_input_map = {0};
  return m;
}

HybridModel no_gp_model(int n_x, int n_u,
                        std::function<Eigen::VectorXd(const Eigen::VectorXd&,
                                                      const Eigen::VectorXd&)> f) {
  HybridModel m;
  m.state_dim = n_x;
  m.input_dim = n_u;
  m.dynamics = std::move(f);
  m.gp_placement = Eigen::MatrixXd::Zero(n_x, 0);
  m.process_noise_var = Eigen::VectorXd::Zero(0);
  return m;
}

}  // namespace

TEST_CASE("mean_step reduces to the nominal step without GP influence") {
  auto m = no_gp_model(2, 1, [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd next(2);
    next << x(0) + 0.1 * u(0), 0.9 * x(1);
    return next;
  });
  GaussianBelief belief = GaussianBelief::certain(Eigen::Vector2d(1.0, 2.0));
  const Eigen::VectorXd next = mean_step(m, belief, Eigen::VectorXd::Constant(1, 0.5));
  CHECK(next(0) == doctest::Approx(1.05));
  CHECK(next(1) == doctest::Approx(1.8));
}

TEST_CASE("mean_step adds the interpolated GP correction") {
  // Single noiseless training point at the query: correction is exact there.
  const GpModel gp = fit_on({0.7}, {0.25}, 1.0, 0.6, 0.0);
  auto m = scalar_model([](double x, double) { return x; },
                        [](double, double) { return 1.0; },
                        [](double, double) { return 0.0; }, gp, 0.0);
  GaussianBelief belief = GaussianBelief::certain(Eigen::VectorXd::Constant(1, 0.7));
  const Eigen::VectorXd next = mean_step(m, belief, Eigen::VectorXd::Zero(1));
  CHECK(next(0) == doctest::Approx(0.95).epsilon(1e-9));
}

TEST_CASE("mean_step matches the assembled formula on a linear system") {
  std::mt19937_64 rng(3);
  const GpModel gp = fit_on({-1.0, 0.0, 0.8, 1.5}, {0.3, -0.1, 0.2, 0.4}, 1.0, 0.7, 0.05);
  auto m = scalar_model([](double x, double u) { return 0.8 * x + 0.3 * u; },
                        [](double, double) { return 0.8; },
                        [](double, double) { return 0.3; }, gp, 0.0);
  const double mu = 0.4, u = -0.2;
  GaussianBelief belief = GaussianBelief::certain(Eigen::VectorXd::Constant(1, mu));
  const Eigen::VectorXd next = mean_step(m, belief, Eigen::VectorXd::Constant(1, u));
  const double expected = 0.8 * mu + 0.3 * u +
                          gp_predict(gp, Eigen::VectorXd::Constant(1, mu)).mean;
  CHECK(next(0) == doctest::Approx(expected).epsilon(1e-12));
  (void)rng;
}

TEST_CASE("cov steps coincide when the GP gradient vanishes") {
  // One training point, belief centered on it: analytic RBF gradient is 0.
  const GpModel gp = fit_on({0.3}, {0.5}, 1.0, 0.8, 0.0);
  auto m = scalar_model([](double x, double u) { return x + 0.1 * u; },
                        [](double, double) { return 1.0; },
                        [](double, double) { return 0.1; }, gp, 0.01);
  GaussianBelief belief{Eigen::VectorXd::Constant(1, 0.3),
                        Eigen::MatrixXd::Constant(1, 1, 0.04)};
  const ControlMoments control = ControlMoments::deterministic(Eigen::VectorXd::Zero(1), 1);
  const Eigen::MatrixXd taylor = cov_step_taylor(m, belief, control);
  const Eigen::MatrixXd meaneq = cov_step_meaneq(m, belief, control);
  CHECK((taylor - meaneq).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("cov step with a deterministic input reduces to placed GP variance") {
  const GpModel gp = fit_on({-0.5, 0.5}, {0.2, -0.2}, 1.0, 0.7, 0.1);
  auto m = scalar_model([](double x, double u) { return 0.9 * x + u; },
                        [](double, double) { return 0.9; },
                        [](double, double) { return 1.0; }, gp, 0.02);
  GaussianBelief belief = GaussianBelief::certain(Eigen::VectorXd::Constant(1, 0.25));
  const ControlMoments control = ControlMoments::deterministic(Eigen::VectorXd::Zero(1), 1);
  const double gp_var = gp_predict(gp, Eigen::VectorXd::Constant(1, 0.25)).variance;
  const Eigen::MatrixXd taylor = cov_step_taylor(m, belief, control);
  const Eigen::MatrixXd meaneq = cov_step_meaneq(m, belief, control);
  CHECK(taylor(0, 0) == doctest::Approx(gp_var + 0.02).epsilon(1e-10));
  CHECK((taylor - meaneq).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("Taylor covariance matches Monte Carlo on a smooth scalar system") {
  const GpModel gp = fit_on({-1.0, -0.4, 0.2, 0.8, 1.4}, {0.15, 0.05, -0.1, 0.1, 0.3},
                            0.5, 0.9, 0.02);
  const double noise_var = 1e-4;
  auto f = [](double x, double u) { return x + 0.1 * std::sin(x) + 0.2 * u; };
  auto m = scalar_model(f, [](double x, double) { return 1.0 + 0.1 * std::cos(x); },
                        [](double, double) { return 0.2; }, gp, noise_var);
  const double mu = 0.55, input = 0.3;
  const double var_in = 1e-4;  // input std 0.01 = 0.011 * l, comfortably small
  GaussianBelief belief{Eigen::VectorXd::Constant(1, mu),
                        Eigen::MatrixXd::Constant(1, 1, var_in)};
  const ControlMoments control =
      ControlMoments::deterministic(Eigen::VectorXd::Constant(1, input), 1);

  const Eigen::VectorXd mean_pred = mean_step(m, belief, control.mean);
  const Eigen::MatrixXd cov_pred = cov_step_taylor(m, belief, control);

  // Monte Carlo ground truth through the full stochastic step.
  MvnDist in;
  in.mean = Eigen::VectorXd::Constant(1, mu);
  in.cov = Eigen::MatrixXd::Constant(1, 1, var_in);
  const int samples = 100000;
  const Eigen::MatrixXd xs = mvn_sample(in, samples, 2024);
  MvnDist unit;
  unit.mean = Eigen::VectorXd::Zero(1);
  unit.cov = Eigen::MatrixXd::Identity(1, 1);
  const Eigen::MatrixXd zs = mvn_sample(unit, samples, 77);
  double acc = 0.0, acc2 = 0.0;
  for (int s = 0; s < samples; ++s) {
    const double x = xs(s, 0);
    const auto p = gp_predict(gp, Eigen::VectorXd::Constant(1, x));
    const double draw = f(x, input) + p.mean +
                        std::sqrt(p.variance + noise_var) * zs(s, 0);
    acc += draw;
    acc2 += draw * draw;
  }
  const double mc_mean = acc / samples;
  const double mc_var = acc2 / samples - mc_mean * mc_mean;
  CHECK(std::abs(mean_pred(0) - mc_mean) <= 0.05 * std::abs(mc_mean));
  CHECK(std::abs(cov_pred(0, 0) - mc_var) <= 0.05 * mc_var);
}

TEST_CASE("mean-equivalent covariance drops the gradient terms") {
  const GpModel gp = fit_on({-1.0, 0.0, 1.0}, {-0.4, 0.1, 0.5}, 1.0, 0.6, 0.05);
  auto m = scalar_model([](double x, double u) { return 0.7 * x + 0.1 * u; },
                        [](double, double) { return 0.7; },
                        [](double, double) { return 0.1; }, gp, 0.01);
  GaussianBelief belief{Eigen::VectorXd::Constant(1, 0.2),
                        Eigen::MatrixXd::Constant(1, 1, 0.09)};
  const ControlMoments control = ControlMoments::deterministic(Eigen::VectorXd::Zero(1), 1);
  const Eigen::MatrixXd taylor = cov_step_taylor(m, belief, control);
  const Eigen::MatrixXd meaneq = cov_step_meaneq(m, belief, control);

  const double grad = gp_mean_gradient(gp, Eigen::VectorXd::Constant(1, 0.2))(0);
  const double gp_var = gp_predict(gp, Eigen::VectorXd::Constant(1, 0.2)).variance;
  // Hand assembly of both block forms.
  const double a = 0.7;
  const double expected_meaneq = a * 0.09 * a + gp_var + 0.01;
  const double expected_taylor =
      a * 0.09 * a + 2.0 * a * 0.09 * grad + (gp_var + grad * 0.09 * grad + 0.01);
  CHECK(meaneq(0, 0) == doctest::Approx(expected_meaneq).epsilon(1e-10));
  CHECK(taylor(0, 0) == doctest::Approx(expected_taylor).epsilon(1e-10));
}

TEST_CASE("prior-only GP gives the textbook linear propagation") {
  GpPrior prior{GpHyperparams::isotropic(0.4, 1.0, 0.0, 1), 0.0};
  auto m = scalar_model([](double x, double u) { return 0.8 * x + 0.2 * u; },
                        [](double, double) { return 0.8; },
                        [](double, double) { return 0.2; }, DisturbanceGp(prior), 0.03);
  GaussianBelief belief{Eigen::VectorXd::Constant(1, 1.0),
                        Eigen::MatrixXd::Constant(1, 1, 0.25)};
  const ControlMoments control = ControlMoments::deterministic(Eigen::VectorXd::Zero(1), 1);
  const Eigen::MatrixXd cov = cov_step_meaneq(m, belief, control);
  CHECK(cov(0, 0) == doctest::Approx(0.64 * 0.25 + 0.16 + 0.03).epsilon(1e-12));
}

TEST_CASE("cov_step_linear agrees with the general path on linear systems") {
  std::mt19937_64 rng(9);
  const GpModel gp = fit_on({-0.8, 0.1, 0.9}, {0.2, -0.3, 0.1}, 0.8, 0.8, 0.1);
  const double a = 0.85, b = 0.4;
  auto m = scalar_model([=](double x, double u) { return a * x + b * u; },
                        [=](double, double) { return a; },
                        [=](double, double) { return b; }, gp, 0.02);
  GaussianBelief belief{random_vector(1, rng), random_psd(1, rng)};
  ControlMoments control{random_vector(1, rng), random_psd(1, rng),
                         Eigen::MatrixXd::Zero(1, 1)};
  Eigen::MatrixXd amat = Eigen::MatrixXd::Constant(1, 1, a);
  Eigen::MatrixXd bmat = Eigen::MatrixXd::Constant(1, 1, b);

  const Eigen::MatrixXd general = cov_step_taylor(m, belief, control);
  const Eigen::MatrixXd linear =
      cov_step_linear(amat, bmat, m, belief, control, CovMethod::Taylor);
  CHECK((general - linear).cwiseAbs().maxCoeff() <= 1e-12);

  // Identity system with no GP influence keeps the covariance.
  auto id = no_gp_model(2, 1, [](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return x;
  });
  GaussianBelief b2{Eigen::Vector2d(0.0, 0.0), random_psd(2, rng)};
  const ControlMoments c2 = ControlMoments::deterministic(Eigen::VectorXd::Zero(1), 2);
  const Eigen::MatrixXd unchanged = cov_step_linear(
      Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Zero(2, 1), id, b2, c2,
      CovMethod::MeanEquivalent);
  CHECK((unchanged - b2.cov).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("linear mean-equivalent block formula by hand") {
  GpPrior prior{GpHyperparams::isotropic(0.3, 1.0, 0.0, 1), 0.0};
  auto m = scalar_model([](double x, double u) { return 1.1 * x - 0.2 * u; },
                        [](double, double) { return 1.1; },
                        [](double, double) { return -0.2; }, DisturbanceGp(prior), 0.05);
  GaussianBelief belief{Eigen::VectorXd::Constant(1, 0.1),
                        Eigen::MatrixXd::Constant(1, 1, 0.16)};
  ControlMoments control{Eigen::VectorXd::Constant(1, 0.2),
                         Eigen::MatrixXd::Constant(1, 1, 0.04),
                         Eigen::MatrixXd::Zero(1, 1)};
  const Eigen::MatrixXd cov = cov_step_linear(
      Eigen::MatrixXd::Constant(1, 1, 1.1), Eigen::MatrixXd::Constant(1, 1, -0.2), m,
      belief, control, CovMethod::MeanEquivalent);
  const double expected =
      1.1 * 0.16 * 1.1 + 0.2 * 0.04 * 0.2 + (0.09 + 0.05);
  CHECK(cov(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("belief_rollout composes the one-step operators") {
  // Identity dynamics, no GP: belief is constant.
  auto id = no_gp_model(1, 1, [](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return x;
  });
  GaussianBelief b0{Eigen::VectorXd::Constant(1, 0.5),
                    Eigen::MatrixXd::Constant(1, 1, 0.2)};
  std::vector<ControlMoments> controls(
      5, ControlMoments::deterministic(Eigen::VectorXd::Zero(1), 1));
  const auto constant = belief_rollout(id, b0, controls, 5, CovMethod::MeanEquivalent);
  CHECK(constant.size() == 6);
  CHECK(constant.back().mean(0) == doctest::Approx(0.5));
  // Finite-difference Jacobians leave rounding-level residue.
  CHECK(constant.back().cov(0, 0) == doctest::Approx(0.2).epsilon(1e-9));

  // Random-walk growth under a prior GP: variance telescopes.
  GpPrior prior{GpHyperparams::isotropic(0.5, 1.0, 0.0, 1), 0.0};
  auto walk = scalar_model([](double x, double) { return x; },
                           [](double, double) { return 1.0; },
                           [](double, double) { return 0.0; }, DisturbanceGp(prior), 0.1);
  GaussianBelief w0{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 0.3)};
  const auto grown = belief_rollout(walk, w0, controls, 5, CovMethod::MeanEquivalent);
  CHECK(grown.back().cov(0, 0) == doctest::Approx(0.3 + 5.0 * (0.25 + 0.1)).epsilon(1e-10));

  // Two Taylor steps equal a rollout of length two.
  const GpModel gp = fit_on({-0.6, 0.4, 1.2}, {0.1, -0.2, 0.2}, 0.6, 0.7, 0.05);
  auto nl = scalar_model([](double x, double u) { return x + 0.05 * x * x + 0.1 * u; },
                         [](double x, double) { return 1.0 + 0.1 * x; },
                         [](double, double) { return 0.1; }, gp, 0.01);
  GaussianBelief n0{Eigen::VectorXd::Constant(1, 0.2),
                    Eigen::MatrixXd::Constant(1, 1, 0.01)};
  const auto rolled = belief_rollout(nl, n0, controls, 2, CovMethod::Taylor);
  GaussianBelief manual = n0;
  for (int i = 0; i < 2; ++i) {
    GaussianBelief next;
    next.mean = mean_step(nl, manual, controls[i].mean);
    next.cov = cov_step_taylor(nl, manual, controls[i]);
    manual = next;
  }
  CHECK((rolled.back().mean - manual.mean).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((rolled.back().cov - manual.cov).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("rollout errors carry the step index") {
  auto bad = no_gp_model(1, 1, [](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return x;
  });
  GaussianBelief b0{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Zero(1, 1)};
  std::vector<ControlMoments> controls(
      1, ControlMoments::deterministic(Eigen::VectorXd::Zero(1), 1));
  CHECK_THROWS_AS(belief_rollout(bad, b0, controls, 3, CovMethod::Taylor),
                  std::invalid_argument);
}

TEST_CASE("Taylor propagation approaches exact linear-Gaussian propagation") {
  // GP trained densely on a noiseless linear map stands in for a known
  // linear term; propagation should then match the exact formula.
  std::vector<double> xs, ys;
  for (int i = 0; i <= 40; ++i) {
    const double x = -2.0 + 4.0 * i / 40.0;
    xs.push_back(x);
    ys.push_back(0.5 * x);
  }
  const GpModel gp = fit_on(xs, ys, 1.5, 1.0, 1e-4);
  auto m = scalar_model([](double x, double u) { return 0.9 * x + 0.1 * u; },
                        [](double, double) { return 0.9; },
                        [](double, double) { return 0.1; }, gp, 0.0);
  GaussianBelief belief{Eigen::VectorXd::Constant(1, 0.3),
                        Eigen::MatrixXd::Constant(1, 1, 0.04)};
  const ControlMoments control = ControlMoments::deterministic(Eigen::VectorXd::Zero(1), 1);
  const Eigen::MatrixXd cov = cov_step_taylor(m, belief, control);
  // Exact: x+ = (0.9 + 0.5) x (+ small GP posterior variance).
  const double exact = 1.4 * 0.04 * 1.4;
  CHECK(std::abs(cov(0, 0) - exact) <= 0.02 * exact);
}

TEST_CASE("first-order GP moment approximations validated by Monte Carlo") {
  const GpModel gp = fit_on({-1.2, -0.5, 0.1, 0.7, 1.3}, {0.3, 0.1, -0.05, 0.2, 0.45},
                            0.5, 1.0, 0.03);
  const double mu = 0.4;
  const double std_in = 0.08;  // <= 0.1 * l
  MvnDist in;
  in.mean = Eigen::VectorXd::Constant(1, mu);
  in.cov = Eigen::MatrixXd::Constant(1, 1, std_in * std_in);
  const Eigen::MatrixXd xs = mvn_sample(in, 100000, 31);

  double mean_acc = 0.0, mean_sq = 0.0, var_acc = 0.0;
  for (int s = 0; s < xs.rows(); ++s) {
    const auto p = gp_predict(gp, xs.row(s).transpose());
    mean_acc += p.mean;
    mean_sq += p.mean * p.mean;
    var_acc += p.variance;
  }
  const int n = static_cast<int>(xs.rows());
  const double mc_mean = mean_acc / n;
  const double mc_var_of_mean = mean_sq / n - mc_mean * mc_mean;
  const double mc_expected_var = var_acc / n;

  // Zeroth-order mean approximation.
  const auto at_mean = gp_predict(gp, Eigen::VectorXd::Constant(1, mu));
  CHECK(std::abs(mc_mean - at_mean.mean) <= 0.05 * 0.5);

  // First-order closed forms for both variance pieces.
  const double grad = gp_mean_gradient(gp, Eigen::VectorXd::Constant(1, mu))(0);
  const double first_order_var_of_mean = grad * std_in * std_in * grad;
  CHECK(std::abs(mc_var_of_mean - first_order_var_of_mean) <=
        0.05 * std::max(mc_var_of_mean, 1e-6));
  CHECK(std::abs(mc_expected_var - at_mean.variance) <=
        0.05 * std::max(mc_expected_var, 1e-6));
}

TEST_CASE("covariance outputs are symmetric and PSD") {
  std::mt19937_64 rng(55);
  const GpModel gp = fit_on({-1.0, 0.0, 1.0}, {0.1, -0.1, 0.2}, 0.7, 0.8, 0.05);
  auto m = scalar_model([](double x, double u) { return 0.95 * x + 0.2 * u; },
                        [](double, double) { return 0.95; },
                        [](double, double) { return 0.2; }, gp, 0.01);
  for (int trial = 0; trial < 20; ++trial) {
    GaussianBelief belief{random_vector(1, rng), random_psd(1, rng)};
    ControlMoments control{random_vector(1, rng), random_psd(1, rng),
                           Eigen::MatrixXd::Zero(1, 1)};
    for (auto method : {CovMethod::Taylor, CovMethod::MeanEquivalent}) {
      const Eigen::MatrixXd cov =
          method == CovMethod::Taylor ? cov_step_taylor(m, belief, control)
                                      : cov_step_meaneq(m, belief, control);
      CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(cov(0, 0) >= 0.0);
    }
  }
}
