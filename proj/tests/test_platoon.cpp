#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gpmpc/errors.hpp"
#include "gpmpc/platoon.hpp"
#include "support/test_support.hpp"

using namespace gpmpc;
using gpmpc::testing::enumerate_qp;
using gpmpc::testing::random_vector;

namespace {

PlatoonLimits default_limits(int horizon = 10) {
  PlatoonLimits limits;
  limits.horizon = horizon;
  limits.timestep = 0.1;
  return limits;
}

PlatoonState cruising_state(int n_av, double v, double gap, double hv_gap) {
  PlatoonState state;
  state.av_pos.resize(n_av);
  state.av_vel = Eigen::VectorXd::Constant(n_av, v);
  for (int i = 0; i < n_av; ++i) state.av_pos(i) = -gap * i;
  state.hv_pos = state.av_pos(n_av - 1) - hv_gap;
  state.hv_vel_hist.setConstant(v);
  state.lead_vel_hist.setConstant(v);
  return state;
}

GpModel residual_gp(double amplitude, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.01);
  GpDataset data;
  const int n = 60;
  data.inputs.resize(n, 2);
  data.targets.resize(n);
  for (int i = 0; i < n; ++i) {
    const double vh = 5.0 + 10.0 * (i % 12) / 11.0;
    const double vl = 5.0 + 10.0 * (i / 12) / 4.0;
    data.inputs(i, 0) = vh;
    data.inputs(i, 1) = vl;
    data.targets(i) = amplitude * std::sin(0.4 * (vl - vh)) + noise(rng);
  }
  return gp_fit(data, GpHyperparams::isotropic(amplitude + 0.05, 3.0, 0.02, 2));
}

}  // namespace

TEST_CASE("arx_predict is the signed lag sum") {
  ArxModel pure_follower;
  pure_follower.lead_coeffs = Eigen::Vector4d(1.0, 0.0, 0.0, 0.0);
  Eigen::Vector4d hv(3.0, 2.5, 2.0, 1.5);
  Eigen::Vector4d lead(4.0, 3.5, 3.0, 2.5);
  CHECK(arx_predict(pure_follower, hv, lead) == doctest::Approx(4.0));

  CHECK(arx_predict(ArxModel{}, hv, lead) == doctest::Approx(0.0));

  std::mt19937_64 rng(3);
  ArxModel random_model;
  random_model.hv_coeffs = random_vector(4, rng);
  random_model.lead_coeffs = random_vector(4, rng);
  const double direct = -random_model.hv_coeffs.dot(hv) + random_model.lead_coeffs.dot(lead);
  CHECK(arx_predict(random_model, hv, lead) == doctest::Approx(direct).epsilon(1e-14));
}

TEST_CASE("fit_arx recovers generating coefficients") {
  ArxModel truth;
  truth.hv_coeffs = Eigen::Vector4d(-0.5, -0.2, -0.1, -0.05);
  truth.lead_coeffs = Eigen::Vector4d(0.15, 0.05, 0.02, 0.01);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> tiny(0.0, 1e-6);
  const int n = 240;
  Eigen::VectorXd lead(n), hv(n);
  // Four incommensurate tones: enough excitation for eight coefficients.
  for (int k = 0; k < n; ++k) {
    lead(k) = 12.0 + 4.0 * std::sin(0.07 * k) + 1.5 * std::sin(0.23 * k + 1.0) +
              1.0 * std::sin(0.55 * k + 0.4) + 0.7 * std::sin(1.31 * k + 2.1);
  }
  for (int k = 0; k < 4; ++k) hv(k) = lead(k);
  for (int k = 4; k < n; ++k) {
    Eigen::Vector4d hv_hist, lead_hist;
    for (int lag = 1; lag <= 4; ++lag) {
      hv_hist(lag - 1) = hv(k - lag);
      lead_hist(lag - 1) = lead(k - lag);
    }
    hv(k) = arx_predict(truth, hv_hist, lead_hist) + tiny(rng);
  }
  const ArxModel fitted = fit_arx(hv, lead);
  CHECK((fitted.hv_coeffs - truth.hv_coeffs).cwiseAbs().maxCoeff() <= 1e-3);
  CHECK((fitted.lead_coeffs - truth.lead_coeffs).cwiseAbs().maxCoeff() <= 1e-3);

  // Constant-velocity data: rank deficient but consistent.
  const Eigen::VectorXd flat = Eigen::VectorXd::Constant(80, 9.0);
  const ArxModel constant = fit_arx(flat, flat);
  Eigen::Vector4d hist = Eigen::Vector4d::Constant(9.0);
  CHECK(arx_predict(constant, hist, hist) == doctest::Approx(9.0).epsilon(1e-8));

  CHECK_THROWS_AS(fit_arx(Eigen::VectorXd::Constant(10, 1.0),
                          Eigen::VectorXd::Constant(10, 1.0)),
                  InsufficientDataError);
}

TEST_CASE("gp_arx_predict adds the GP residual") {
  ArxModel arx;
  arx.lead_coeffs = Eigen::Vector4d(1.0, 0.0, 0.0, 0.0);
  Eigen::Vector4d hv = Eigen::Vector4d::Constant(10.0);
  Eigen::Vector4d lead = Eigen::Vector4d::Constant(12.0);

  GpPrior prior{GpHyperparams::isotropic(0.3, 2.0, 0.0, 2), 0.0};
  const GpArxPrediction p = gp_arx_predict(arx, DisturbanceGp(prior), hv, lead);
  CHECK(p.mean == doctest::Approx(12.0));
  CHECK(p.variance == doctest::Approx(0.09));

  const GpModel gp = residual_gp(0.4, 11);
  const GpArxPrediction q = gp_arx_predict(arx, DisturbanceGp(gp), hv, lead);
  const GpPrediction direct = gp_predict(gp, Eigen::Vector2d(10.0, 12.0));
  CHECK(q.mean == doctest::Approx(12.0 + direct.mean).epsilon(1e-12));
  CHECK(q.variance == doctest::Approx(direct.variance).epsilon(1e-12));
}

TEST_CASE("av_step kinematics") {
  auto [p1, v1] = av_step(5.0, 2.0, 0.0, 0.1);
  CHECK(p1 == doctest::Approx(5.2));
  CHECK(v1 == doctest::Approx(2.0));

  auto [p2, v2] = av_step(1.0, 0.0, 1.0, 0.1);
  CHECK(p2 == doctest::Approx(1.0));  // position uses the pre-update velocity
  CHECK(v2 == doctest::Approx(0.1));

  double p = 0.0, v = 3.0;
  double expected_p = 0.0;
  for (int k = 0; k < 10; ++k) {
    expected_p += 0.1 * v;
    std::tie(p, v) = av_step(p, v, 0.5, 0.1);
  }
  CHECK(p == doctest::Approx(expected_p).epsilon(1e-12));
}

TEST_CASE("hv_belief_step recursions") {
  const HvBelief one = hv_belief_step({0.0, 0.0}, 10.0, 0.2, 0.5, 0.1);
  CHECK(one.mean == doctest::Approx(0.1 * 10.2));
  CHECK(one.var == doctest::Approx(0.01 * 0.5));

  const HvBelief det = hv_belief_step({3.0, 0.0}, 8.0, 0.0, 0.0, 0.1);
  CHECK(det.mean == doctest::Approx(3.8));
  CHECK(det.var == doctest::Approx(0.0));

  HvBelief acc{0.0, 0.0};
  for (int k = 0; k < 7; ++k) acc = hv_belief_step(acc, 0.0, 0.0, 0.9, 0.1);
  CHECK(acc.var == doctest::Approx(7.0 * 0.01 * 0.9).epsilon(1e-12));

  CHECK_THROWS(hv_belief_step({0.0, -1.0}, 0.0, 0.0, 0.0, 0.1));
}

TEST_CASE("tightened_distance expands with uncertainty") {
  PlatoonLimits limits = default_limits();
  limits.min_gap = 10.0;
  limits.extra_gap = 0.0;
  limits.p_def = 0.95;

  const TightenedGap certain = tightened_distance(20.0, {5.0, 0.0}, limits);
  CHECK(certain.required == doctest::Approx(10.0));
  CHECK(certain.satisfied);

  const TightenedGap spread = tightened_distance(20.0, {5.0, 1.0}, limits);
  CHECK(spread.required == doctest::Approx(11.6449).epsilon(1e-3));

  double prev = 10.0;
  for (double var : {0.2, 0.5, 1.0, 2.0, 5.0}) {
    const TightenedGap g = tightened_distance(20.0, {5.0, var}, limits);
    CHECK(g.required >= prev - 1e-12);
    prev = g.required;
  }
}

TEST_CASE("solve_platoon_ocp is stationary at a settled cruise") {
  PlatoonLimits limits = default_limits(8);
  const PlatoonState state = cruising_state(3, 14.0, 18.0, 25.0);
  GpPrior prior{GpHyperparams::isotropic(1e-6, 2.0, 0.0, 2), 0.0};
  DisturbanceGp gp(prior);
  const Eigen::VectorXd v_ref = Eigen::VectorXd::Constant(limits.horizon, 14.0);
  const PlatoonSolution sol = solve_platoon_ocp(state, v_ref, limits, ArxModel{}, &gp,
                                                nullptr);
  CHECK(sol.acc_first.cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(sol.kkt_residual <= 1e-6);
  CHECK_FALSE(sol.soft_fallback);
}

TEST_CASE("GP variance keeps predicted gaps above the plain minimum") {
  PlatoonLimits limits = default_limits(10);
  const PlatoonState state = cruising_state(2, 12.0, 16.0, 14.0);
  const GpModel gp = residual_gp(0.5, 21);
  DisturbanceGp dist(gp);
  const Eigen::VectorXd v_ref = Eigen::VectorXd::Constant(limits.horizon, 12.0);
  const PlatoonSolution sol =
      solve_platoon_ocp(state, v_ref, limits, ArxModel{}, &dist, nullptr);
  for (int b = 1; b <= limits.horizon; ++b) {
    const double gap = sol.av_pos_pred(1, b) - sol.hv_mean_pred(b - 1);
    CHECK(gap >= limits.min_gap - 1e-7);
  }
  // Belief variance never decreases along the horizon.
  for (int b = 1; b < limits.horizon; ++b) {
    CHECK(sol.hv_var_pred(b) >= sol.hv_var_pred(b - 1) - 1e-15);
  }
}

TEST_CASE("a vanishing GP reproduces the nominal QP data") {
  PlatoonLimits limits = default_limits(6);
  const PlatoonState state = cruising_state(2, 10.0, 15.0, 14.0);
  ArxModel arx;
  arx.lead_coeffs = Eigen::Vector4d(0.9, 0.05, 0.0, 0.0);
  const Eigen::VectorXd v_ref = Eigen::VectorXd::Constant(limits.horizon, 10.5);

  GpPrior vanishing{GpHyperparams::isotropic(1e-12, 1.0, 0.0, 2), 0.0};
  DisturbanceGp gp(vanishing);
  const PlatoonQp with_gp = platoon_qp_data(state, v_ref, limits, arx, &gp, nullptr);
  const PlatoonQp nominal = platoon_qp_data(state, v_ref, limits, arx, nullptr, nullptr);
  CHECK((with_gp.qp.hessian - nominal.qp.hessian).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((with_gp.qp.gradient - nominal.qp.gradient).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((with_gp.qp.ineq - nominal.qp.ineq).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((with_gp.qp.bounds - nominal.qp.bounds).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("platoon OCP matches the enumeration oracle on small instances") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    PlatoonLimits limits = default_limits(1 + static_cast<int>(rng() % 3));
    limits.weight_ref = 2.0 + (trial % 3);
    limits.weight_coh = 1.0 + (trial % 2);
    PlatoonState state = cruising_state(2, 11.0 + (trial % 5), 15.0 + (trial % 7),
                                        13.0 + (trial % 9));
    ArxModel arx;
    arx.lead_coeffs = Eigen::Vector4d(0.8, 0.1, 0.05, 0.0);
    arx.hv_coeffs = Eigen::Vector4d(-0.05, 0.0, 0.0, 0.0);
    Eigen::VectorXd v_ref(limits.horizon);
    for (int b = 0; b < limits.horizon; ++b) {
      v_ref(b) = state.av_vel(0) + random_vector(1, rng, 0.8)(0);
    }
    const GpModel gp = residual_gp(0.3, 100 + trial);
    DisturbanceGp dist(gp);

    const PlatoonQp data = platoon_qp_data(state, v_ref, limits, arx, &dist, nullptr);
    const PlatoonSolution sol =
        solve_platoon_ocp(state, v_ref, limits, arx, &dist, nullptr);
    const auto oracle = enumerate_qp(data.qp);
    REQUIRE(oracle.feasible);
    CHECK(std::abs(sol.objective - oracle.objective) <=
          1e-6 * (1.0 + std::abs(oracle.objective)));
    CHECK(sol.kkt_residual <= 1e-6);
  }
}

TEST_CASE("dynamic sparse reuse is self-consistent when cruising") {
  PlatoonLimits limits = default_limits(12);
  const PlatoonState state = cruising_state(2, 13.0, 16.0, 18.0);
  ArxModel arx;
  arx.lead_coeffs = Eigen::Vector4d(1.0, 0.0, 0.0, 0.0);
  const GpModel gp = residual_gp(0.4, 51);
  DisturbanceGp dist(gp);
  const Eigen::VectorXd v_ref = Eigen::VectorXd::Constant(limits.horizon, 13.0);

  const PlatoonSolution cold = solve_platoon_ocp(state, v_ref, limits, arx, &dist, nullptr);
  const PlatoonSolution warm = solve_platoon_ocp(state, v_ref, limits, arx, &dist, &cold);
  const double correction_scale =
      limits.timestep * cold.gp_mean_used.cwiseAbs().maxCoeff() + 1e-9;
  const double shift = (warm.hv_mean_pred - cold.hv_mean_pred).cwiseAbs().maxCoeff();
  CHECK(shift <= 0.05 * limits.horizon * correction_scale + 1e-9);
}

TEST_CASE("synth_hv_driver delay, gain, and determinism") {
  Eigen::VectorXd lead(12);
  for (int k = 0; k < 12; ++k) lead(k) = 10.0 + k;

  const Eigen::VectorXd copy = synth_hv_driver(lead, {0, 1.0, 0.0, 40.0}, 1);
  CHECK((copy - lead).cwiseAbs().maxCoeff() <= 1e-14);

  const Eigen::VectorXd delayed = synth_hv_driver(lead, {4, 1.0, 0.0, 40.0}, 1);
  for (int k = 4; k < 12; ++k) CHECK(delayed(k) == doctest::Approx(lead(k - 4)));

  const Eigen::VectorXd a = synth_hv_driver(lead, {2, 0.9, 0.3, 40.0}, 7);
  const Eigen::VectorXd b = synth_hv_driver(lead, {2, 0.9, 0.3, 40.0}, 7);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("speed_profile kinds") {
  const Eigen::VectorXd flat =
      speed_profile(SpeedProfileKind::Constant, 0.1, 5.0, 1, {15.0, 25.0, 2.5, 3.0});
  CHECK(flat.size() == 51);
  CHECK((flat.array() - 15.0).abs().maxCoeff() == 0.0);

  const Eigen::VectorXd brake =
      speed_profile(SpeedProfileKind::EmergencyBrake, 0.1, 40.0, 1, {15.0, 25.0, 2.5, 3.0});
  int zero_run = 0, max_zero_run = 0;
  for (int k = 0; k < brake.size(); ++k) {
    zero_run = brake(k) == 0.0 ? zero_run + 1 : 0;
    max_zero_run = std::max(max_zero_run, zero_run);
  }
  CHECK(max_zero_run >= 20);  // holds zero for at least 2 s at T = 0.1

  const SpeedProfileParams params{15.0, 25.0, 2.5, 3.0};
  const Eigen::VectorXd wltp =
      speed_profile(SpeedProfileKind::WltpLike, 0.1, 120.0, 9, params);
  CHECK(wltp.minCoeff() >= 0.0);
  CHECK(wltp.maxCoeff() <= params.v_max + 1e-12);
  for (int k = 1; k < wltp.size(); ++k) {
    CHECK(std::abs(wltp(k) - wltp(k - 1)) <= params.acc_max * 0.1 + 1e-12);
  }
}
