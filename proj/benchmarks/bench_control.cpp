#include <benchmark/benchmark.h>

#include "gpmpc/platoon.hpp"
#include "gpmpc/qp.hpp"

namespace {

gpmpc::PlatoonState cruise_state(int n_av) {
  gpmpc::PlatoonState state;
  state.av_pos.resize(n_av);
  state.av_vel = Eigen::VectorXd::Constant(n_av, 14.0);
  for (int i = 0; i < n_av; ++i) state.av_pos(i) = -15.0 * i;
  state.hv_pos = state.av_pos(n_av - 1) - 18.0;
  state.hv_vel_hist.setConstant(14.0);
  state.lead_vel_hist.setConstant(14.0);
  return state;
}

void BM_PlatoonOcp(benchmark::State& state) {
  gpmpc::PlatoonLimits limits;
  limits.horizon = static_cast<int>(state.range(0));
  limits.timestep = 0.1;
  const gpmpc::PlatoonState platoon = cruise_state(3);
  gpmpc::ArxModel arx;
  arx.lead_coeffs = Eigen::Vector4d(1.0, 0.0, 0.0, 0.0);
  const Eigen::VectorXd v_ref = Eigen::VectorXd::Constant(limits.horizon, 13.0);
  for (auto _ : state) {
    const auto sol = gpmpc::solve_platoon_ocp(platoon, v_ref, limits, arx, nullptr, nullptr);
    benchmark::DoNotOptimize(sol.objective);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_PlatoonOcp)->DenseRange(5, 25, 5)->Complexity();

void BM_DenseQp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  gpmpc::QpProblem problem;
  problem.hessian = Eigen::MatrixXd::Identity(n, n) * 2.0;
  problem.gradient = -Eigen::VectorXd::Ones(n);
  problem.ineq = Eigen::MatrixXd::Identity(n, n);
  problem.bounds = Eigen::VectorXd::Constant(n, 0.25);
  for (auto _ : state) {
    benchmark::DoNotOptimize(gpmpc::solve_qp(problem).objective);
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_DenseQp)->RangeMultiplier(2)->Range(8, 64)->Complexity();

}  // namespace
