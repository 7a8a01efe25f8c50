#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "gpmpc/sparse_gp.hpp"

namespace {

gpmpc::GpDataset sine_dataset(int n) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 0.05);
  gpmpc::GpDataset data;
  data.inputs.resize(n, 1);
  data.targets.resize(n);
  for (int i = 0; i < n; ++i) {
    data.inputs(i, 0) = 10.0 * i / (n - 1);
    data.targets(i) = std::sin(data.inputs(i, 0)) + noise(rng);
  }
  return data;
}

const gpmpc::GpHyperparams kHyper = gpmpc::GpHyperparams::isotropic(1.0, 0.8, 0.1, 1);

void BM_ExactPredict(benchmark::State& state) {
  const auto data = sine_dataset(static_cast<int>(state.range(0)));
  const auto model = gpmpc::gp_fit(data, kHyper);
  Eigen::VectorXd q = Eigen::VectorXd::Constant(1, 3.21);
  for (auto _ : state) {
    benchmark::DoNotOptimize(gpmpc::gp_predict(model, q).mean);
    q(0) = q(0) < 9.0 ? q(0) + 0.001 : 1.0;
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ExactPredict)->RangeMultiplier(4)->Range(125, 8000)->Complexity();

void BM_FicPredict(benchmark::State& state) {
  const auto data = sine_dataset(static_cast<int>(state.range(0)));
  const auto inducing =
      gpmpc::select_inducing(data, 20, gpmpc::InducingStrategy::GreedyVariance, 1);
  const auto model = gpmpc::fic_fit(data, kHyper, inducing);
  Eigen::VectorXd q = Eigen::VectorXd::Constant(1, 3.21);
  for (auto _ : state) {
    benchmark::DoNotOptimize(gpmpc::fic_predict(model, q).mean);
    q(0) = q(0) < 9.0 ? q(0) + 0.001 : 1.0;
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_FicPredict)->RangeMultiplier(4)->Range(125, 8000)->Complexity();

void BM_GpFit(benchmark::State& state) {
  const auto data = sine_dataset(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(gpmpc::gp_fit(data, kHyper).alpha.sum());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_GpFit)->RangeMultiplier(2)->Range(64, 1024)->Complexity();

}  // namespace
