#include <benchmark/benchmark.h>

#include "survope/mlp_policy.hpp"

namespace {

using namespace survope;

void BM_MlpLinearObjectiveGradient(benchmark::State& state) {
  auto rng = seeded_rng(5, 0);
  const auto policy = MlpPolicy::xavier(10, 10, rng);
  const auto batch = static_cast<Eigen::Index>(state.range(0));
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(10, batch);
  const Eigen::MatrixXd c = Eigen::MatrixXd::Random(10, batch);
  for (auto _ : state) {
    auto g = policy.linear_objective_gradient(x, c);
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpLinearObjectiveGradient)->Arg(256)->Arg(512)->Unit(benchmark::kMicrosecond);

void BM_MlpSingleProbs(benchmark::State& state) {
  auto rng = seeded_rng(5, 0);
  const auto policy = MlpPolicy::xavier(10, 10, rng);
  std::vector<double> x(10, 0.3);
  std::vector<double> p(10);
  for (auto _ : state) {
    policy.probs_into(x, p);
    benchmark::DoNotOptimize(p.data());
  }
}
BENCHMARK(BM_MlpSingleProbs);

}  // namespace
