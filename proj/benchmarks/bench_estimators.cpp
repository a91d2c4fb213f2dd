#include <benchmark/benchmark.h>

#include <memory>

#include "survope/estimators.hpp"
#include "survope/synthenv.hpp"

namespace {

using namespace survope;

struct Fixture {
  std::shared_ptr<const EnvParams> env;
  Dataset data{1, 2};
  NuisanceBundle bundle;
  std::shared_ptr<EpsilonGreedyPolicy> eval;

  explicit Fixture(std::size_t n) {
    EnvConfig cfg;
    cfg.reference_size = 20'000;
    env = std::make_shared<const EnvParams>(make_env(1, cfg));
    data = generate_dataset(*env, n, 7).dataset;
    bundle = NuisanceBundle{logging_policy(*env), std::make_shared<TrueSurvivalModel>(env),
                            std::make_shared<TrueCensoringModel>(env), 0.02};
    eval = make_eval_policy(*env, 0.2);
  }
};

void BM_PointEstimators(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto r = estimate_many(f.data, *f.eval, f.bundle, PointTarget{1.0}, all_estimators());
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PointEstimators)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_RmstIpcwDr(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  const TimeGrid grid(f.env->tau, 100);
  for (auto _ : state) {
    auto r = estimate_rmst(f.data, *f.eval, f.bundle, grid, Estimator::kIpcwDR);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RmstIpcwDr)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

}  // namespace
