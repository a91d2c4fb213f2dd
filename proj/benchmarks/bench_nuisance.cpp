#include <benchmark/benchmark.h>

#include "survope/cox.hpp"
#include "survope/propensity.hpp"
#include "survope/synthenv.hpp"

namespace {

using namespace survope;

Dataset sample(std::size_t n) {
  EnvConfig cfg;
  cfg.reference_size = 20'000;
  const auto env = make_env(1, cfg);
  return generate_dataset(env, n, 3).dataset;
}

void BM_FitCox(benchmark::State& state) {
  const auto data = sample(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto m = fit_cox(data, SurvivalTarget::kEvent);
    benchmark::DoNotOptimize(m);
  }
}
BENCHMARK(BM_FitCox)->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_FitPropensity(benchmark::State& state) {
  const auto data = sample(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto m = fit_propensity(data);
    benchmark::DoNotOptimize(m);
  }
}
BENCHMARK(BM_FitPropensity)->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace
