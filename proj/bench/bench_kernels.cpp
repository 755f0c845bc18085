// Serial references against their OpenMP counterparts: the steady-state grid
// oracle, the identifiability Monte Carlo and the multi-seed closed loop.
// Run with OMP_NUM_THREADS set to compare scaling.

#include <benchmark/benchmark.h>

#include "gaslift/harness.hpp"

namespace {

using namespace gaslift;

const HarnessConfig& config() {
  static const HarnessConfig cfg = HarnessConfig::defaults();
  return cfg;
}

DisturbanceState start_of_scenario() { return config().scenario.at(0.0); }

void BM_OracleSerial(benchmark::State& state) {
  const double step = 1.0 / static_cast<double>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(brute_force_ss_oracle_serial(config().true_theta(), start_of_scenario(),
                                                          config().model, config().econ, step));
  }
}
BENCHMARK(BM_OracleSerial)->Arg(4)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_OracleParallel(benchmark::State& state) {
  const double step = 1.0 / static_cast<double>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        brute_force_ss_oracle(config().true_theta(), start_of_scenario(), config().model, config().econ, step));
  }
}
BENCHMARK(BM_OracleParallel)->Arg(4)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_IdentifiabilitySerial(benchmark::State& state) {
  auto mc = config().identifiability_config();
  mc.runs = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(identifiability_mc_serial(config().model, mc));
}
BENCHMARK(BM_IdentifiabilitySerial)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_IdentifiabilityParallel(benchmark::State& state) {
  auto mc = config().identifiability_config();
  mc.runs = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(identifiability_mc(config().model, mc));
}
BENCHMARK(BM_IdentifiabilityParallel)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_ClosedLoop(benchmark::State& state) {
  HarnessConfig cfg = config();
  cfg.experiment.parallel = state.range(0) != 0;
  cfg.experiment.horizon_s = 300.0;
  for (auto _ : state) benchmark::DoNotOptimize(simulate_all(cfg, {SupervisorKind::ROPA, SupervisorKind::FIXED}));
}
BENCHMARK(BM_ClosedLoop)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
