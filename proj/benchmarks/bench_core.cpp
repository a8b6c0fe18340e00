#include <benchmark/benchmark.h>

#include "nuhyp/grower.hpp"
#include "nuhyp/report.hpp"
#include "nuhyp/rng.hpp"

using namespace nuhyp;

namespace {

void BM_HyperbolicTimes(benchmark::State& state) {
    CounterRng rng(1);
    StepLogSequence s;
    s.values.resize(static_cast<std::size_t>(state.range(0)));
    for (auto& v : s.values) v = rng.uniform(-1, 3);
    for (auto _ : state) benchmark::DoNotOptimize(hyperbolic_times(s, 0.5));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_HyperbolicTimes)->RangeMultiplier(10)->Range(1000, 1000000)->Complexity();

void BM_SkewSplitting(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    auto sys = skew_nonuniform(3, n + 200);
    auto orbit = make_orbit(sys, sys.default_point(), n + 60, 60);
    for (auto _ : state) benchmark::DoNotOptimize(estimate_splitting(sys, orbit, {1, 1}, 60));
}
BENCHMARK(BM_SkewSplitting)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_PushDisk(benchmark::State& state) {
    auto sys = diag3();
    auto orbit = make_orbit(sys, sys.default_point(), 20, 20);
    auto split = estimate_splitting(sys, orbit, {1, 1, 1}, 10);
    BundleKind kind = state.range(0) == 1 ? BundleKind::E : BundleKind::EF;
    auto disk = seed_disk(sys, split, sys.default_point(), 0.05, 0.5, 0.005, {0, kind, std::nullopt});
    for (auto _ : state) benchmark::DoNotOptimize(push_disk(sys, split, disk, 0.5, 0.05));
}
BENCHMARK(BM_PushDisk)->Arg(1)->Arg(2)->Unit(benchmark::kMicrosecond);

void BM_BlockMeasureSamples(benchmark::State& state) {
    auto j = nlohmann::json::parse(R"({
      "analysis": "measure-sweep",
      "system": {"name": "skew-nonuniform"},
      "orbit": {"N": 1000, "B": 60},
      "thresholds": {"gamma1": 0.8, "gamma2": -0.7, "theta": 0.5, "ell": [1, 8]},
      "samples": 16
    })");
    auto c = parse_config(j);
    for (auto _ : state) benchmark::DoNotOptimize(estimate_block_measure(c));
    state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_BlockMeasureSamples)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
