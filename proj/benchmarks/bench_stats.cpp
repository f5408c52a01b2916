#include <benchmark/benchmark.h>

#include "tropeforge/stats.hpp"
#include "tropeforge/util.hpp"

using namespace tropeforge;

static void TvdPair(benchmark::State& state) {
  const ResponseDistribution p{0.5, 0.3, 0.2};
  const ResponseDistribution q{0.1, 0.8, 0.1};
  for (auto _ : state) {
    benchmark::DoNotOptimize(tvd(p, q));
  }
}
BENCHMARK(TvdPair);

static void OlsFit(benchmark::State& state) {
  SplitMix64 rng(1);
  const std::vector<std::string> levels{"base", "far left", "far right",
                                        "mainstream left", "mainstream right"};
  std::vector<double> y;
  std::vector<std::string> cats;
  for (int i = 0; i < static_cast<int>(state.range(0)); ++i) {
    cats.push_back(levels[static_cast<size_t>(i) % levels.size()]);
    y.push_back(rng.next_unit() * 4.0 - 2.0);
  }
  for (auto _ : state) {
    auto result = ols_fit(y, cats, "base");
    benchmark::DoNotOptimize(result);
  }
}
BENCHMARK(OlsFit)->Arg(220)->Arg(2200)->Unit(benchmark::kMicrosecond);
