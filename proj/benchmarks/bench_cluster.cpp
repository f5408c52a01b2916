#include <benchmark/benchmark.h>

#include "tropeforge/stub.hpp"
#include "tropeforge/tropes.hpp"
#include "tropeforge/util.hpp"

using namespace tropeforge;

namespace {

// Mixture of repeated "trope" points and unique noise, like a real partition.
std::vector<EmbeddingVector> partition_like(size_t n, int dim) {
  std::vector<EmbeddingVector> points;
  points.reserve(n);
  const size_t n_repeats = n / 3;
  for (size_t i = 0; i < n; ++i) {
    const std::string text = i < n_repeats
                                 ? "repeated justification sentence"
                                 : "unique sentence " + std::to_string(i);
    points.push_back(EmbeddingVector{stub_embedding(7, text, dim)});
  }
  return points;
}

}  // namespace

static void ClusterPartition(benchmark::State& state) {
  const auto points = partition_like(static_cast<size_t>(state.range(0)), 384);
  ClusteringParams params;  // pipeline defaults: eps 0.15, minPts 8, min cluster 10
  for (auto _ : state) {
    auto result = cluster(points, params);
    benchmark::DoNotOptimize(result);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(ClusterPartition)->RangeMultiplier(2)->Range(64, 1024)
    ->Unit(benchmark::kMillisecond)->Complexity();

static void StubEmbed(benchmark::State& state) {
  size_t i = 0;
  for (auto _ : state) {
    auto v = stub_embedding(7, "sentence number " + std::to_string(i++), 384);
    benchmark::DoNotOptimize(v);
  }
}
BENCHMARK(StubEmbed);

static void CentroidRepresentative(benchmark::State& state) {
  const auto points = partition_like(static_cast<size_t>(state.range(0)), 384);
  for (auto _ : state) {
    auto index = representative_index(points);
    benchmark::DoNotOptimize(index);
  }
}
BENCHMARK(CentroidRepresentative)->Arg(64)->Arg(512);
