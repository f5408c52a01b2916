#include <benchmark/benchmark.h>

#include "tropeforge/pipeline.hpp"
#include "tropeforge/survey.hpp"
#include "tropeforge/tropes.hpp"

using namespace tropeforge;

namespace {

const SurveyConfig& survey() {
  static const SurveyConfig s =
      load_survey_from(DataPaths::defaults(TF_CORE_DATA_DIR));
  return s;
}

}  // namespace

static void ExpandFullMatrix(benchmark::State& state) {
  const auto& s = survey();
  for (auto _ : state) {
    auto instances = expand_matrix(s);
    benchmark::DoNotOptimize(instances);
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * 26040);
}
BENCHMARK(ExpandFullMatrix)->Unit(benchmark::kMillisecond);

static void RenderPrompts(benchmark::State& state) {
  const auto& s = survey();
  MatrixFilter filter;
  filter.proposition_ids = std::vector<int>{1, 2, 3, 4};
  const auto instances = expand_matrix(s, filter);
  for (auto _ : state) {
    for (const auto& instance : instances) {
      auto text = render_prompt(instance, s);
      benchmark::DoNotOptimize(text);
    }
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) *
                          static_cast<int64_t>(instances.size()));
}
BENCHMARK(RenderPrompts)->Unit(benchmark::kMillisecond);

static void SegmentReply(benchmark::State& state) {
  const std::string reply =
      "I think this deserves a careful answer. Markets reward effort, e.g. through "
      "prices that signal scarcity. Dr. Keynes would have disagreed! Still, growth "
      "averaged 3.5 percent last year. #Economics #Policy";
  for (auto _ : state) {
    auto units = segment("record", reply);
    benchmark::DoNotOptimize(units);
  }
}
BENCHMARK(SegmentReply);
