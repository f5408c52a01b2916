#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tropeforge/gateway.hpp"
#include "tropeforge/pct.hpp"
#include "tropeforge/report.hpp"
#include "tropeforge/stance.hpp"
#include "tropeforge/store.hpp"
#include "tropeforge/survey.hpp"
#include "tropeforge/tropes.hpp"

namespace tropeforge {

// Bundled data files: survey definitions, prompt templates, the weight table.
struct DataPaths {
  std::filesystem::path propositions;
  std::filesystem::path personas;
  std::filesystem::path instructions;
  std::filesystem::path pct_weights;
  std::filesystem::path judge_prompt;
  std::filesystem::path trope_filter_prompt;
  std::filesystem::path paraphrase_prompt;
  std::filesystem::path dataset_mapping;
  std::filesystem::path e2e_script;

  static DataPaths defaults(const std::filesystem::path& data_dir);
};

// Resolution order: explicit flag, TROPE_FORGE_DATA env var, the source tree.
std::filesystem::path resolve_data_dir(const std::optional<std::filesystem::path>& flag);

// Stage outputs inside one run directory.
struct RunPaths {
  std::filesystem::path run_dir;

  std::filesystem::path responses() const { return run_dir / "responses.jsonl"; }
  std::filesystem::path stances() const { return run_dir / "stances.jsonl"; }
  std::filesystem::path manifest() const { return run_dir / "manifest.json"; }
  std::filesystem::path run_config() const { return run_dir / "run_config.json"; }
  std::filesystem::path pct_coords() const { return run_dir / "pct_coords.csv"; }
  std::filesystem::path pct_summary() const { return run_dir / "pct_summary.csv"; }
  std::filesystem::path tvd() const { return run_dir / "tvd.csv"; }
  std::filesystem::path regression() const { return run_dir / "regression.csv"; }
  std::filesystem::path dispersion() const { return run_dir / "dispersion.csv"; }
  std::filesystem::path tropes() const { return run_dir / "tropes.jsonl"; }
  std::filesystem::path clusters_debug() const { return run_dir / "clusters_debug.jsonl"; }
  std::filesystem::path tropes_report() const { return run_dir / "tropes_report.md"; }
  std::filesystem::path tropes_csv() const { return run_dir / "tropes.csv"; }
  std::filesystem::path bubble() const { return run_dir / "bubble.json"; }
  std::filesystem::path venn() const { return run_dir / "venn.json"; }
  std::filesystem::path embedding_cache() const { return run_dir / "cache" / "embeddings"; }
  std::filesystem::path lock() const { return run_dir / ".lock"; }
};

// Advisory exclusive lock: one stage at a time per run_dir.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& lock_file);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path file_;
  bool held_ = false;
};

SurveyConfig load_survey_from(const DataPaths& data);

// Persisted run parameters so later stages and `resume` agree with the
// invocation that created the run_dir.
struct RunConfigFile {
  MatrixFilter filter;
  ClusteringParams clustering;
  std::uint64_t seed = 0;
  std::string generator_model;
};
void save_run_config(const RunConfigFile& config, const std::filesystem::path& path);
RunConfigFile load_run_config(const std::filesystem::path& path);

struct GenerateOutcome {
  size_t total = 0;
  size_t skipped = 0;  // already persisted prompt_keys
  size_t ok = 0;
  size_t failed = 0;
};

GenerateOutcome stage_generate(const SurveyConfig& survey,
                               const std::vector<PromptInstance>& instances,
                               const EndpointProfile& generator, ResponseStore& store,
                               int max_in_flight);

std::map<std::string, StanceRecord> load_stances(const std::filesystem::path& path);

struct ClassifyOutcome {
  size_t closed_parsed = 0;
  size_t open_judged = 0;
  size_t skipped = 0;
  size_t failed = 0;
};

// Closed records go through the parsing cascade; open records through the
// judge in bounded-concurrency batches with one re-ask for invalid output.
ClassifyOutcome stage_classify(const SurveyConfig& survey, const ResponseStore& store,
                               const std::string& judge_template,
                               const std::optional<EndpointProfile>& judge_profile,
                               const std::filesystem::path& stances_path,
                               std::optional<Setting> only_setting, int max_in_flight);

PctMatrix stage_score(const ResponseStore& store,
                      const std::map<std::string, StanceRecord>& stances,
                      const AxisWeightTable& weights, const StanceValueMap& value_map,
                      const RunPaths& paths);

struct StatsOutcome {
  size_t tvd_rows = 0;
  size_t regressions = 0;
  size_t regressions_skipped = 0;  // missing base reference
  size_t dispersion_cells = 0;
};

StatsOutcome stage_stats(const ResponseStore& store,
                         const std::map<std::string, StanceRecord>& stances,
                         const AxisWeightTable& weights, const StanceValueMap& value_map,
                         Setting regression_setting, const RunPaths& paths,
                         double significance_threshold = 0.05);

struct TropesOutcome {
  size_t tropes = 0;
  size_t rejected = 0;
  size_t noise_sentences = 0;
  size_t dropped_none_replies = 0;
};

TropesOutcome stage_tropes(const SurveyConfig& survey, const ResponseStore& store,
                           const std::map<std::string, StanceRecord>& stances,
                           Embedder& embedder, const TropePipelineConfig& config,
                           const RunPaths& paths, bool write_clusters_debug);

void stage_report(const SurveyConfig& survey, const ResponseStore& store,
                  const RunPaths& paths, size_t bubble_top_n,
                  std::optional<PropositionCategory> venn_category,
                  double bubble_edge_floor = 0.0);

struct StageProgress {
  std::string stage;
  size_t completed = 0;
  size_t total = 0;

  bool done() const { return total > 0 && completed >= total; }
};

std::vector<StageProgress> resume_summary(const RunPaths& paths, const SurveyConfig& survey);

// Role-keyed stub profiles parsed from one script file with per-role sections.
struct E2eProfiles {
  EndpointProfile generator;
  EndpointProfile judge;
  EndpointProfile filter;
  EndpointProfile paraphraser;
  EndpointProfile embedder;
  EndpointProfile nli;
};
E2eProfiles load_e2e_profiles(const std::filesystem::path& script_path, std::uint64_t seed);

struct E2eOptions {
  std::uint64_t seed = 7;
  int max_in_flight = 8;
  ClusteringParams clustering;
  std::vector<int> proposition_ids;      // default 1..20
  std::vector<std::string> personas;     // default political orientation values
  size_t bubble_top_n = 30;
};

// Full offline pipeline against the scripted stub: generate, classify, score,
// stats, tropes, report. Byte-reproducible for a fixed seed.
void run_e2e(const DataPaths& data, const RunPaths& paths, const E2eOptions& options);

}  // namespace tropeforge
