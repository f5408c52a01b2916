#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tropeforge/gateway.hpp"
#include "tropeforge/stance.hpp"
#include "tropeforge/store.hpp"

namespace tropeforge {

struct SentenceUnit {
  std::string record_id;
  int sentence_index = 0;
  std::string text;  // non-empty, trimmed
};

// Deterministic rule-based sentence segmentation. Terminators {., !, ?}
// followed by whitespace and a capital/digit/quote start a new unit; a known
// abbreviation before the period suppresses the split; newlines are hard
// boundaries. Units without a single letter (bullets, bare numbering) drop.
std::vector<SentenceUnit> segment(const std::string& record_id, const std::string& raw_text);

struct EmbeddingVector {
  std::vector<float> values;

  size_t dim() const { return values.size(); }
  double norm() const;
  void normalize();
};

// 1 - cosine similarity, accumulated in double in index order so independent
// implementations of the same formula agree bitwise.
double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b);

enum class StanceSide { Support, Oppose };

std::string to_string(StanceSide s);
StanceSide stance_side_from_string(const std::string& s);

struct StancePartition {
  int proposition_id = 0;
  StanceSide side = StanceSide::Support;
  std::vector<SentenceUnit> units;  // sorted by (record_id, sentence_index)
};

struct PartitionResult {
  StancePartition support;
  StancePartition oppose;
  size_t dropped_none = 0;  // open replies with a None stance (or no stance)
};

// Routes open-setting replies by collapsed stance and segments them into
// sentence units.
PartitionResult partition(const std::vector<ResponseRecord>& records,
                          const std::map<std::string, StanceRecord>& stances,
                          int proposition_id);

struct ClusteringParams {
  double epsilon = 0.15;
  int min_pts = 8;
  int min_cluster_size = 10;
};

struct ClusterResult {
  std::vector<std::vector<int>> clusters;  // member indices, ascending
  std::vector<int> noise;                  // indices, ascending
};

// Density-based clustering under cosine distance. A point is core iff it has
// >= min_pts neighbors within epsilon (inclusive, counting itself). Border
// points join the first cluster that claims them in scan order (the input
// order, which callers keep sorted by (record_id, sentence_index)). Clusters
// below min_cluster_size are discarded to noise.
ClusterResult cluster(const std::vector<EmbeddingVector>& vectors,
                      const ClusteringParams& params);

// Componentwise-mean centroid, then the member with minimal squared
// Euclidean distance; ties break to the earliest member in input order.
size_t representative_index(const std::vector<EmbeddingVector>& members);

// Embedding front-end with a persistent per-model disk cache, so reruns are
// free and identical texts always map to identical vectors.
class Embedder {
 public:
  Embedder(EndpointProfile profile, std::filesystem::path cache_dir,
           size_t batch_size = 64);

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts);

  size_t cache_hits() const { return hits_; }
  size_t cache_misses() const { return misses_; }
  const EndpointProfile& profile() const { return profile_; }

 private:
  void load_cache();
  void append_cache(const std::vector<std::pair<std::string, EmbeddingVector>>& fresh);

  EndpointProfile profile_;
  std::filesystem::path cache_file_;
  size_t batch_size_;
  std::map<std::string, EmbeddingVector> cache_;
  size_t hits_ = 0;
  size_t misses_ = 0;
};

// Argument/No-argument gate over trope candidates, using the fixed moderator
// prompt at temperature 0. Unparseable verdicts get one re-ask, then reject.
class TropeFilter {
 public:
  enum class Verdict { Argument, NoArgument, Unparseable };

  TropeFilter(std::string prompt_template, EndpointProfile profile);
  static TropeFilter from_file(const std::filesystem::path& template_path,
                               EndpointProfile profile);

  std::string build_prompt(const std::string& proposition_text,
                           const std::string& candidate_sentence) const;
  Verdict classify(const std::string& proposition_text,
                   const std::string& candidate_sentence) const;

 private:
  std::string template_;
  EndpointProfile profile_;
};

// Short paraphrase of a representative sentence; any endpoint failure falls
// back to the representative itself.
std::string paraphrase_trope(const std::string& representative_text,
                             const std::string& prompt_template,
                             const EndpointProfile& profile);

struct Trope {
  std::string trope_id;  // content hash of (proposition_id, side, representative)
  int proposition_id = 0;
  StanceSide side = StanceSide::Support;
  std::string representative_text;
  std::string paraphrase;  // representative_text when the stage is disabled
  std::vector<SentenceUnit> constituents;
  std::set<std::string> assigned_record_ids;
  std::map<std::string, int> per_model_counts;  // constituent sentences per model
};

std::string make_trope_id(int proposition_id, StanceSide side,
                          const std::string& representative_text);

// Fills assigned_record_ids (every reply contributing >= 1 constituent) and
// per-model sentence tallies.
void assign_constituents(Trope& trope,
                         const std::map<std::string, std::string>& model_by_record);

struct EntailmentStats {
  size_t n_entail = 0;
  size_t n_neutral = 0;
  size_t n_contradict = 0;
  size_t n_failed = 0;  // endpoint failures, excluded from fractions

  size_t scored() const { return n_entail + n_neutral + n_contradict; }
  double frac_entail() const;
  double frac_neutral() const;
  double frac_contradict() const;
};

// premise = constituent sentence, hypothesis = the trope's paraphrase.
// Pairs run concurrently up to max_in_flight; tallies are order-independent.
EntailmentStats entailment_precision(const Trope& trope, const EndpointProfile& nli_profile,
                                     int max_in_flight = 8);

// Sentence-weighted aggregate: counts sum across tropes.
EntailmentStats aggregate_entailment(const std::vector<EntailmentStats>& per_trope);

struct TropePipelineConfig {
  ClusteringParams clustering;
  bool run_filter = true;
  bool run_paraphrase = false;
  bool run_nli = false;
  int max_in_flight = 8;  // NLI pair concurrency
  std::string filter_template;
  std::string paraphrase_template;
  std::optional<EndpointProfile> filter_profile;
  std::optional<EndpointProfile> paraphrase_profile;
  std::optional<EndpointProfile> nli_profile;
};

struct RejectedCandidate {
  int proposition_id = 0;
  StanceSide side = StanceSide::Support;
  std::string representative_text;
  size_t cluster_size = 0;
  bool unparseable_verdict = false;
};

struct TropePipelineResult {
  std::vector<Trope> tropes;  // sorted by (proposition_id, side, trope_id)
  std::map<std::string, EntailmentStats> entailment_by_trope;
  std::vector<RejectedCandidate> rejected;
  size_t dropped_none_replies = 0;
  size_t noise_sentences = 0;
  size_t clusters_found = 0;
};

// Full extraction over the pooled open-setting records of every model:
// partition -> segment -> embed -> cluster -> representative -> filter ->
// paraphrase -> back-map.
TropePipelineResult extract_tropes(const std::vector<ResponseRecord>& open_records,
                                   const std::map<std::string, StanceRecord>& stances,
                                   const SurveyConfig& survey, Embedder& embedder,
                                   const TropePipelineConfig& config);

std::string trope_to_json_line(const Trope& trope, const EntailmentStats* stats = nullptr);
Trope trope_from_json_line(const std::string& line);

}  // namespace tropeforge
