#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tropeforge/pct.hpp"
#include "tropeforge/stats.hpp"
#include "tropeforge/tropes.hpp"

namespace tropeforge {

struct TropeReportFilter {
  std::optional<int> proposition_id;
  std::optional<StanceSide> side;
  std::optional<std::string> model_id;  // keeps tropes this model contributed to
};

// Markdown report: one section per trope with its paraphrase, representative,
// per-model counts, and constituent sentences grouped by model. Byte-stable
// for fixed input.
std::string trope_report_md(const std::vector<Trope>& tropes,
                            const std::map<std::string, std::string>& model_by_record,
                            const TropeReportFilter& filter = {});

struct BubbleEdge {
  std::string other_id;
  double weight = 0.0;  // Jaccard of the two nodes' proposition-id sets
};

// One bubble per distinct representative text (tropes from different
// propositions sharing a representative merge into one node, mirroring how
// cross-proposition sharing is read off the pooled clusters).
struct BubbleDatum {
  std::string trope_id;  // lexicographically first member trope id
  std::string paraphrase;
  int size = 0;  // total constituent sentences
  std::string dominant_category;
  std::set<int> propositions;
  std::vector<std::string> member_trope_ids;
  std::vector<BubbleEdge> edges;
};

std::vector<BubbleDatum> bubble_data(const std::vector<Trope>& tropes,
                                     const SurveyConfig& survey, size_t top_n,
                                     double edge_floor = 0.0);

// Region sets of the three-way political-orientation Venn: FarLeft, FarRight,
// and Mainstream (mainstream left + mainstream right collapsed). Membership
// comes from the personas of the replies contributing constituent sentences.
struct VennDatum {
  std::map<std::string, std::set<std::string>> regions;  // region key -> trope ids
  size_t tropes_without_political_provenance = 0;
};

VennDatum venn_data(const std::vector<Trope>& tropes,
                    const std::map<std::string, const ResponseRecord*>& records_by_id,
                    std::optional<PropositionCategory> category_filter = std::nullopt,
                    const SurveyConfig* survey = nullptr);

std::string venn_region_key(bool far_left, bool mainstream, bool far_right);

// CSV / JSON emission. All writers sort on stable keys and format numerics
// through one shared helper so re-exports are byte-identical.
void export_pct_csv(const PctMatrix& matrix, const std::filesystem::path& path);
void export_pct_summary_csv(const PctMatrix& matrix, const std::filesystem::path& path);

struct TvdRow {
  std::string model_id;
  std::string persona_category;
  std::string persona_value;
  double mean_tvd = 0.0;
  size_t props_used = 0;
  size_t props_excluded = 0;
};
void export_tvd_csv(const std::vector<TvdRow>& rows, const std::filesystem::path& path);

struct RegressionRow {
  std::string model_id;
  std::string axis;
  RegressionResult result;
};
void export_regression_csv(const std::vector<RegressionRow>& rows,
                           const std::filesystem::path& path,
                           double significance_threshold = 0.05);

struct DispersionRow {
  std::string model_id;
  DispersionCell cell;
};
void export_dispersion_csv(const std::vector<DispersionRow>& rows,
                           const std::filesystem::path& path);

void export_tropes_csv(const std::vector<Trope>& tropes, const std::filesystem::path& path);

void write_bubble_json(const std::vector<BubbleDatum>& data,
                       const std::filesystem::path& path);
void write_venn_json(const VennDatum& data, const std::filesystem::path& path);

}  // namespace tropeforge
