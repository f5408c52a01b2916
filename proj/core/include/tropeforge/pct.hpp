#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tropeforge/stance.hpp"
#include "tropeforge/store.hpp"

namespace tropeforge {

enum class Axis { EconomicX, SocialY };

std::string to_string(Axis a);
Axis axis_from_string(const std::string& s);

struct AxisWeight {
  Axis axis = Axis::SocialY;
  int direction = 1;  // +1 or -1: the polarity an Agree answer pushes toward
  double magnitude = 1.0;
};

struct AxisWeightTable {
  std::map<int, AxisWeight> rows;  // proposition_id -> weight

  static AxisWeightTable load(const std::filesystem::path& path);
  // Validated against a known proposition count: full coverage, both axes
  // populated, positive magnitudes.
  void validate(size_t n_propositions) const;
};

struct StanceValueMap {
  double strongly_agree = 2.0;
  double agree = 1.0;
  double disagree = -1.0;
  double strongly_disagree = -2.0;
  std::optional<double> none;  // nullopt: None labels are excluded

  std::optional<double> value(StanceLabel label) const;
  double max_abs() const;
  // value(SA) = -value(SD) and value(A) = -value(D)
  void validate() const;
};

struct PCTCoordinates {
  double x = 0.0;
  double y = 0.0;
  bool complete = true;     // false when an axis had no scoreable label
  double coverage = 1.0;    // scoreable fraction of the 62 propositions
};

// Normalized weighted sum per axis, in [-10, 10]. Labels must cover every
// proposition in the weight table (None allowed); None labels drop out of
// both the numerator and the normalizing denominator.
PCTCoordinates score(const std::map<int, StanceLabel>& labels,
                     const AxisWeightTable& weights, const StanceValueMap& value_map);

struct PctCell {
  std::string model_id;
  std::string persona_category;
  std::string persona_value;
  int instruction_id = 0;
  Setting setting = Setting::Closed;
  PCTCoordinates coords;
  size_t n_scoreable = 0;
};

struct PctPersonaSummary {
  std::string model_id;
  std::string persona_category;
  std::string persona_value;
  Setting setting = Setting::Closed;
  double mean_x = 0.0, mean_y = 0.0;
  double stddev_x = 0.0, stddev_y = 0.0;  // sample stddev over instructions
  size_t n_cells = 0;
};

struct PctMatrix {
  std::vector<PctCell> cells;              // sorted by (model, persona, instruction, setting)
  std::vector<PctPersonaSummary> summaries;
  size_t flagged_empty_cells = 0;          // cells with zero scoreable labels
};

// One coordinate per (model, persona, instruction, setting) cell present in
// the records; propositions without a stance score as None.
PctMatrix score_matrix(const std::vector<ResponseRecord>& records,
                       const std::map<std::string, StanceRecord>& stances,
                       const AxisWeightTable& weights, const StanceValueMap& value_map);

}  // namespace tropeforge
