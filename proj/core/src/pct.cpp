#include "tropeforge/pct.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include <json.hpp>

#include "tropeforge/errors.hpp"
#include "tropeforge/util.hpp"

namespace tropeforge {

namespace {

using nlohmann::json;

double sample_stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::string to_string(Axis a) {
  return a == Axis::EconomicX ? "EconomicX" : "SocialY";
}

Axis axis_from_string(const std::string& s) {
  if (s == "EconomicX") return Axis::EconomicX;
  if (s == "SocialY") return Axis::SocialY;
  throw ValidationError("unknown axis: " + s);
}

AxisWeightTable AxisWeightTable::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid weight table: ") + e.what());
  }
  AxisWeightTable table;
  for (const auto& row : j.at("weights")) {
    const int id = row.at("id").get<int>();
    AxisWeight w;
    w.axis = axis_from_string(row.at("axis").get<std::string>());
    w.direction = row.at("direction").get<int>();
    w.magnitude = row.at("magnitude").get<double>();
    if (table.rows.count(id)) {
      throw ValidationError("duplicate weight row for proposition " + std::to_string(id));
    }
    table.rows.emplace(id, w);
  }
  return table;
}

void AxisWeightTable::validate(size_t n_propositions) const {
  if (rows.size() != n_propositions) {
    throw ValidationError("weight table covers " + std::to_string(rows.size()) +
                          " propositions, expected " + std::to_string(n_propositions));
  }
  size_t on_x = 0, on_y = 0;
  for (const auto& [id, w] : rows) {
    if (id < 1 || static_cast<size_t>(id) > n_propositions) {
      throw ValidationError("weight row id out of range: " + std::to_string(id));
    }
    if (w.direction != 1 && w.direction != -1) {
      throw ValidationError("weight direction must be +1/-1 for proposition " +
                            std::to_string(id));
    }
    if (!(w.magnitude > 0.0)) {
      throw ValidationError("weight magnitude must be positive for proposition " +
                            std::to_string(id));
    }
    (w.axis == Axis::EconomicX ? on_x : on_y) += 1;
  }
  if (on_x == 0 || on_y == 0) {
    throw ValidationError("weight table must cover both axes");
  }
}

std::optional<double> StanceValueMap::value(StanceLabel label) const {
  switch (label) {
    case StanceLabel::StronglyAgree: return strongly_agree;
    case StanceLabel::Agree: return agree;
    case StanceLabel::Disagree: return disagree;
    case StanceLabel::StronglyDisagree: return strongly_disagree;
    case StanceLabel::None: return none;
  }
  return std::nullopt;
}

double StanceValueMap::max_abs() const {
  return std::max({std::abs(strongly_agree), std::abs(agree), std::abs(disagree),
                   std::abs(strongly_disagree)});
}

void StanceValueMap::validate() const {
  if (strongly_agree != -strongly_disagree || agree != -disagree) {
    throw ValidationError("stance value map must be antisymmetric");
  }
  if (max_abs() <= 0.0) throw ValidationError("stance value map is all zero");
}

PCTCoordinates score(const std::map<int, StanceLabel>& labels,
                     const AxisWeightTable& weights, const StanceValueMap& value_map) {
  for (const auto& [id, w] : weights.rows) {
    if (!labels.count(id)) {
      throw ValidationError("missing stance label for proposition " + std::to_string(id));
    }
  }
  const double vmax = value_map.max_abs();
  double num_x = 0.0, den_x = 0.0, num_y = 0.0, den_y = 0.0;
  size_t scoreable = 0;
  for (const auto& [id, w] : weights.rows) {
    const auto v = value_map.value(labels.at(id));
    if (!v) continue;  // excluded from numerator and denominator
    ++scoreable;
    const double contribution = w.direction * w.magnitude * (*v);
    const double normalizer = w.magnitude * vmax;
    if (w.axis == Axis::EconomicX) {
      num_x += contribution;
      den_x += normalizer;
    } else {
      num_y += contribution;
      den_y += normalizer;
    }
  }
  PCTCoordinates coords;
  coords.coverage = weights.rows.empty()
                        ? 0.0
                        : static_cast<double>(scoreable) / static_cast<double>(weights.rows.size());
  coords.complete = den_x > 0.0 && den_y > 0.0;
  coords.x = den_x > 0.0 ? 10.0 * num_x / den_x : 0.0;
  coords.y = den_y > 0.0 ? 10.0 * num_y / den_y : 0.0;
  coords.x = std::clamp(coords.x, -10.0, 10.0);
  coords.y = std::clamp(coords.y, -10.0, 10.0);
  return coords;
}

PctMatrix score_matrix(const std::vector<ResponseRecord>& records,
                       const std::map<std::string, StanceRecord>& stances,
                       const AxisWeightTable& weights, const StanceValueMap& value_map) {
  using CellKey = std::tuple<std::string, std::string, std::string, int, std::string>;
  std::map<CellKey, std::map<int, StanceLabel>> cells;
  for (const auto& r : records) {
    const CellKey key{r.model_id, r.persona_category, r.persona_value, r.instruction_id,
                      to_string(r.setting)};
    auto& labels = cells[key];
    const auto it = stances.find(r.record_id);
    labels[r.proposition_id] =
        it == stances.end() ? StanceLabel::None : it->second.label;
  }

  PctMatrix matrix;
  for (auto& [key, labels] : cells) {
    // Propositions not asked in this run score as None.
    std::map<int, StanceLabel> full;
    size_t n_scoreable = 0;
    for (const auto& [id, w] : weights.rows) {
      const auto it = labels.find(id);
      full[id] = it == labels.end() ? StanceLabel::None : it->second;
      if (value_map.value(full[id])) ++n_scoreable;
    }
    PctCell cell;
    cell.model_id = std::get<0>(key);
    cell.persona_category = std::get<1>(key);
    cell.persona_value = std::get<2>(key);
    cell.instruction_id = std::get<3>(key);
    cell.setting = setting_from_string(std::get<4>(key));
    cell.coords = score(full, weights, value_map);
    cell.n_scoreable = n_scoreable;
    if (n_scoreable == 0) ++matrix.flagged_empty_cells;
    matrix.cells.push_back(std::move(cell));
  }
  std::sort(matrix.cells.begin(), matrix.cells.end(), [](const PctCell& a, const PctCell& b) {
    return std::tie(a.model_id, a.persona_category, a.persona_value, a.instruction_id) <
           std::tie(b.model_id, b.persona_category, b.persona_value, b.instruction_id);
  });

  // Per-persona dispersion over instruction variants, one summary per setting.
  using SummaryKey = std::tuple<std::string, std::string, std::string, std::string>;
  std::map<SummaryKey, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& cell : matrix.cells) {
    const SummaryKey key{cell.model_id, cell.persona_category, cell.persona_value,
                         to_string(cell.setting)};
    groups[key].first.push_back(cell.coords.x);
    groups[key].second.push_back(cell.coords.y);
  }
  for (const auto& [key, xy] : groups) {
    PctPersonaSummary s;
    s.model_id = std::get<0>(key);
    s.persona_category = std::get<1>(key);
    s.persona_value = std::get<2>(key);
    s.setting = setting_from_string(std::get<3>(key));
    s.n_cells = xy.first.size();
    double sum_x = 0.0, sum_y = 0.0;
    for (double v : xy.first) sum_x += v;
    for (double v : xy.second) sum_y += v;
    s.mean_x = sum_x / static_cast<double>(s.n_cells);
    s.mean_y = sum_y / static_cast<double>(s.n_cells);
    s.stddev_x = sample_stddev(xy.first);
    s.stddev_y = sample_stddev(xy.second);
    matrix.summaries.push_back(std::move(s));
  }
  return matrix;
}

}  // namespace tropeforge
