#include "tropeforge/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "tropeforge/errors.hpp"
#include "tropeforge/util.hpp"

namespace tropeforge {

namespace {

using nlohmann::json;

bool trope_passes(const Trope& t, const TropeReportFilter& f) {
  if (f.proposition_id && t.proposition_id != *f.proposition_id) return false;
  if (f.side && t.side != *f.side) return false;
  if (f.model_id && !t.per_model_counts.count(*f.model_id)) return false;
  return true;
}

}  // namespace

std::string trope_report_md(const std::vector<Trope>& tropes,
                            const std::map<std::string, std::string>& model_by_record,
                            const TropeReportFilter& filter) {
  std::vector<const Trope*> selected;
  for (const auto& t : tropes) {
    if (trope_passes(t, filter)) selected.push_back(&t);
  }
  std::sort(selected.begin(), selected.end(), [](const Trope* a, const Trope* b) {
    return std::tie(a->proposition_id, a->side, a->trope_id) <
           std::tie(b->proposition_id, b->side, b->trope_id);
  });

  std::ostringstream out;
  out << "# Trope report\n\n";
  if (selected.empty()) {
    out << "_No tropes._\n";
    return out.str();
  }
  out << selected.size() << " trope(s).\n";
  for (const Trope* t : selected) {
    out << "\n## " << t->paraphrase << "\n\n";
    out << "- trope id: `" << t->trope_id << "`\n";
    out << "- proposition: " << t->proposition_id << " (" << to_string(t->side) << ")\n";
    out << "- representative: " << t->representative_text << "\n";
    out << "- replies assigned: " << t->assigned_record_ids.size() << "\n";
    out << "- per-model sentence counts:";
    for (const auto& [model, count] : t->per_model_counts) {
      out << " " << model << "=" << count;
    }
    out << "\n\n### Constituent sentences\n";
    // Grouped by model, then in (record_id, sentence_index) order.
    std::map<std::string, std::vector<const SentenceUnit*>> by_model;
    for (const auto& u : t->constituents) {
      const auto it = model_by_record.find(u.record_id);
      by_model[it == model_by_record.end() ? "unknown" : it->second].push_back(&u);
    }
    for (auto& [model, units] : by_model) {
      std::sort(units.begin(), units.end(),
                [](const SentenceUnit* a, const SentenceUnit* b) {
                  return std::tie(a->record_id, a->sentence_index) <
                         std::tie(b->record_id, b->sentence_index);
                });
      out << "\n**" << model << "**\n\n";
      for (const SentenceUnit* u : units) {
        out << "- " << u->text << "\n";
      }
    }
  }
  return out.str();
}

std::vector<BubbleDatum> bubble_data(const std::vector<Trope>& tropes,
                                     const SurveyConfig& survey, size_t top_n,
                                     double edge_floor) {
  // Group per-proposition tropes into nodes by representative text identity.
  std::map<std::string, BubbleDatum> nodes;
  std::map<std::string, std::map<std::string, int>> category_counts;  // text -> cat -> n
  for (const auto& t : tropes) {
    auto& node = nodes[t.representative_text];
    node.paraphrase = t.paraphrase;
    node.size += static_cast<int>(t.constituents.size());
    node.propositions.insert(t.proposition_id);
    node.member_trope_ids.push_back(t.trope_id);
    const Proposition* prop = survey.find_proposition(t.proposition_id);
    if (prop) {
      category_counts[t.representative_text][to_string(prop->category)] +=
          static_cast<int>(t.constituents.size());
    }
  }

  std::vector<BubbleDatum> data;
  data.reserve(nodes.size());
  for (auto& [text, node] : nodes) {
    std::sort(node.member_trope_ids.begin(), node.member_trope_ids.end());
    node.trope_id = node.member_trope_ids.front();
    // Dominant category; ties break by the declared category order.
    const auto& counts = category_counts[text];
    int best = -1;
    for (PropositionCategory cat :
         {PropositionCategory::CountryWorld, PropositionCategory::Economy,
          PropositionCategory::PersonalSocial, PropositionCategory::WiderSociety,
          PropositionCategory::Religion, PropositionCategory::Sex}) {
      const auto it = counts.find(to_string(cat));
      if (it != counts.end() && it->second > best) {
        best = it->second;
        node.dominant_category = to_string(cat);
      }
    }
    data.push_back(std::move(node));
  }

  std::sort(data.begin(), data.end(), [](const BubbleDatum& a, const BubbleDatum& b) {
    if (a.size != b.size) return a.size > b.size;
    return a.trope_id < b.trope_id;
  });
  if (data.size() > top_n) data.resize(top_n);

  for (size_t i = 0; i < data.size(); ++i) {
    for (size_t j = 0; j < data.size(); ++j) {
      if (i == j) continue;
      const double weight = jaccard(data[i].propositions, data[j].propositions);
      if (weight > edge_floor) {
        data[i].edges.push_back(BubbleEdge{data[j].trope_id, weight});
      }
    }
    std::sort(data[i].edges.begin(), data[i].edges.end(),
              [](const BubbleEdge& a, const BubbleEdge& b) { return a.other_id < b.other_id; });
  }
  return data;
}

std::string venn_region_key(bool far_left, bool mainstream, bool far_right) {
  std::vector<std::string> parts;
  if (far_left) parts.push_back("FarLeft");
  if (mainstream) parts.push_back("Mainstream");
  if (far_right) parts.push_back("FarRight");
  if (parts.empty()) return "None";
  std::string key = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) key += "+" + parts[i];
  return key;
}

VennDatum venn_data(const std::vector<Trope>& tropes,
                    const std::map<std::string, const ResponseRecord*>& records_by_id,
                    std::optional<PropositionCategory> category_filter,
                    const SurveyConfig* survey) {
  if (category_filter && !survey) {
    throw ValidationError("venn_data category filter requires a survey");
  }
  VennDatum out;
  for (const auto& t : tropes) {
    if (category_filter) {
      const Proposition* prop = survey->find_proposition(t.proposition_id);
      if (!prop || prop->category != *category_filter) continue;
    }
    bool far_left = false, mainstream = false, far_right = false, any = false;
    for (const auto& record_id : t.assigned_record_ids) {
      const auto it = records_by_id.find(record_id);
      if (it == records_by_id.end()) continue;
      const ResponseRecord* r = it->second;
      if (r->persona_category != "PoliticalOrientation") continue;
      any = true;
      if (r->persona_value == "far left") far_left = true;
      else if (r->persona_value == "far right") far_right = true;
      else mainstream = true;  // mainstream left + mainstream right collapsed
    }
    if (!any) {
      ++out.tropes_without_political_provenance;
      continue;
    }
    out.regions[venn_region_key(far_left, mainstream, far_right)].insert(t.trope_id);
  }
  return out;
}

void export_pct_csv(const PctMatrix& matrix, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "model,persona_category,persona_value,instruction_id,setting,x,y,completeness\n";
  for (const auto& c : matrix.cells) {
    out << csv_escape(c.model_id) << ',' << csv_escape(c.persona_category) << ','
        << csv_escape(c.persona_value) << ',' << c.instruction_id << ','
        << to_string(c.setting) << ',' << format_double(c.coords.x) << ','
        << format_double(c.coords.y) << ',' << format_double(c.coords.coverage) << '\n';
  }
  write_text_file(path, out.str());
}

void export_pct_summary_csv(const PctMatrix& matrix, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "model,persona_category,persona_value,setting,mean_x,mean_y,stddev_x,stddev_y,"
         "n_cells\n";
  for (const auto& s : matrix.summaries) {
    out << csv_escape(s.model_id) << ',' << csv_escape(s.persona_category) << ','
        << csv_escape(s.persona_value) << ',' << to_string(s.setting) << ','
        << format_double(s.mean_x) << ',' << format_double(s.mean_y) << ','
        << format_double(s.stddev_x) << ',' << format_double(s.stddev_y) << ','
        << s.n_cells << '\n';
  }
  write_text_file(path, out.str());
}

void export_tvd_csv(const std::vector<TvdRow>& rows, const std::filesystem::path& path) {
  std::vector<TvdRow> sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const TvdRow& a, const TvdRow& b) {
    return std::tie(a.model_id, a.persona_category, a.persona_value) <
           std::tie(b.model_id, b.persona_category, b.persona_value);
  });
  std::ostringstream out;
  out << "model,persona_category,persona_value,mean_tvd,props_used,props_excluded\n";
  for (const auto& r : sorted) {
    out << csv_escape(r.model_id) << ',' << csv_escape(r.persona_category) << ','
        << csv_escape(r.persona_value) << ',' << format_double(r.mean_tvd) << ','
        << r.props_used << ',' << r.props_excluded << '\n';
  }
  write_text_file(path, out.str());
}

void export_regression_csv(const std::vector<RegressionRow>& rows,
                           const std::filesystem::path& path,
                           double significance_threshold) {
  std::vector<RegressionRow> sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const RegressionRow& a, const RegressionRow& b) {
    return std::tie(a.model_id, a.axis) < std::tie(b.model_id, b.axis);
  });
  std::ostringstream out;
  out << "model,axis,level,coefficient,std_error,t_stat,p_value,significant,"
         "reference_category,n_samples,r_squared\n";
  for (const auto& row : sorted) {
    auto emit = [&](const CoefficientEstimate& e) {
      out << csv_escape(row.model_id) << ',' << csv_escape(row.axis) << ','
          << csv_escape(e.level) << ',' << format_double(e.coefficient) << ','
          << format_double(e.std_error) << ',';
      if (e.exact) {
        // Zero-variance sentinel: no finite t/p, excluded from significance.
        out << ",exact,false,";
      } else {
        out << format_double(e.t_stat) << ',' << format_double(e.p_value) << ','
            << (e.p_value < significance_threshold ? "true" : "false") << ',';
      }
      out << csv_escape(row.result.reference_category) << ',' << row.result.n_samples << ','
          << format_double(row.result.r_squared) << '\n';
    };
    emit(row.result.intercept);
    for (const auto& e : row.result.coefficients) emit(e);
  }
  write_text_file(path, out.str());
}

void export_dispersion_csv(const std::vector<DispersionRow>& rows,
                           const std::filesystem::path& path) {
  std::vector<DispersionRow> sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const DispersionRow& a, const DispersionRow& b) {
    return std::tie(a.model_id, a.cell.category, a.cell.proposition_id) <
           std::tie(b.model_id, b.cell.category, b.cell.proposition_id);
  });
  std::ostringstream out;
  out << "model,persona_category,proposition_id,stddev,n_samples,flagged_singleton\n";
  for (const auto& r : sorted) {
    out << csv_escape(r.model_id) << ',' << csv_escape(r.cell.category) << ','
        << r.cell.proposition_id << ','
        << (r.cell.flagged_singleton ? std::string() : format_double(r.cell.stddev)) << ','
        << r.cell.n << ',' << (r.cell.flagged_singleton ? "true" : "false") << '\n';
  }
  write_text_file(path, out.str());
}

void export_tropes_csv(const std::vector<Trope>& tropes, const std::filesystem::path& path) {
  std::vector<const Trope*> sorted;
  for (const auto& t : tropes) sorted.push_back(&t);
  std::sort(sorted.begin(), sorted.end(), [](const Trope* a, const Trope* b) {
    return std::tie(a->proposition_id, a->side, a->trope_id) <
           std::tie(b->proposition_id, b->side, b->trope_id);
  });
  std::ostringstream out;
  out << "trope_id,proposition_id,side,n_sentences,n_replies,paraphrase,representative\n";
  for (const Trope* t : sorted) {
    out << t->trope_id << ',' << t->proposition_id << ',' << to_string(t->side) << ','
        << t->constituents.size() << ',' << t->assigned_record_ids.size() << ','
        << csv_escape(t->paraphrase) << ',' << csv_escape(t->representative_text) << '\n';
  }
  write_text_file(path, out.str());
}

void write_bubble_json(const std::vector<BubbleDatum>& data,
                       const std::filesystem::path& path) {
  json nodes = json::array();
  for (const auto& d : data) {
    json edges = json::array();
    for (const auto& e : d.edges) {
      edges.push_back({{"other_id", e.other_id}, {"weight", e.weight}});
    }
    nodes.push_back({
        {"trope_id", d.trope_id},
        {"paraphrase", d.paraphrase},
        {"size", d.size},
        {"dominant_category", d.dominant_category},
        {"propositions", d.propositions},
        {"member_trope_ids", d.member_trope_ids},
        {"edges", edges},
    });
  }
  write_text_file(path, json{{"schema_version", 1}, {"bubbles", nodes}}.dump(2) + "\n");
}

void write_venn_json(const VennDatum& data, const std::filesystem::path& path) {
  json regions = json::object();
  for (const auto& [key, ids] : data.regions) {
    regions[key] = {{"count", ids.size()}, {"trope_ids", ids}};
  }
  const json j = {
      {"schema_version", 1},
      {"groups", {"FarLeft", "Mainstream", "FarRight"}},
      {"regions", regions},
      {"tropes_without_political_provenance", data.tropes_without_political_provenance},
  };
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace tropeforge
