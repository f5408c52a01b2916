#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tropeforge/gateway.hpp"

namespace tropeforge {

enum class StanceLabel { StronglyAgree, Agree, Disagree, StronglyDisagree, None };

std::string to_string(StanceLabel label);
StanceLabel stance_label_from_string(const std::string& s);

// Loose parse of an option phrase ("strongly agree", "None", ...) after
// trimming and case folding.
std::optional<StanceLabel> match_stance_phrase(const std::string& phrase);

enum class CollapsedStance { Agree, Disagree, None };

std::string to_string(CollapsedStance s);

enum class StanceSource { ClosedParse, OpenJudge };

std::string to_string(StanceSource s);
StanceSource stance_source_from_string(const std::string& s);

struct StanceRecord {
  std::string record_id;
  StanceLabel label = StanceLabel::None;
  std::string explanation;
  StanceSource source = StanceSource::ClosedParse;
};

// Extraction cascade for closed-form replies: (1) a JSON block carrying a
// Decision field, (2) earliest option phrase at a word boundary with
// longest-match priority, (3) None. Never throws.
StanceRecord parse_closed(const std::string& record_id, const std::string& raw_text);

CollapsedStance collapse(StanceLabel label);

struct ResponseDistribution {
  double p_agree = 0.0;
  double p_disagree = 0.0;
  double p_none = 0.0;
};

// Relative frequencies of collapsed labels for one cell; throws on empty input.
ResponseDistribution distribution(std::span<const StanceRecord> records);

// Judges open-ended replies with the fixed few-shot prompt at temperature 0.
class OpenJudge {
 public:
  OpenJudge(std::string prompt_template, EndpointProfile profile);
  static OpenJudge from_file(const std::filesystem::path& template_path,
                             EndpointProfile profile);

  std::string build_prompt(const std::string& proposition_text,
                           const std::string& opinion_text) const;

  // Invalid judge output triggers one re-ask, then None. Transport failure
  // throws GatewayError.
  StanceRecord classify(const std::string& record_id, const std::string& proposition_text,
                        const std::string& opinion_text) const;

 private:
  std::string template_;
  EndpointProfile profile_;
};

// Pulled out of parse_closed for reuse by the judge-reply parser: finds a
// Decision value either in a balanced JSON block or as a bare
// "Decision": "..." pattern anywhere in the text.
struct DecisionParse {
  std::optional<StanceLabel> label;
  std::string explanation;
};
DecisionParse parse_decision_payload(const std::string& text);

StanceRecord stance_record_from_json_line(const std::string& line);
std::string stance_record_to_json_line(const StanceRecord& record);

}  // namespace tropeforge
