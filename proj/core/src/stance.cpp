#include "tropeforge/stance.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include <json.hpp>

#include "tropeforge/errors.hpp"
#include "tropeforge/util.hpp"

namespace tropeforge {

namespace {

using nlohmann::json;

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

// Option phrases in longest-match priority order.
struct OptionPhrase {
  const char* phrase;
  StanceLabel label;
};
constexpr std::array<OptionPhrase, 4> kOptions = {{
    {"strongly disagree", StanceLabel::StronglyDisagree},
    {"strongly agree", StanceLabel::StronglyAgree},
    {"disagree", StanceLabel::Disagree},
    {"agree", StanceLabel::Agree},
}};

std::optional<StanceLabel> scan_option_phrases(const std::string& raw) {
  const std::string text = to_lower(raw);
  for (size_t i = 0; i < text.size(); ++i) {
    if (i > 0 && is_word_char(text[i - 1])) continue;  // not a word start
    for (const auto& option : kOptions) {
      const size_t len = std::strlen(option.phrase);
      if (text.compare(i, len, option.phrase) != 0) continue;
      if (i + len < text.size() && is_word_char(text[i + len])) continue;
      return option.label;
    }
  }
  return std::nullopt;
}

// Extracts balanced {...} blocks, tracking strings and escapes.
std::vector<std::string> json_blocks(const std::string& text) {
  std::vector<std::string> blocks;
  for (size_t start = 0; start < text.size(); ++start) {
    if (text[start] != '{') continue;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}') {
        if (--depth == 0) {
          blocks.push_back(text.substr(start, i - start + 1));
          start = i;  // continue after this block
          break;
        }
      }
    }
  }
  return blocks;
}

// Bare "Decision": "<value>" scan for replies that are not valid JSON
// (truncated blocks, the missing-comma format some models copy verbatim).
std::optional<std::string> scan_decision_value(const std::string& text) {
  const std::string key = "\"Decision\"";
  size_t pos = text.find(key);
  if (pos == std::string::npos) return std::nullopt;
  pos += key.size();
  while (pos < text.size() && (std::isspace(static_cast<unsigned char>(text[pos])) ||
                               text[pos] == ':')) {
    ++pos;
  }
  if (pos >= text.size() || text[pos] != '"') return std::nullopt;
  const size_t end = text.find('"', pos + 1);
  if (end == std::string::npos) return std::nullopt;
  return text.substr(pos + 1, end - pos - 1);
}

}  // namespace

std::string to_string(StanceLabel label) {
  switch (label) {
    case StanceLabel::StronglyAgree: return "StronglyAgree";
    case StanceLabel::Agree: return "Agree";
    case StanceLabel::Disagree: return "Disagree";
    case StanceLabel::StronglyDisagree: return "StronglyDisagree";
    case StanceLabel::None: return "None";
  }
  return "?";
}

StanceLabel stance_label_from_string(const std::string& s) {
  if (s == "StronglyAgree") return StanceLabel::StronglyAgree;
  if (s == "Agree") return StanceLabel::Agree;
  if (s == "Disagree") return StanceLabel::Disagree;
  if (s == "StronglyDisagree") return StanceLabel::StronglyDisagree;
  if (s == "None") return StanceLabel::None;
  throw ValidationError("unknown stance label: " + s);
}

std::optional<StanceLabel> match_stance_phrase(const std::string& phrase) {
  std::string norm = to_lower(trim(phrase));
  // strip trailing punctuation
  while (!norm.empty() && !is_word_char(norm.back())) norm.pop_back();
  if (norm == "strongly agree") return StanceLabel::StronglyAgree;
  if (norm == "agree") return StanceLabel::Agree;
  if (norm == "disagree") return StanceLabel::Disagree;
  if (norm == "strongly disagree") return StanceLabel::StronglyDisagree;
  if (norm == "none") return StanceLabel::None;
  return std::nullopt;
}

std::string to_string(CollapsedStance s) {
  switch (s) {
    case CollapsedStance::Agree: return "Agree";
    case CollapsedStance::Disagree: return "Disagree";
    case CollapsedStance::None: return "None";
  }
  return "?";
}

std::string to_string(StanceSource s) {
  return s == StanceSource::ClosedParse ? "ClosedParse" : "OpenJudge";
}

StanceSource stance_source_from_string(const std::string& s) {
  if (s == "ClosedParse") return StanceSource::ClosedParse;
  if (s == "OpenJudge") return StanceSource::OpenJudge;
  throw ValidationError("unknown stance source: " + s);
}

DecisionParse parse_decision_payload(const std::string& text) {
  DecisionParse out;
  for (const auto& block : json_blocks(text)) {
    json j = json::parse(block, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("Decision")) continue;
    if (!j.at("Decision").is_string()) continue;
    out.label = match_stance_phrase(j.at("Decision").get<std::string>());
    if (j.contains("Explanation") && j.at("Explanation").is_string()) {
      out.explanation = j.at("Explanation").get<std::string>();
    }
    if (out.label) return out;
  }
  if (const auto value = scan_decision_value(text)) {
    out.label = match_stance_phrase(*value);
    if (out.label) return out;
  }
  out.label = std::nullopt;
  return out;
}

StanceRecord parse_closed(const std::string& record_id, const std::string& raw_text) {
  StanceRecord record;
  record.record_id = record_id;
  record.source = StanceSource::ClosedParse;
  record.label = StanceLabel::None;

  const DecisionParse decision = parse_decision_payload(raw_text);
  if (decision.label) {
    record.label = *decision.label;
    record.explanation = decision.explanation;
    return record;
  }
  if (const auto label = scan_option_phrases(raw_text)) {
    record.label = *label;
  }
  return record;
}

CollapsedStance collapse(StanceLabel label) {
  switch (label) {
    case StanceLabel::StronglyAgree:
    case StanceLabel::Agree:
      return CollapsedStance::Agree;
    case StanceLabel::StronglyDisagree:
    case StanceLabel::Disagree:
      return CollapsedStance::Disagree;
    case StanceLabel::None:
      return CollapsedStance::None;
  }
  return CollapsedStance::None;
}

ResponseDistribution distribution(std::span<const StanceRecord> records) {
  if (records.empty()) throw ValidationError("empty cell");
  size_t agree = 0, disagree = 0, none = 0;
  for (const auto& r : records) {
    switch (collapse(r.label)) {
      case CollapsedStance::Agree: ++agree; break;
      case CollapsedStance::Disagree: ++disagree; break;
      case CollapsedStance::None: ++none; break;
    }
  }
  const double n = static_cast<double>(records.size());
  return ResponseDistribution{
      .p_agree = static_cast<double>(agree) / n,
      .p_disagree = static_cast<double>(disagree) / n,
      .p_none = static_cast<double>(none) / n,
  };
}

OpenJudge::OpenJudge(std::string prompt_template, EndpointProfile profile)
    : template_(std::move(prompt_template)), profile_(std::move(profile)) {
  if (template_.find("<Proposition>") == std::string::npos ||
      template_.find("<Opinion>") == std::string::npos) {
    throw ValidationError("judge template lacks <Proposition>/<Opinion> placeholders");
  }
}

OpenJudge OpenJudge::from_file(const std::filesystem::path& template_path,
                               EndpointProfile profile) {
  return OpenJudge(read_text_file(template_path), std::move(profile));
}

std::string OpenJudge::build_prompt(const std::string& proposition_text,
                                    const std::string& opinion_text) const {
  std::string prompt = template_;
  prompt = replace_all(std::move(prompt), "<Proposition>", proposition_text);
  prompt = replace_all(std::move(prompt), "<Opinion>", opinion_text);
  return prompt;
}

StanceRecord OpenJudge::classify(const std::string& record_id,
                                 const std::string& proposition_text,
                                 const std::string& opinion_text) const {
  if (trim(opinion_text).empty()) {
    throw ValidationError("opinion_text empty for " + record_id);
  }
  const std::string prompt = build_prompt(proposition_text, opinion_text);
  StanceRecord record;
  record.record_id = record_id;
  record.source = StanceSource::OpenJudge;
  record.label = StanceLabel::None;

  for (int ask = 0; ask < 2; ++ask) {  // one re-ask on invalid output
    const CompletionResult result =
        complete(CompletionTask{.prompt_key = record_id, .text = prompt}, profile_);
    if (result.status != CompletionStatus::Ok) {
      throw GatewayError("judge endpoint failed for " + record_id + ": " + result.error);
    }
    const DecisionParse decision = parse_decision_payload(result.text);
    if (decision.label) {
      record.label = *decision.label;
      record.explanation = decision.explanation;
      return record;
    }
  }
  return record;
}

StanceRecord stance_record_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  StanceRecord r;
  r.record_id = j.at("record_id").get<std::string>();
  r.label = stance_label_from_string(j.at("label").get<std::string>());
  r.explanation = j.value("explanation", std::string());
  r.source = stance_source_from_string(j.at("source").get<std::string>());
  return r;
}

std::string stance_record_to_json_line(const StanceRecord& r) {
  const json j = {
      {"record_id", r.record_id},
      {"label", to_string(r.label)},
      {"explanation", r.explanation},
      {"source", to_string(r.source)},
  };
  return j.dump();
}

}  // namespace tropeforge
