#include "tropeforge/survey.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "tropeforge/errors.hpp"
#include "tropeforge/util.hpp"

namespace tropeforge {

namespace {

using nlohmann::json;

constexpr const char* kSlotMarker = "{proposition}";

json parse_json_file(const std::filesystem::path& path, const char* what) {
  if (!std::filesystem::exists(path)) {
    throw IoError(std::string("missing ") + what + " file: " + path.string());
  }
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("cannot parse ") + what + " file " +
                          path.string() + ": " + e.what());
  }
  return j;
}

// The default survey transcribes a fixed six-domain questionnaire; the
// expected per-category sizes are part of the file contract.
const std::map<PropositionCategory, size_t> kExpectedCategorySizes = {
    {PropositionCategory::CountryWorld, 7},  {PropositionCategory::Economy, 14},
    {PropositionCategory::PersonalSocial, 18}, {PropositionCategory::WiderSociety, 12},
    {PropositionCategory::Religion, 5},      {PropositionCategory::Sex, 6},
};

constexpr size_t kExpectedPropositions = 62;
constexpr size_t kExpectedPersonas = 21;
constexpr size_t kExpectedPerSettingInstructions = 10;

}  // namespace

std::string to_string(PropositionCategory c) {
  switch (c) {
    case PropositionCategory::CountryWorld: return "CountryWorld";
    case PropositionCategory::Economy: return "Economy";
    case PropositionCategory::PersonalSocial: return "PersonalSocial";
    case PropositionCategory::WiderSociety: return "WiderSociety";
    case PropositionCategory::Religion: return "Religion";
    case PropositionCategory::Sex: return "Sex";
  }
  return "?";
}

PropositionCategory proposition_category_from_string(const std::string& s) {
  if (s == "CountryWorld") return PropositionCategory::CountryWorld;
  if (s == "Economy") return PropositionCategory::Economy;
  if (s == "PersonalSocial") return PropositionCategory::PersonalSocial;
  if (s == "WiderSociety") return PropositionCategory::WiderSociety;
  if (s == "Religion") return PropositionCategory::Religion;
  if (s == "Sex") return PropositionCategory::Sex;
  throw ValidationError("unknown proposition category: " + s);
}

std::string to_string(PersonaCategory c) {
  switch (c) {
    case PersonaCategory::Gender: return "Gender";
    case PersonaCategory::PoliticalOrientation: return "PoliticalOrientation";
    case PersonaCategory::Class: return "Class";
    case PersonaCategory::Age: return "Age";
    case PersonaCategory::Nation: return "Nation";
    case PersonaCategory::Base: return "Base";
  }
  return "?";
}

PersonaCategory persona_category_from_string(const std::string& s) {
  if (s == "Gender") return PersonaCategory::Gender;
  if (s == "PoliticalOrientation") return PersonaCategory::PoliticalOrientation;
  if (s == "Class") return PersonaCategory::Class;
  if (s == "Age") return PersonaCategory::Age;
  if (s == "Nation") return PersonaCategory::Nation;
  if (s == "Base") return PersonaCategory::Base;
  throw ValidationError("unknown persona category: " + s);
}

std::string to_string(Setting s) {
  return s == Setting::Closed ? "Closed" : "Open";
}

Setting setting_from_string(const std::string& s) {
  if (s == "Closed" || s == "closed") return Setting::Closed;
  if (s == "Open" || s == "open") return Setting::Open;
  throw ValidationError("unknown setting: " + s);
}

const Proposition* SurveyConfig::find_proposition(int id) const {
  for (const auto& p : propositions)
    if (p.id == id) return &p;
  return nullptr;
}

const InstructionTemplate* SurveyConfig::find_instruction(int id) const {
  for (const auto& t : instructions)
    if (t.id == id) return &t;
  return nullptr;
}

SurveyConfig load_survey(const std::filesystem::path& propositions_path,
                         const std::filesystem::path& personas_path,
                         const std::filesystem::path& instructions_path) {
  SurveyConfig survey;

  // --- propositions ---
  const json props = parse_json_file(propositions_path, "propositions");
  if (!props.is_object() || !props.contains("propositions")) {
    throw ValidationError("propositions file must contain a 'propositions' array");
  }
  for (const auto& row : props.at("propositions")) {
    Proposition p;
    p.id = row.at("id").get<int>();
    p.text = row.at("text").get<std::string>();
    p.category = proposition_category_from_string(row.at("category").get<std::string>());
    if (p.text.empty()) {
      throw ValidationError("empty proposition text, id " + std::to_string(p.id));
    }
    survey.propositions.push_back(std::move(p));
  }
  if (survey.propositions.empty()) throw ValidationError("no propositions");

  std::set<int> seen_ids;
  for (const auto& p : survey.propositions) {
    if (!seen_ids.insert(p.id).second) {
      throw ValidationError("duplicate proposition id " + std::to_string(p.id));
    }
  }
  const int min_id = *seen_ids.begin();
  const int max_id = *seen_ids.rbegin();
  if (min_id != 1 || static_cast<size_t>(max_id) != survey.propositions.size()) {
    throw ValidationError("proposition ids must be contiguous starting at 1");
  }
  if (survey.propositions.size() != kExpectedPropositions) {
    throw ValidationError("proposition count mismatch: expected " +
                          std::to_string(kExpectedPropositions) + ", got " +
                          std::to_string(survey.propositions.size()));
  }
  std::map<PropositionCategory, size_t> category_sizes;
  for (const auto& p : survey.propositions) ++category_sizes[p.category];
  for (const auto& [cat, expected] : kExpectedCategorySizes) {
    const size_t actual = category_sizes.count(cat) ? category_sizes.at(cat) : 0;
    if (actual != expected) {
      throw ValidationError("category count mismatch for " + to_string(cat) +
                            ": expected " + std::to_string(expected) + ", got " +
                            std::to_string(actual));
    }
  }

  // --- personas ---
  const json personas = parse_json_file(personas_path, "personas");
  if (!personas.is_object() || !personas.contains("personas")) {
    throw ValidationError("personas file must contain a 'personas' array");
  }
  bool saw_base = false;
  std::set<std::pair<std::string, std::string>> seen_personas;
  for (const auto& row : personas.at("personas")) {
    PersonaSpec p;
    p.category = persona_category_from_string(row.at("category").get<std::string>());
    p.value = row.value("value", std::string());
    if (!seen_personas.insert({to_string(p.category), p.value}).second) {
      throw ValidationError("duplicate persona (" + to_string(p.category) + ", " +
                            p.value + ")");
    }
    if (p.is_base()) {
      if (!p.value.empty()) throw ValidationError("Base persona must have empty value");
      if (saw_base) throw ValidationError("duplicate Base persona entry");
      saw_base = true;
      survey.base_persona = p;
    } else {
      if (p.value.empty()) {
        throw ValidationError("persona value empty for category " + to_string(p.category));
      }
      survey.personas.push_back(std::move(p));
    }
  }
  if (!saw_base) throw ValidationError("personas file lacks the Base entry");
  if (survey.personas.size() != kExpectedPersonas) {
    throw ValidationError("persona count mismatch: expected " +
                          std::to_string(kExpectedPersonas) + " non-Base values, got " +
                          std::to_string(survey.personas.size()));
  }

  // --- instructions ---
  const json instr = parse_json_file(instructions_path, "instructions");
  if (!instr.is_object() || !instr.contains("instructions")) {
    throw ValidationError("instructions file must contain an 'instructions' array");
  }
  survey.closed_suffix = instr.value("closed_suffix", std::string());
  std::set<int> seen_instruction_ids;
  size_t n_closed = 0, n_open = 0;
  for (const auto& row : instr.at("instructions")) {
    InstructionTemplate t;
    t.id = row.at("id").get<int>();
    t.setting = setting_from_string(row.at("setting").get<std::string>());
    t.text = row.at("text").get<std::string>();
    if (!seen_instruction_ids.insert(t.id).second) {
      throw ValidationError("duplicate instruction id " + std::to_string(t.id));
    }
    size_t first = t.text.find(kSlotMarker);
    if (first == std::string::npos ||
        t.text.find(kSlotMarker, first + 1) != std::string::npos) {
      throw ValidationError("instruction " + std::to_string(t.id) +
                            " must contain exactly one " + kSlotMarker + " slot");
    }
    (t.setting == Setting::Closed ? n_closed : n_open) += 1;
    survey.instructions.push_back(std::move(t));
  }
  if (n_closed != kExpectedPerSettingInstructions ||
      n_open != kExpectedPerSettingInstructions) {
    throw ValidationError("instruction count mismatch: expected 10 Closed and 10 Open, got " +
                          std::to_string(n_closed) + " Closed and " +
                          std::to_string(n_open) + " Open");
  }

  return survey;
}

std::string make_prompt_key(int proposition_id, const PersonaSpec& persona,
                            int instruction_id, Setting setting) {
  const std::string canonical = "prop=" + std::to_string(proposition_id) +
                                "|persona=" + to_string(persona.category) + ":" +
                                persona.value + "|instr=" + std::to_string(instruction_id) +
                                "|setting=" + to_string(setting);
  return to_hex16(fnv1a64(canonical));
}

namespace {

bool instruction_selected(const InstructionTemplate& t, const MatrixFilter& f) {
  if (f.setting && t.setting != *f.setting) return false;
  if (f.instruction_ids &&
      std::find(f.instruction_ids->begin(), f.instruction_ids->end(), t.id) ==
          f.instruction_ids->end()) {
    return false;
  }
  return true;
}

}  // namespace

std::vector<PromptInstance> expand_matrix(const SurveyConfig& survey,
                                          const MatrixFilter& filter) {
  std::vector<const Proposition*> props;
  for (const auto& p : survey.propositions) {
    if (filter.proposition_ids &&
        std::find(filter.proposition_ids->begin(), filter.proposition_ids->end(),
                  p.id) == filter.proposition_ids->end()) {
      continue;
    }
    props.push_back(&p);
  }
  std::vector<const PersonaSpec*> personas;
  for (const auto& p : survey.personas) {
    if (filter.persona_values &&
        std::find(filter.persona_values->begin(), filter.persona_values->end(),
                  p.value) == filter.persona_values->end()) {
      continue;
    }
    personas.push_back(&p);
  }
  std::vector<const InstructionTemplate*> instructions;
  for (const auto& t : survey.instructions) {
    if (instruction_selected(t, filter)) instructions.push_back(&t);
  }

  if (props.empty() || instructions.empty() || (personas.empty() && !filter.include_base)) {
    throw ValidationError("empty selection after filtering");
  }

  std::vector<PromptInstance> out;
  out.reserve(props.size() * (personas.size() + (filter.include_base ? 1 : 0)) *
              instructions.size());
  std::unordered_set<std::string> keys;

  auto emit = [&](const Proposition& prop, const PersonaSpec& persona,
                  const InstructionTemplate& instr) {
    PromptInstance inst;
    inst.proposition_id = prop.id;
    inst.persona = persona;
    inst.instruction_id = instr.id;
    inst.setting = instr.setting;
    inst.prompt_key = make_prompt_key(prop.id, persona, instr.id, instr.setting);
    if (!keys.insert(inst.prompt_key).second) {
      throw ValidationError("prompt_key collision on " + inst.prompt_key);
    }
    out.push_back(std::move(inst));
  };

  for (const Proposition* prop : props) {
    for (const PersonaSpec* persona : personas) {
      for (const InstructionTemplate* instr : instructions) {
        emit(*prop, *persona, *instr);
      }
    }
  }
  if (filter.include_base) {
    for (const Proposition* prop : props) {
      for (const InstructionTemplate* instr : instructions) {
        emit(*prop, survey.base_persona, *instr);
      }
    }
  }
  return out;
}

std::string render_prompt(const PromptInstance& instance, const SurveyConfig& survey) {
  const Proposition* prop = survey.find_proposition(instance.proposition_id);
  if (!prop) {
    throw ValidationError("prompt references unknown proposition " +
                          std::to_string(instance.proposition_id));
  }
  const InstructionTemplate* instr = survey.find_instruction(instance.instruction_id);
  if (!instr) {
    throw ValidationError("prompt references unknown instruction " +
                          std::to_string(instance.instruction_id));
  }
  if (instr->setting != instance.setting) {
    throw ValidationError("instance setting does not match instruction " +
                          std::to_string(instance.instruction_id));
  }

  std::string text;
  if (!instance.persona.is_base()) {
    text += "Please follow all instructions from the perspective of a person who is " +
            instance.persona.value + ". ";
  }
  text += "Please write all responses in English. ";
  text += replace_all(instr->text, "{proposition}", prop->text);
  if (instance.setting == Setting::Closed && !survey.closed_suffix.empty()) {
    text += survey.closed_suffix;
  }
  return text;
}

}  // namespace tropeforge
