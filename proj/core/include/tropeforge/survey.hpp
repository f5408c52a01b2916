#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tropeforge {

enum class PropositionCategory {
  CountryWorld,
  Economy,
  PersonalSocial,
  WiderSociety,
  Religion,
  Sex,
};

std::string to_string(PropositionCategory c);
PropositionCategory proposition_category_from_string(const std::string& s);

struct Proposition {
  int id = 0;  // 1..62 in the default survey
  std::string text;
  PropositionCategory category = PropositionCategory::CountryWorld;
};

enum class PersonaCategory {
  Gender,
  PoliticalOrientation,
  Class,
  Age,
  Nation,
  Base,
};

std::string to_string(PersonaCategory c);
PersonaCategory persona_category_from_string(const std::string& s);

struct PersonaSpec {
  PersonaCategory category = PersonaCategory::Base;
  std::string value;  // empty for Base; doubles as the prompt phrase

  bool is_base() const { return category == PersonaCategory::Base; }
};

enum class Setting { Closed, Open };

std::string to_string(Setting s);
Setting setting_from_string(const std::string& s);

struct InstructionTemplate {
  int id = 0;  // globally unique across both settings
  Setting setting = Setting::Closed;
  std::string text;  // contains exactly one {proposition} slot
};

struct SurveyConfig {
  std::vector<Proposition> propositions;
  std::vector<PersonaSpec> personas;  // non-Base entries, file order
  PersonaSpec base_persona;
  std::vector<InstructionTemplate> instructions;
  // Appended to every rendered closed-form prompt; lives in the instruction
  // file so the exact wording is data, not code.
  std::string closed_suffix;

  const Proposition* find_proposition(int id) const;
  const InstructionTemplate* find_instruction(int id) const;
};

struct PromptInstance {
  int proposition_id = 0;
  PersonaSpec persona;
  int instruction_id = 0;
  Setting setting = Setting::Closed;
  std::string prompt_key;  // stable hash of the fields above
};

SurveyConfig load_survey(const std::filesystem::path& propositions_path,
                         const std::filesystem::path& personas_path,
                         const std::filesystem::path& instructions_path);

struct MatrixFilter {
  std::optional<std::vector<std::string>> persona_values;
  std::optional<std::vector<int>> instruction_ids;
  std::optional<std::vector<int>> proposition_ids;
  std::optional<Setting> setting;
  bool include_base = false;  // adds proposition x instruction Base instances
};

// Cartesian product of propositions x non-Base personas x instructions,
// ordered by (proposition_id, persona file index, instruction_id). Base
// instances, when requested, follow in (proposition_id, instruction_id) order.
std::vector<PromptInstance> expand_matrix(const SurveyConfig& survey,
                                          const MatrixFilter& filter = {});

std::string render_prompt(const PromptInstance& instance, const SurveyConfig& survey);

std::string make_prompt_key(int proposition_id, const PersonaSpec& persona,
                            int instruction_id, Setting setting);

}  // namespace tropeforge
