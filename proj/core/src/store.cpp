#include "tropeforge/store.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "tropeforge/errors.hpp"
#include "tropeforge/util.hpp"

namespace tropeforge {

namespace {

using nlohmann::json;

}  // namespace

std::string make_record_id(const std::string& prompt_key, const std::string& model_id) {
  return prompt_key + ":" + model_id;
}

ResponseRecord response_record_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  ResponseRecord r;
  r.record_id = j.at("record_id").get<std::string>();
  r.model_id = j.at("model_id").get<std::string>();
  r.proposition_id = j.at("proposition_id").get<int>();
  r.persona_category = j.at("persona_category").get<std::string>();
  r.persona_value = j.value("persona_value", std::string());
  r.instruction_id = j.at("instruction_id").get<int>();
  r.setting = setting_from_string(j.at("setting").get<std::string>());
  r.raw_text = j.at("raw_text").get<std::string>();
  r.created_at = j.value("created_at", std::string());
  return r;
}

std::string response_record_to_json_line(const ResponseRecord& r) {
  const json j = {
      {"record_id", r.record_id},
      {"model_id", r.model_id},
      {"proposition_id", r.proposition_id},
      {"persona_category", r.persona_category},
      {"persona_value", r.persona_value},
      {"instruction_id", r.instruction_id},
      {"setting", to_string(r.setting)},
      {"raw_text", r.raw_text},
      {"created_at", r.created_at},
  };
  return j.dump();
}

ResponseStore::ResponseStore(std::filesystem::path file, const SurveyConfig* survey)
    : file_(std::move(file)), survey_(survey) {
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  if (!std::filesystem::exists(file_)) return;
  if (const std::size_t dropped = repair_jsonl_tail(file_)) {
    std::cerr << "store: dropped " << dropped << " partial trailing byte(s) from "
              << file_.string() << " (interrupted writer)\n";
  }
  std::ifstream in(file_, std::ios::binary);
  if (!in) throw IoError("cannot open store file: " + file_.string());
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ResponseRecord r;
    try {
      r = response_record_from_json_line(line);
    } catch (const std::exception& e) {
      throw ValidationError("corrupt store line " + std::to_string(line_no) + " in " +
                            file_.string() + ": " + e.what());
    }
    // First occurrence wins; duplicate lines can only come from an
    // interrupted writer and are ignored on load.
    if (index_.count(r.record_id)) continue;
    index_.emplace(r.record_id, records_.size());
    records_.push_back(std::move(r));
  }
}

void ResponseStore::validate(const ResponseRecord& r) const {
  if (r.record_id.empty()) throw ValidationError("record_id empty");
  if (r.model_id.empty()) throw ValidationError("model_id empty for " + r.record_id);
  if (r.proposition_id <= 0) {
    throw ValidationError("proposition_id out of range for " + r.record_id);
  }
  if (survey_) {
    if (!survey_->find_proposition(r.proposition_id)) {
      throw ValidationError("record " + r.record_id + " references unknown proposition " +
                            std::to_string(r.proposition_id));
    }
    const InstructionTemplate* instr = survey_->find_instruction(r.instruction_id);
    if (!instr) {
      throw ValidationError("record " + r.record_id + " references unknown instruction " +
                            std::to_string(r.instruction_id));
    }
    if (instr->setting != r.setting) {
      throw ValidationError("record " + r.record_id + " setting " + to_string(r.setting) +
                            " does not match instruction " + std::to_string(r.instruction_id) +
                            " (" + to_string(instr->setting) + ")");
    }
  }
}

void ResponseStore::append_line(const std::string& line) {
  if (!appender_.is_open()) {
    appender_.open(file_, std::ios::binary | std::ios::app);
    if (!appender_) throw IoError("cannot append to " + file_.string());
  }
  appender_ << line << '\n';
  appender_.flush();
  if (!appender_) throw IoError("short write to " + file_.string());
}

std::size_t ResponseStore::append_records(const std::vector<ResponseRecord>& records) {
  std::size_t added = 0;
  for (const auto& r : records) {
    validate(r);
    if (index_.count(r.record_id)) continue;  // idempotent re-append
    append_line(response_record_to_json_line(r));
    index_.emplace(r.record_id, records_.size());
    records_.push_back(r);
    ++added;
  }
  return added;
}

bool ResponseStore::contains(const std::string& record_id) const {
  return index_.count(record_id) > 0;
}

std::vector<ResponseRecord> ResponseStore::query(const RecordFilter& f) const {
  std::vector<ResponseRecord> out;
  for (const auto& r : records_) {
    if (f.model_id && r.model_id != *f.model_id) continue;
    if (f.persona_category && r.persona_category != *f.persona_category) continue;
    if (f.persona_value && r.persona_value != *f.persona_value) continue;
    if (f.proposition_id && r.proposition_id != *f.proposition_id) continue;
    if (f.instruction_id && r.instruction_id != *f.instruction_id) continue;
    if (f.setting && r.setting != *f.setting) continue;
    out.push_back(r);
  }
  std::sort(out.begin(), out.end(),
            [](const ResponseRecord& a, const ResponseRecord& b) {
              return a.record_id < b.record_id;
            });
  return out;
}

DatasetManifest ResponseStore::manifest(const std::string& source) const {
  DatasetManifest m;
  m.source = source;
  m.total = records_.size();
  for (const auto& r : records_) {
    ++m.per_model[r.model_id];
    ++m.per_setting[to_string(r.setting)];
  }
  return m;
}

DatasetManifest import_published(const std::filesystem::path& dataset_path,
                                 const std::filesystem::path& mapping_path,
                                 ResponseStore& store) {
  if (!std::filesystem::exists(dataset_path)) {
    throw IoError("dataset file not found: " + dataset_path.string());
  }
  json mapping;
  try {
    mapping = json::parse(read_text_file(mapping_path));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid mapping file: ") + e.what());
  }
  const int mapping_version = mapping.value("schema_version", 0);
  if (mapping_version != 1) {
    throw ValidationError("unmappable mapping schema version " +
                          std::to_string(mapping_version));
  }
  const json& columns = mapping.at("columns");
  const auto col = [&](const char* field) {
    return columns.at(field).get<std::string>();
  };
  std::map<std::string, Setting> setting_values;
  for (const auto& [value, name] : mapping.at("setting_values").items()) {
    setting_values[value] = setting_from_string(name.get<std::string>());
  }

  std::ifstream in(dataset_path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file: " + dataset_path.string());

  std::vector<ResponseRecord> batch;
  size_t rejected = 0;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json row = json::parse(line);
      ResponseRecord r;
      r.model_id = row.at(col("model_id")).get<std::string>();
      r.proposition_id = row.at(col("proposition_id")).get<int>();
      r.persona_category = row.at(col("persona_category")).get<std::string>();
      r.persona_value = row.value(col("persona_value"), std::string());
      r.instruction_id = row.at(col("instruction_id")).get<int>();
      const std::string raw_setting = row.at(col("setting")).get<std::string>();
      if (!setting_values.count(raw_setting)) {
        throw ValidationError("unknown setting value '" + raw_setting + "'");
      }
      r.setting = setting_values.at(raw_setting);
      r.raw_text = row.at(col("raw_text")).get<std::string>();
      r.created_at = row.value(col("created_at"), std::string());
      PersonaSpec persona;
      persona.category = persona_category_from_string(r.persona_category);
      persona.value = r.persona_value;
      r.record_id = make_record_id(
          make_prompt_key(r.proposition_id, persona, r.instruction_id, r.setting),
          r.model_id);
      batch.push_back(std::move(r));
    } catch (const std::exception& e) {
      ++rejected;
      std::cerr << "import: skipping row " << line_no << ": " << e.what() << "\n";
    }
  }
  store.append_records(batch);

  DatasetManifest m = store.manifest("imported");
  m.rejected = rejected;
  if (rejected == 0 && store.size() == 0) {
    m.caveats.push_back("empty dataset file: 0 records imported");
    std::cerr << "import: warning: " << m.caveats.back() << "\n";
  }
  m.caveats.push_back(
      "endpoint-level reproduction of the original model checkpoints is outside "
      "this artifact's control");
  return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  json j = {
      {"source", m.source},
      {"schema_version", m.schema_version},
      {"total", m.total},
      {"per_model", m.per_model},
      {"per_setting", m.per_setting},
      {"rejected", m.rejected},
      {"caveats", m.caveats},
  };
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace tropeforge
