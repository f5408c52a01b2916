#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tropeforge/survey.hpp"

namespace tropeforge {

struct ResponseRecord {
  std::string record_id;  // prompt_key + ":" + model_id
  std::string model_id;
  int proposition_id = 0;
  std::string persona_category;
  std::string persona_value;  // empty for Base
  int instruction_id = 0;
  Setting setting = Setting::Closed;
  std::string raw_text;
  std::string created_at;
};

std::string make_record_id(const std::string& prompt_key, const std::string& model_id);

struct DatasetManifest {
  std::string source;  // "generated" or "imported"
  int schema_version = 1;
  std::size_t total = 0;
  std::map<std::string, std::size_t> per_model;
  std::map<std::string, std::size_t> per_setting;
  std::size_t rejected = 0;  // import rows that failed mapping
  std::vector<std::string> caveats;
};

struct RecordFilter {
  std::optional<std::string> model_id;
  std::optional<std::string> persona_category;
  std::optional<std::string> persona_value;
  std::optional<int> proposition_id;
  std::optional<int> instruction_id;
  std::optional<Setting> setting;
};

// Append-only JSONL store of responses keyed by record_id. Single writer,
// any number of readers; appends are flushed line by line.
class ResponseStore {
 public:
  // Loads any existing records from `file`. When a survey is supplied, every
  // appended record is validated against it (id ranges, setting consistency).
  explicit ResponseStore(std::filesystem::path file, const SurveyConfig* survey = nullptr);

  // Upsert by record_id: existing ids are skipped. Returns the number of
  // records actually appended.
  std::size_t append_records(const std::vector<ResponseRecord>& records);

  bool contains(const std::string& record_id) const;
  std::size_t size() const { return records_.size(); }

  // Deterministic: results sorted by record_id.
  std::vector<ResponseRecord> query(const RecordFilter& filter = {}) const;

  DatasetManifest manifest(const std::string& source = "generated") const;

  const std::filesystem::path& file() const { return file_; }

 private:
  void validate(const ResponseRecord& record) const;
  void append_line(const std::string& line);

  std::filesystem::path file_;
  const SurveyConfig* survey_;
  std::ofstream appender_;  // single-writer append handle, opened lazily
  std::vector<ResponseRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

ResponseRecord response_record_from_json_line(const std::string& line);
std::string response_record_to_json_line(const ResponseRecord& record);

// Maps the published dataset's external schema onto ResponseRecord via a
// declarative column-mapping file; rows that fail to map are logged and
// counted, not fatal.
DatasetManifest import_published(const std::filesystem::path& dataset_path,
                                 const std::filesystem::path& mapping_path,
                                 ResponseStore& store);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace tropeforge
