#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <json.hpp>

#include "helpers.hpp"
#include "tropeforge/errors.hpp"
#include "tropeforge/store.hpp"
#include "tropeforge/util.hpp"

using namespace tropeforge;
using nlohmann::json;

namespace {

ResponseRecord make_record(const SurveyConfig& survey, int prop, const char* persona_value,
                           int instruction, const char* model = "model-a") {
  const InstructionTemplate* instr = survey.find_instruction(instruction);
  REQUIRE(instr != nullptr);
  PersonaSpec persona{PersonaCategory::PoliticalOrientation, persona_value};
  ResponseRecord r;
  r.record_id = make_record_id(make_prompt_key(prop, persona, instruction, instr->setting),
                               model);
  r.model_id = model;
  r.proposition_id = prop;
  r.persona_category = to_string(persona.category);
  r.persona_value = persona_value;
  r.instruction_id = instruction;
  r.setting = instr->setting;
  r.raw_text = "reply for prop " + std::to_string(prop);
  r.created_at = "2024-05-01T00:00:00Z";
  return r;
}

}  // namespace

TEST_CASE("append/query round trip is field-exact and idempotent") {
  const SurveyConfig survey = testutil::default_survey();
  testutil::TempDir tmp("store_roundtrip");
  ResponseStore store(tmp / "responses.jsonl", &survey);

  const ResponseRecord r = make_record(survey, 3, "far right", 2);
  CHECK(store.append_records({r}) == 1);
  CHECK(store.size() == 1);

  SUBCASE("round trip") {
    RecordFilter f;
    f.proposition_id = 3;
    const auto got = store.query(f);
    REQUIRE(got.size() == 1);
    CHECK(got[0].record_id == r.record_id);
    CHECK(got[0].model_id == r.model_id);
    CHECK(got[0].persona_category == r.persona_category);
    CHECK(got[0].persona_value == r.persona_value);
    CHECK(got[0].instruction_id == r.instruction_id);
    CHECK(got[0].setting == r.setting);
    CHECK(got[0].raw_text == r.raw_text);
    CHECK(got[0].created_at == r.created_at);
  }

  SUBCASE("re-appending the same record_id is a no-op") {
    CHECK(store.append_records({r}) == 0);
    CHECK(store.size() == 1);
  }

  SUBCASE("records survive reopening the store file") {
    store.append_records({make_record(survey, 4, "far left", 11)});
    ResponseStore reopened(tmp / "responses.jsonl", &survey);
    CHECK(reopened.size() == 2);
    CHECK(reopened.contains(r.record_id));
  }
}

TEST_CASE("a truncated trailing record from an interrupted writer is repaired") {
  const SurveyConfig survey = testutil::default_survey();
  testutil::TempDir tmp("store_truncated");
  const auto file = tmp / "responses.jsonl";
  {
    ResponseStore store(file, &survey);
    store.append_records({make_record(survey, 1, "far right", 1),
                          make_record(survey, 2, "far right", 1)});
  }
  // simulate a crash mid-append: chop the last record in half
  std::string content = read_text_file(file);
  content.resize(content.size() - 25);
  {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out << content;
  }

  ResponseStore recovered(file, &survey);
  CHECK(recovered.size() == 1);  // the partial tail is gone, the full line kept

  // resuming appends line-aligned records, no merged garbage
  recovered.append_records({make_record(survey, 2, "far right", 1),
                            make_record(survey, 3, "far right", 1)});
  ResponseStore reread(file, &survey);
  CHECK(reread.size() == 3);
  RecordFilter f;
  f.proposition_id = 2;
  CHECK(reread.query(f).size() == 1);
}

TEST_CASE("validation rejects inconsistent records") {
  const SurveyConfig survey = testutil::default_survey();
  testutil::TempDir tmp("store_validate");
  ResponseStore store(tmp / "responses.jsonl", &survey);

  SUBCASE("setting inconsistent with the instruction template") {
    ResponseRecord r = make_record(survey, 1, "far right", 2);  // closed instruction
    r.setting = Setting::Open;
    CHECK_THROWS_AS(store.append_records({r}), ValidationError);
  }
  SUBCASE("unknown proposition") {
    ResponseRecord r = make_record(survey, 1, "far right", 2);
    r.proposition_id = 63;
    CHECK_THROWS_AS(store.append_records({r}), ValidationError);
  }
  SUBCASE("unknown instruction") {
    ResponseRecord r = make_record(survey, 1, "far right", 2);
    r.instruction_id = 999;
    CHECK_THROWS_AS(store.append_records({r}), ValidationError);
  }
  SUBCASE("empty record_id") {
    ResponseRecord r = make_record(survey, 1, "far right", 2);
    r.record_id.clear();
    CHECK_THROWS_AS(store.append_records({r}), ValidationError);
  }
}

TEST_CASE("query filters partition the store deterministically") {
  const SurveyConfig survey = testutil::default_survey();
  testutil::TempDir tmp("store_query");
  ResponseStore store(tmp / "responses.jsonl", &survey);

  std::vector<ResponseRecord> records;
  size_t expected_far_right = 0;
  for (int prop = 1; prop <= 10; ++prop) {
    for (const char* persona : {"far right", "far left"}) {
      for (const char* model : {"model-a", "model-b"}) {
        records.push_back(make_record(survey, prop, persona, (prop % 10) + 1, model));
        if (std::string(persona) == "far right") ++expected_far_right;
      }
    }
  }
  store.append_records(records);
  REQUIRE(store.size() == records.size());

  SUBCASE("model partition") {
    RecordFilter f;
    f.model_id = "model-a";
    CHECK(store.query(f).size() == records.size() / 2);
  }
  SUBCASE("out-of-range proposition yields nothing") {
    RecordFilter f;
    f.proposition_id = 63;
    CHECK(store.query(f).empty());
  }
  SUBCASE("persona filter matches the independent count") {
    RecordFilter f;
    f.persona_value = "far right";
    CHECK(store.query(f).size() == expected_far_right);
  }
  SUBCASE("results are sorted by record_id") {
    const auto all = store.query();
    for (size_t i = 1; i < all.size(); ++i) {
      REQUIRE(all[i - 1].record_id < all[i].record_id);
    }
  }
  SUBCASE("per-model counts sum to the total") {
    const auto manifest = store.manifest();
    size_t sum = 0;
    for (const auto& [model, count] : manifest.per_model) sum += count;
    CHECK(sum == manifest.total);
    CHECK(manifest.total == store.size());
  }
}

TEST_CASE("import_published maps the fixture subset") {
  const SurveyConfig survey = testutil::default_survey();
  const auto fixture = testutil::test_data_dir() / "published_subset.jsonl";
  const auto mapping = testutil::core_data_dir() / "dataset_mapping.json";

  // line-count oracle over the fixture file
  size_t fixture_lines = 0, fixture_far_right = 0;
  {
    std::ifstream in(fixture);
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      ++fixture_lines;
      if (line.find("\"persona_value\": \"far right\"") != std::string::npos) {
        ++fixture_far_right;
      }
    }
  }
  REQUIRE(fixture_lines == 200);

  testutil::TempDir tmp("store_import");
  ResponseStore store(tmp / "responses.jsonl", &survey);
  const DatasetManifest manifest = import_published(fixture, mapping, store);
  CHECK(manifest.total == fixture_lines);
  CHECK(manifest.rejected == 0);
  CHECK(manifest.per_model.at("llama-3-8b") == 100);
  CHECK(manifest.per_model.at("mistral-7b") == 100);
  CHECK(manifest.source == "imported");

  SUBCASE("import is replayable: same file twice leaves counts unchanged") {
    const DatasetManifest again = import_published(fixture, mapping, store);
    CHECK(again.total == manifest.total);
    CHECK(again.per_model == manifest.per_model);
  }

  SUBCASE("query matches a grep-style count of the fixture") {
    RecordFilter f;
    f.persona_value = "far right";
    CHECK(store.query(f).size() == fixture_far_right);
  }
}

TEST_CASE("import edge cases") {
  const SurveyConfig survey = testutil::default_survey();
  const auto mapping = testutil::core_data_dir() / "dataset_mapping.json";
  testutil::TempDir tmp("store_import_edge");

  SUBCASE("empty file imports zero records with a warning caveat") {
    write_text_file(tmp / "empty.jsonl", "");
    ResponseStore store(tmp / "responses.jsonl", &survey);
    const auto manifest = import_published(tmp / "empty.jsonl", mapping, store);
    CHECK(manifest.total == 0);
    CHECK(!manifest.caveats.empty());
  }

  SUBCASE("rows that fail mapping are tolerated and counted") {
    std::string lines;
    lines += json{{"model_name", "m"}, {"question_no", 1}, {"persona_category", "Gender"},
                  {"persona_value", "male"}, {"prompt_no", 1}, {"response_type", "closed"},
                  {"response", "ok"}, {"generated_at", ""}}.dump() + "\n";
    lines += "{broken json\n";
    lines += json{{"model_name", "m"}, {"question_no", 2}, {"persona_category", "Gender"},
                  {"persona_value", "male"}, {"prompt_no", 1},
                  {"response_type", "sideways"},  // unknown setting value
                  {"response", "bad"}, {"generated_at", ""}}.dump() + "\n";
    write_text_file(tmp / "mixed.jsonl", lines);
    ResponseStore store(tmp / "responses2.jsonl", &survey);
    const auto manifest = import_published(tmp / "mixed.jsonl", mapping, store);
    CHECK(manifest.total == 1);
    CHECK(manifest.rejected == 2);
  }

  SUBCASE("unmappable mapping schema version") {
    write_text_file(tmp / "mapping_v9.json", R"({"schema_version": 9, "columns": {}})");
    write_text_file(tmp / "rows.jsonl", "");
    ResponseStore store(tmp / "responses3.jsonl", &survey);
    CHECK_THROWS_AS(import_published(tmp / "rows.jsonl", tmp / "mapping_v9.json", store),
                    ValidationError);
  }

  SUBCASE("unreadable dataset path") {
    ResponseStore store(tmp / "responses4.jsonl", &survey);
    CHECK_THROWS_AS(import_published(tmp / "missing.jsonl", mapping, store), IoError);
  }
}

TEST_CASE("manifest json writer") {
  testutil::TempDir tmp("store_manifest");
  DatasetManifest m;
  m.source = "generated";
  m.total = 3;
  m.per_model["m"] = 3;
  m.per_setting["Closed"] = 3;
  write_manifest(m, tmp / "manifest.json");
  const json j = json::parse(read_text_file(tmp / "manifest.json"));
  CHECK(j.at("total") == 3);
  CHECK(j.at("per_model").at("m") == 3);
}
