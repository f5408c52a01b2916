#include "tropeforge/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <tuple>

#include <json.hpp>

#include "tropeforge/errors.hpp"
#include "tropeforge/stats.hpp"
#include "tropeforge/util.hpp"

namespace tropeforge {

namespace {

using nlohmann::json;

void append_stance_lines(const std::filesystem::path& path,
                         const std::vector<StanceRecord>& records) {
  if (records.empty()) return;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (std::filesystem::exists(path)) repair_jsonl_tail(path);
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  for (const auto& r : records) out << stance_record_to_json_line(r) << '\n';
}

std::string persona_level(const std::string& persona_value) {
  return persona_value.empty() ? "base" : persona_value;
}

}  // namespace

DataPaths DataPaths::defaults(const std::filesystem::path& data_dir) {
  DataPaths p;
  p.propositions = data_dir / "propositions.json";
  p.personas = data_dir / "personas.json";
  p.instructions = data_dir / "instructions.json";
  p.pct_weights = data_dir / "pct_weights.json";
  p.judge_prompt = data_dir / "prompts" / "judge_prompt.txt";
  p.trope_filter_prompt = data_dir / "prompts" / "trope_filter_prompt.txt";
  p.paraphrase_prompt = data_dir / "prompts" / "paraphrase_prompt.txt";
  p.dataset_mapping = data_dir / "dataset_mapping.json";
  p.e2e_script = data_dir / "stub_scripts" / "e2e_default.json";
  return p;
}

std::filesystem::path resolve_data_dir(const std::optional<std::filesystem::path>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("TROPE_FORGE_DATA")) {
    return std::filesystem::path(env);
  }
#ifdef TROPE_FORGE_SOURCE_DATA_DIR
  return std::filesystem::path(TROPE_FORGE_SOURCE_DATA_DIR);
#else
  throw IoError("no data directory: pass --data-dir or set TROPE_FORGE_DATA");
#endif
}

RunLock::RunLock(const std::filesystem::path& lock_file) : file_(lock_file) {
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  const int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw ValidationError("run_dir is locked by another stage (" + file_.string() +
                          " exists); remove the stale lock if no stage is running");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  (void)!::write(fd, pid.data(), pid.size());
  ::close(fd);
  held_ = true;
}

RunLock::~RunLock() {
  if (held_) {
    std::error_code ec;
    std::filesystem::remove(file_, ec);
  }
}

SurveyConfig load_survey_from(const DataPaths& data) {
  return load_survey(data.propositions, data.personas, data.instructions);
}

void save_run_config(const RunConfigFile& config, const std::filesystem::path& path) {
  json j;
  j["schema_version"] = 1;
  j["seed"] = config.seed;
  j["generator_model"] = config.generator_model;
  j["clustering"] = {{"epsilon", config.clustering.epsilon},
                     {"min_pts", config.clustering.min_pts},
                     {"min_cluster_size", config.clustering.min_cluster_size}};
  json filter = json::object();
  if (config.filter.persona_values) filter["persona_values"] = *config.filter.persona_values;
  if (config.filter.instruction_ids) filter["instruction_ids"] = *config.filter.instruction_ids;
  if (config.filter.proposition_ids) filter["proposition_ids"] = *config.filter.proposition_ids;
  if (config.filter.setting) filter["setting"] = to_string(*config.filter.setting);
  filter["include_base"] = config.filter.include_base;
  j["filter"] = filter;
  write_text_file(path, j.dump(2) + "\n");
}

RunConfigFile load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("corrupt run manifest " + path.string() + ": " + e.what());
  }
  RunConfigFile config;
  config.seed = j.value("seed", 0ULL);
  config.generator_model = j.value("generator_model", std::string());
  if (j.contains("clustering")) {
    const auto& c = j.at("clustering");
    config.clustering.epsilon = c.value("epsilon", 0.15);
    config.clustering.min_pts = c.value("min_pts", 8);
    config.clustering.min_cluster_size = c.value("min_cluster_size", 10);
  }
  if (j.contains("filter")) {
    const auto& f = j.at("filter");
    if (f.contains("persona_values")) {
      config.filter.persona_values = f.at("persona_values").get<std::vector<std::string>>();
    }
    if (f.contains("instruction_ids")) {
      config.filter.instruction_ids = f.at("instruction_ids").get<std::vector<int>>();
    }
    if (f.contains("proposition_ids")) {
      config.filter.proposition_ids = f.at("proposition_ids").get<std::vector<int>>();
    }
    if (f.contains("setting")) {
      config.filter.setting = setting_from_string(f.at("setting").get<std::string>());
    }
    config.filter.include_base = f.value("include_base", false);
  }
  return config;
}

GenerateOutcome stage_generate(const SurveyConfig& survey,
                               const std::vector<PromptInstance>& instances,
                               const EndpointProfile& generator, ResponseStore& store,
                               int max_in_flight) {
  GenerateOutcome outcome;
  outcome.total = instances.size();

  std::map<std::string, const PromptInstance*> by_key;
  std::vector<CompletionTask> tasks;
  for (const auto& instance : instances) {
    const std::string record_id = make_record_id(instance.prompt_key, generator.model_id);
    if (store.contains(record_id)) {
      ++outcome.skipped;
      continue;
    }
    by_key.emplace(instance.prompt_key, &instance);
    tasks.push_back(CompletionTask{.prompt_key = instance.prompt_key,
                                   .text = render_prompt(instance, survey)});
  }

  run_batch(tasks, generator, max_in_flight, [&](const CompletionResult& result) {
    if (result.status != CompletionStatus::Ok) {
      ++outcome.failed;
      std::cerr << "generate: " << result.prompt_key << " failed after "
                << result.attempts << " attempt(s): " << result.error << "\n";
      return;
    }
    const PromptInstance* instance = by_key.at(result.prompt_key);
    ResponseRecord record;
    record.record_id = make_record_id(instance->prompt_key, generator.model_id);
    record.model_id = generator.model_id;
    record.proposition_id = instance->proposition_id;
    record.persona_category = to_string(instance->persona.category);
    record.persona_value = instance->persona.value;
    record.instruction_id = instance->instruction_id;
    record.setting = instance->setting;
    record.raw_text = result.text;
    record.created_at = now_utc_iso8601();
    store.append_records({record});
    ++outcome.ok;
  });
  return outcome;
}

std::map<std::string, StanceRecord> load_stances(const std::filesystem::path& path) {
  std::map<std::string, StanceRecord> stances;
  if (!std::filesystem::exists(path)) return stances;
  if (const std::size_t dropped = repair_jsonl_tail(path)) {
    std::cerr << "classify: dropped " << dropped << " partial trailing byte(s) from "
              << path.string() << " (interrupted writer)\n";
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      StanceRecord r = stance_record_from_json_line(line);
      stances.insert_or_assign(r.record_id, std::move(r));
    } catch (const std::exception& e) {
      throw ValidationError("corrupt stance line " + std::to_string(line_no) + " in " +
                            path.string() + ": " + e.what());
    }
  }
  return stances;
}

ClassifyOutcome stage_classify(const SurveyConfig& survey, const ResponseStore& store,
                               const std::string& judge_template,
                               const std::optional<EndpointProfile>& judge_profile,
                               const std::filesystem::path& stances_path,
                               std::optional<Setting> only_setting, int max_in_flight) {
  ClassifyOutcome outcome;
  const auto existing = load_stances(stances_path);
  const std::vector<ResponseRecord> records = store.query();

  std::vector<StanceRecord> fresh;
  std::vector<const ResponseRecord*> pending_open;
  for (const auto& r : records) {
    if (only_setting && r.setting != *only_setting) continue;
    if (existing.count(r.record_id)) {
      ++outcome.skipped;
      continue;
    }
    if (r.setting == Setting::Closed) {
      fresh.push_back(parse_closed(r.record_id, r.raw_text));
      ++outcome.closed_parsed;
    } else {
      pending_open.push_back(&r);
    }
  }

  if (!pending_open.empty()) {
    if (!judge_profile) {
      throw ValidationError("open records need a judge profile (--judge)");
    }
    const OpenJudge judge(judge_template, *judge_profile);
    std::map<std::string, const ResponseRecord*> by_key;
    auto build_tasks = [&](const std::vector<const ResponseRecord*>& batch) {
      std::vector<CompletionTask> tasks;
      for (const ResponseRecord* r : batch) {
        const Proposition* prop = survey.find_proposition(r->proposition_id);
        if (!prop) {
          throw ValidationError("record " + r->record_id + " references unknown proposition");
        }
        by_key[r->record_id] = r;
        tasks.push_back(CompletionTask{
            .prompt_key = r->record_id,
            .text = judge.build_prompt(prop->text, r->raw_text),
        });
      }
      return tasks;
    };

    std::vector<const ResponseRecord*> to_ask = pending_open;
    std::map<std::string, StanceRecord> judged;
    // First pass plus one re-ask round for unparseable verdicts.
    for (int round = 0; round < 2 && !to_ask.empty(); ++round) {
      const auto results = run_batch(build_tasks(to_ask), *judge_profile, max_in_flight);
      std::vector<const ResponseRecord*> retry;
      for (const auto& result : results) {
        const ResponseRecord* r = by_key.at(result.prompt_key);
        if (result.status != CompletionStatus::Ok) {
          ++outcome.failed;
          std::cerr << "classify: judge failed for " << r->record_id << ": "
                    << result.error << "\n";
          continue;
        }
        const DecisionParse parsed = parse_decision_payload(result.text);
        if (!parsed.label) {
          if (round == 0) {
            retry.push_back(r);
          } else {
            StanceRecord sr;
            sr.record_id = r->record_id;
            sr.label = StanceLabel::None;
            sr.source = StanceSource::OpenJudge;
            judged.insert_or_assign(sr.record_id, std::move(sr));
          }
          continue;
        }
        StanceRecord sr;
        sr.record_id = r->record_id;
        sr.label = *parsed.label;
        sr.explanation = parsed.explanation;
        sr.source = StanceSource::OpenJudge;
        judged.insert_or_assign(sr.record_id, std::move(sr));
      }
      to_ask = std::move(retry);
    }
    for (auto& [id, sr] : judged) {
      fresh.push_back(sr);
      ++outcome.open_judged;
    }
  }

  append_stance_lines(stances_path, fresh);
  return outcome;
}

PctMatrix stage_score(const ResponseStore& store,
                      const std::map<std::string, StanceRecord>& stances,
                      const AxisWeightTable& weights, const StanceValueMap& value_map,
                      const RunPaths& paths) {
  const PctMatrix matrix = score_matrix(store.query(), stances, weights, value_map);
  export_pct_csv(matrix, paths.pct_coords());
  export_pct_summary_csv(matrix, paths.pct_summary());
  return matrix;
}

StatsOutcome stage_stats(const ResponseStore& store,
                         const std::map<std::string, StanceRecord>& stances,
                         const AxisWeightTable& weights, const StanceValueMap& value_map,
                         Setting regression_setting, const RunPaths& paths,
                         double significance_threshold) {
  StatsOutcome outcome;
  const std::vector<ResponseRecord> records = store.query();

  // --- TVD per (model, persona) between open and closed cells ---
  using PersonaKey = std::tuple<std::string, std::string, std::string>;
  std::map<PersonaKey, std::map<int, std::vector<StanceRecord>>> open_cells, closed_cells;
  for (const auto& r : records) {
    const PersonaKey key{r.model_id, r.persona_category, r.persona_value};
    StanceRecord sr;
    const auto it = stances.find(r.record_id);
    if (it != stances.end()) {
      sr = it->second;
    } else {
      sr.record_id = r.record_id;
      sr.label = StanceLabel::None;  // unclassified counts as None
    }
    auto& cells = r.setting == Setting::Open ? open_cells : closed_cells;
    cells[key][r.proposition_id].push_back(std::move(sr));
  }

  std::vector<TvdRow> tvd_rows;
  for (const auto& [key, open_props] : open_cells) {
    const auto closed_it = closed_cells.find(key);
    if (closed_it == closed_cells.end()) continue;
    std::map<int, ResponseDistribution> open_dists, closed_dists;
    for (const auto& [prop, recs] : open_props) {
      open_dists[prop] = distribution(recs);
    }
    for (const auto& [prop, recs] : closed_it->second) {
      closed_dists[prop] = distribution(recs);
    }
    MeanTvdResult mean;
    try {
      mean = mean_tvd(open_dists, closed_dists);
    } catch (const ValidationError&) {
      continue;  // no overlapping propositions for this persona
    }
    tvd_rows.push_back(TvdRow{
        .model_id = std::get<0>(key),
        .persona_category = std::get<1>(key),
        .persona_value = std::get<2>(key),
        .mean_tvd = mean.mean,
        .props_used = mean.per_proposition.size(),
        .props_excluded = mean.excluded.size(),
    });
  }
  export_tvd_csv(tvd_rows, paths.tvd());
  outcome.tvd_rows = tvd_rows.size();

  // --- OLS per (model, axis) on the chosen setting, reference = base ---
  const PctMatrix matrix = score_matrix(records, stances, weights, value_map);
  std::map<std::string, std::vector<const PctCell*>> cells_by_model;
  for (const auto& cell : matrix.cells) {
    if (cell.setting != regression_setting) continue;
    cells_by_model[cell.model_id].push_back(&cell);
  }
  std::vector<RegressionRow> regression_rows;
  for (const auto& [model, cells] : cells_by_model) {
    bool has_base = false;
    std::vector<std::string> levels;
    std::vector<double> xs, ys;
    for (const PctCell* cell : cells) {
      const std::string level = persona_level(cell->persona_value);
      has_base = has_base || level == "base";
      levels.push_back(level);
      xs.push_back(cell->coords.x);
      ys.push_back(cell->coords.y);
    }
    if (!has_base) {
      ++outcome.regressions_skipped;
      std::cerr << "stats: skipping regression for " << model
                << ": no base (reference) cells in the " << to_string(regression_setting)
                << " setting\n";
      continue;
    }
    try {
      regression_rows.push_back(
          RegressionRow{model, "x", ols_fit(xs, levels, "base", "x")});
      regression_rows.push_back(
          RegressionRow{model, "y", ols_fit(ys, levels, "base", "y")});
      outcome.regressions += 2;
    } catch (const ValidationError& e) {
      ++outcome.regressions_skipped;
      std::cerr << "stats: regression skipped for " << model << ": " << e.what() << "\n";
    }
  }
  export_regression_csv(regression_rows, paths.regression(), significance_threshold);

  // --- dispersion of numeric stance values per (model, category, proposition) ---
  std::map<std::string, std::vector<DispersionSample>> samples_by_model;
  for (const auto& r : records) {
    if (r.setting != regression_setting) continue;
    const auto it = stances.find(r.record_id);
    if (it == stances.end()) continue;
    const auto value = value_map.value(it->second.label);
    if (!value) continue;
    samples_by_model[r.model_id].push_back(DispersionSample{
        .category = r.persona_category, .proposition_id = r.proposition_id, .value = *value});
  }
  std::vector<DispersionRow> dispersion_rows;
  for (const auto& [model, samples] : samples_by_model) {
    for (auto& cell : stddev_by_category(samples)) {
      dispersion_rows.push_back(DispersionRow{model, cell});
      ++outcome.dispersion_cells;
    }
  }
  export_dispersion_csv(dispersion_rows, paths.dispersion());
  return outcome;
}

TropesOutcome stage_tropes(const SurveyConfig& survey, const ResponseStore& store,
                           const std::map<std::string, StanceRecord>& stances,
                           Embedder& embedder, const TropePipelineConfig& config,
                           const RunPaths& paths, bool write_clusters_debug) {
  RecordFilter filter;
  filter.setting = Setting::Open;
  const std::vector<ResponseRecord> open_records = store.query(filter);
  const TropePipelineResult result =
      extract_tropes(open_records, stances, survey, embedder, config);

  std::string lines;
  for (const auto& trope : result.tropes) {
    const auto it = result.entailment_by_trope.find(trope.trope_id);
    const EntailmentStats* stats =
        it == result.entailment_by_trope.end() ? nullptr : &it->second;
    lines += trope_to_json_line(trope, stats) + "\n";
  }
  write_text_file(paths.tropes(), lines);

  if (write_clusters_debug) {
    std::string debug;
    for (const auto& rejected : result.rejected) {
      const json j = {{"type", "rejected_candidate"},
                      {"proposition_id", rejected.proposition_id},
                      {"side", to_string(rejected.side)},
                      {"representative", rejected.representative_text},
                      {"cluster_size", rejected.cluster_size},
                      {"unparseable_verdict", rejected.unparseable_verdict}};
      debug += j.dump() + "\n";
    }
    const json summary = {{"type", "summary"},
                          {"clusters_found", result.clusters_found},
                          {"noise_sentences", result.noise_sentences},
                          {"dropped_none_replies", result.dropped_none_replies}};
    debug += summary.dump() + "\n";
    write_text_file(paths.clusters_debug(), debug);
  }

  return TropesOutcome{
      .tropes = result.tropes.size(),
      .rejected = result.rejected.size(),
      .noise_sentences = result.noise_sentences,
      .dropped_none_replies = result.dropped_none_replies,
  };
}

void stage_report(const SurveyConfig& survey, const ResponseStore& store,
                  const RunPaths& paths, size_t bubble_top_n,
                  std::optional<PropositionCategory> venn_category,
                  double bubble_edge_floor) {
  if (!std::filesystem::exists(paths.tropes())) {
    throw ValidationError("missing " + paths.tropes().string() +
                          ": run the tropes stage first");
  }
  std::vector<Trope> tropes;
  {
    std::ifstream in(paths.tropes(), std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      tropes.push_back(trope_from_json_line(line));
    }
  }
  const std::vector<ResponseRecord> records = store.query();
  std::map<std::string, std::string> model_by_record;
  std::map<std::string, const ResponseRecord*> records_by_id;
  for (const auto& r : records) {
    model_by_record[r.record_id] = r.model_id;
    records_by_id[r.record_id] = &r;
  }

  write_text_file(paths.tropes_report(), trope_report_md(tropes, model_by_record));
  export_tropes_csv(tropes, paths.tropes_csv());
  write_bubble_json(bubble_data(tropes, survey, bubble_top_n, bubble_edge_floor),
                    paths.bubble());
  write_venn_json(venn_data(tropes, records_by_id, venn_category,
                            venn_category ? &survey : nullptr),
                  paths.venn());
}

std::vector<StageProgress> resume_summary(const RunPaths& paths, const SurveyConfig& survey) {
  std::vector<StageProgress> progress;

  size_t expected_instances = 0;
  if (std::filesystem::exists(paths.run_config())) {
    const RunConfigFile config = load_run_config(paths.run_config());
    expected_instances = expand_matrix(survey, config.filter).size();
  } else {
    expected_instances = expand_matrix(survey).size();
  }

  const ResponseStore store(paths.responses(), nullptr);
  progress.push_back({"generate", store.size(), expected_instances});

  const auto stances = load_stances(paths.stances());
  size_t classified = 0;
  for (const auto& r : store.query()) {
    if (stances.count(r.record_id)) ++classified;
  }
  progress.push_back({"classify", classified, store.size()});

  const auto file_stage = [&](const char* name, const std::filesystem::path& file) {
    progress.push_back(
        {name, std::filesystem::exists(file) ? size_t{1} : size_t{0}, size_t{1}});
  };
  file_stage("score", paths.pct_coords());
  file_stage("stats", paths.tvd());
  file_stage("tropes", paths.tropes());
  file_stage("report", paths.tropes_report());
  return progress;
}

namespace {

EndpointProfile stub_role_profile(const json& scripts, const char* role,
                                  std::uint64_t seed, int embedding_dim) {
  StubScript script;
  if (scripts.contains(role)) {
    script = parse_stub_script(scripts.at(role).dump());
  }
  EndpointProfile profile = stub_backend(seed, std::move(script));
  profile.name = std::string("stub-") + role;
  profile.model_id = std::string("stub-") + role;
  profile.embedding_dim = embedding_dim;
  return profile;
}

}  // namespace

E2eProfiles load_e2e_profiles(const std::filesystem::path& script_path, std::uint64_t seed) {
  json scripts;
  try {
    scripts = json::parse(read_text_file(script_path));
  } catch (const json::exception& e) {
    throw ValidationError("invalid e2e script " + script_path.string() + ": " + e.what());
  }
  const int dim = scripts.value("embedding_dim", 384);
  E2eProfiles profiles{
      .generator = stub_role_profile(scripts, "generator", seed, dim),
      .judge = stub_role_profile(scripts, "judge", seed, dim),
      .filter = stub_role_profile(scripts, "filter", seed, dim),
      .paraphraser = stub_role_profile(scripts, "paraphrase", seed, dim),
      .embedder = stub_role_profile(scripts, "embedder", seed, dim),
      .nli = stub_role_profile(scripts, "nli", seed, dim),
  };
  // The generator is the "model" whose responses the run studies.
  profiles.generator.model_id = "stub-model";
  return profiles;
}

void run_e2e(const DataPaths& data, const RunPaths& paths, const E2eOptions& options) {
  std::filesystem::create_directories(paths.run_dir);
  RunLock lock(paths.lock());

  const SurveyConfig survey = load_survey_from(data);
  const E2eProfiles profiles = load_e2e_profiles(data.e2e_script, options.seed);

  MatrixFilter filter;
  filter.persona_values = options.personas.empty()
                              ? std::vector<std::string>{"far left", "far right",
                                                         "mainstream left", "mainstream right"}
                              : options.personas;
  if (options.proposition_ids.empty()) {
    std::vector<int> props;
    for (int id = 1; id <= 20; ++id) props.push_back(id);
    filter.proposition_ids = props;
  } else {
    filter.proposition_ids = options.proposition_ids;
  }
  filter.include_base = true;

  save_run_config(RunConfigFile{.filter = filter,
                                .clustering = options.clustering,
                                .seed = options.seed,
                                .generator_model = profiles.generator.model_id},
                  paths.run_config());

  ResponseStore store(paths.responses(), &survey);
  const std::vector<PromptInstance> instances = expand_matrix(survey, filter);
  stage_generate(survey, instances, profiles.generator, store, options.max_in_flight);

  stage_classify(survey, store, read_text_file(data.judge_prompt), profiles.judge,
                 paths.stances(), std::nullopt, options.max_in_flight);
  const auto stances = load_stances(paths.stances());

  AxisWeightTable weights = AxisWeightTable::load(data.pct_weights);
  weights.validate(survey.propositions.size());
  StanceValueMap value_map;
  value_map.validate();

  stage_score(store, stances, weights, value_map, paths);
  stage_stats(store, stances, weights, value_map, Setting::Closed, paths);

  Embedder embedder(profiles.embedder, paths.embedding_cache());
  TropePipelineConfig trope_config;
  trope_config.clustering = options.clustering;
  trope_config.max_in_flight = options.max_in_flight;
  trope_config.run_filter = true;
  trope_config.filter_template = read_text_file(data.trope_filter_prompt);
  trope_config.filter_profile = profiles.filter;
  trope_config.run_paraphrase = true;
  trope_config.paraphrase_template = read_text_file(data.paraphrase_prompt);
  trope_config.paraphrase_profile = profiles.paraphraser;
  trope_config.run_nli = true;
  trope_config.nli_profile = profiles.nli;
  stage_tropes(survey, store, stances, embedder, trope_config, paths, true);

  stage_report(survey, store, paths, options.bubble_top_n, std::nullopt);
  write_manifest(store.manifest("generated"), paths.manifest());
}

}  // namespace tropeforge
