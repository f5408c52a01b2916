#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tropeforge/errors.hpp"
#include "tropeforge/pipeline.hpp"
#include "tropeforge/util.hpp"

namespace tf = tropeforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitEndpoint = 4;

struct CommonArgs {
  std::string run_dir = "run";
  std::optional<std::filesystem::path> data_dir;

  tf::DataPaths data() const { return tf::DataPaths::defaults(tf::resolve_data_dir(data_dir)); }
  tf::RunPaths paths() const { return tf::RunPaths{.run_dir = run_dir}; }
};

struct FilterArgs {
  std::vector<std::string> personas;
  std::vector<int> propositions;
  std::vector<int> instructions;
  std::string setting;
  bool include_base = false;

  tf::MatrixFilter filter() const {
    tf::MatrixFilter f;
    if (!personas.empty()) f.persona_values = personas;
    if (!propositions.empty()) f.proposition_ids = propositions;
    if (!instructions.empty()) f.instruction_ids = instructions;
    if (!setting.empty()) f.setting = tf::setting_from_string(setting);
    f.include_base = include_base;
    return f;
  }
};

void add_filter_options(CLI::App* cmd, FilterArgs& args) {
  cmd->add_option("--personas", args.personas, "Persona values to include (default: all)");
  cmd->add_option("--props", args.propositions, "Proposition ids to include (default: all)");
  cmd->add_option("--instructions", args.instructions, "Instruction ids to include (default: all)");
  cmd->add_option("--setting", args.setting, "Restrict to one setting: open or closed");
  cmd->add_flag("--include-base", args.include_base,
                "Also generate the no-demographic base instances");
}

tf::EndpointProfile need_profile(const std::filesystem::path& endpoints_file,
                                 const std::string& name, const char* role) {
  if (endpoints_file.empty()) {
    throw tf::ValidationError(std::string("--endpoints file required to resolve the ") +
                              role + " profile");
  }
  const auto profiles = tf::load_endpoint_profiles(endpoints_file);
  const auto it = profiles.find(name);
  if (it == profiles.end()) {
    throw tf::ValidationError(std::string(role) + " profile '" + name +
                              "' not found in " + endpoints_file.string());
  }
  return it->second;
}

void require_file(const std::filesystem::path& file, const char* missing_stage) {
  if (!std::filesystem::exists(file)) {
    throw tf::ValidationError("missing " + file.string() + "; run `trope-forge " +
                              missing_stage + "` first");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trope-forge: survey-driven auditing of values and opinions in LLM output"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  app.failure_message(CLI::FailureMessage::help);

  CommonArgs common;
  app.add_option("--run", common.run_dir, "Run directory holding stage outputs")
      ->capture_default_str();
  std::string data_dir_flag;
  app.add_option("--data-dir", data_dir_flag,
                 "Directory with survey/prompt data (default: TROPE_FORGE_DATA or the "
                 "bundled files)");

  std::function<int()> action;

  // --- matrix ---
  auto* matrix_cmd = app.add_subcommand("matrix", "Expand and count the prompt matrix");
  FilterArgs matrix_filter;
  add_filter_options(matrix_cmd, matrix_filter);
  bool dry_run = false;
  int render_n = 0;
  matrix_cmd->add_flag("--dry-run", dry_run, "Print instance counts without rendering");
  matrix_cmd->add_option("--render", render_n, "Render the first N prompts to stdout");
  matrix_cmd->callback([&]() {
    action = [&]() {
      const tf::SurveyConfig survey = tf::load_survey_from(common.data());
      const auto instances = tf::expand_matrix(survey, matrix_filter.filter());
      std::cout << tf::format_thousands(instances.size()) << " prompt instances per model\n";
      size_t n_open = 0, n_closed = 0;
      for (const auto& i : instances) (i.setting == tf::Setting::Open ? n_open : n_closed)++;
      std::cout << "  closed: " << tf::format_thousands(n_closed)
                << "  open: " << tf::format_thousands(n_open) << "\n";
      if (!dry_run && render_n > 0) {
        for (int i = 0; i < render_n && i < static_cast<int>(instances.size()); ++i) {
          std::cout << "\n--- " << instances[static_cast<size_t>(i)].prompt_key << " ---\n"
                    << tf::render_prompt(instances[static_cast<size_t>(i)], survey) << "\n";
        }
      }
      return kExitOk;
    };
  });

  // --- generate ---
  auto* generate_cmd = app.add_subcommand("generate", "Run the prompt matrix against a model");
  FilterArgs generate_filter;
  add_filter_options(generate_cmd, generate_filter);
  std::string endpoints_file;
  std::string generator_profile = "generator";
  int max_in_flight = 8;
  generate_cmd->add_option("--endpoints", endpoints_file, "Endpoint profile file")->required();
  generate_cmd->add_option("--generator", generator_profile, "Profile name for the model")
      ->capture_default_str();
  generate_cmd->add_option("--max-in-flight", max_in_flight, "Concurrent request cap")
      ->capture_default_str();
  generate_cmd->callback([&]() {
    action = [&]() {
      const tf::DataPaths data = common.data();
      const tf::RunPaths paths = common.paths();
      std::filesystem::create_directories(paths.run_dir);
      tf::RunLock lock(paths.lock());
      const tf::SurveyConfig survey = tf::load_survey_from(data);
      const tf::EndpointProfile generator =
          need_profile(endpoints_file, generator_profile, "generator");
      tf::ResponseStore store(paths.responses(), &survey);
      const auto instances = tf::expand_matrix(survey, generate_filter.filter());
      tf::save_run_config(
          tf::RunConfigFile{.filter = generate_filter.filter(),
                            .clustering = {},
                            .seed = generator.stub_seed,
                            .generator_model = generator.model_id},
          paths.run_config());
      const auto outcome =
          tf::stage_generate(survey, instances, generator, store, max_in_flight);
      tf::write_manifest(store.manifest("generated"), paths.manifest());
      std::cout << "generate: " << outcome.ok << " new, " << outcome.skipped
                << " already present, " << outcome.failed << " failed, of "
                << outcome.total << " instances\n";
      return outcome.failed == 0 ? kExitOk : kExitEndpoint;
    };
  });

  // --- import ---
  auto* import_cmd = app.add_subcommand("import", "Import a local copy of the released dataset");
  std::string import_path;
  std::string mapping_override;
  import_cmd->add_option("path", import_path, "Dataset file (JSONL)")->required();
  import_cmd->add_option("--mapping", mapping_override, "Column mapping file override");
  import_cmd->callback([&]() {
    action = [&]() {
      const tf::DataPaths data = common.data();
      const tf::RunPaths paths = common.paths();
      std::filesystem::create_directories(paths.run_dir);
      tf::RunLock lock(paths.lock());
      const tf::SurveyConfig survey = tf::load_survey_from(data);
      tf::ResponseStore store(paths.responses(), &survey);
      const std::filesystem::path mapping = mapping_override.empty()
                                                ? data.dataset_mapping
                                                : std::filesystem::path(mapping_override);
      const tf::DatasetManifest manifest = tf::import_published(import_path, mapping, store);
      tf::write_manifest(manifest, paths.manifest());
      std::cout << "import: " << manifest.total << " records ("
                << manifest.rejected << " rejected rows)\n";
      for (const auto& [model, count] : manifest.per_model) {
        std::cout << "  " << model << ": " << tf::format_thousands(count) << "\n";
      }
      return kExitOk;
    };
  });

  // --- classify ---
  auto* classify_cmd = app.add_subcommand("classify", "Derive stances from stored replies");
  std::string classify_setting;
  std::string judge_profile_name;
  std::string classify_endpoints;
  int classify_in_flight = 8;
  classify_cmd->add_option("--setting", classify_setting, "open, closed, or both (default)");
  classify_cmd->add_option("--judge", judge_profile_name, "Judge profile for open replies");
  classify_cmd->add_option("--endpoints", classify_endpoints, "Endpoint profile file");
  classify_cmd->add_option("--max-in-flight", classify_in_flight, "Concurrent request cap")
      ->capture_default_str();
  classify_cmd->callback([&]() {
    action = [&]() {
      const tf::DataPaths data = common.data();
      const tf::RunPaths paths = common.paths();
      require_file(paths.responses(), "generate");
      tf::RunLock lock(paths.lock());
      const tf::SurveyConfig survey = tf::load_survey_from(data);
      tf::ResponseStore store(paths.responses(), &survey);
      std::optional<tf::Setting> only;
      if (!classify_setting.empty() && classify_setting != "both") {
        only = tf::setting_from_string(classify_setting);
      }
      std::optional<tf::EndpointProfile> judge;
      if (!judge_profile_name.empty()) {
        judge = need_profile(classify_endpoints, judge_profile_name, "judge");
      }
      const auto outcome =
          tf::stage_classify(survey, store, tf::read_text_file(data.judge_prompt), judge,
                             paths.stances(), only, classify_in_flight);
      std::cout << "classify: " << outcome.closed_parsed << " closed parsed, "
                << outcome.open_judged << " open judged, " << outcome.skipped
                << " already classified, " << outcome.failed << " failed\n";
      return outcome.failed == 0 ? kExitOk : kExitEndpoint;
    };
  });

  // --- score ---
  auto* score_cmd = app.add_subcommand("score", "Map stances to compass coordinates");
  score_cmd->callback([&]() {
    action = [&]() {
      const tf::DataPaths data = common.data();
      const tf::RunPaths paths = common.paths();
      require_file(paths.responses(), "generate");
      require_file(paths.stances(), "classify");
      tf::RunLock lock(paths.lock());
      const tf::SurveyConfig survey = tf::load_survey_from(data);
      tf::ResponseStore store(paths.responses(), &survey);
      tf::AxisWeightTable weights = tf::AxisWeightTable::load(data.pct_weights);
      weights.validate(survey.propositions.size());
      tf::StanceValueMap value_map;
      value_map.validate();
      const auto matrix = tf::stage_score(store, tf::load_stances(paths.stances()), weights,
                                          value_map, paths);
      std::cout << "score: " << matrix.cells.size() << " cells ("
                << matrix.flagged_empty_cells << " without scoreable labels) -> "
                << paths.pct_coords().string() << "\n";
      return kExitOk;
    };
  });

  // --- stats ---
  auto* stats_cmd = app.add_subcommand("stats", "Robustness and effect-size tables");
  bool counts_only = false;
  std::string stats_setting = "closed";
  double significance = 0.05;
  stats_cmd->add_flag("--counts", counts_only, "Print dataset counts and exit");
  stats_cmd->add_option("--setting", stats_setting,
                        "Setting feeding the regression/dispersion tables")
      ->capture_default_str();
  stats_cmd->add_option("--significance", significance,
                        "p-value threshold for the significant column")
      ->capture_default_str();
  stats_cmd->callback([&]() {
    action = [&]() {
      const tf::DataPaths data = common.data();
      const tf::RunPaths paths = common.paths();
      require_file(paths.responses(), "generate");
      const tf::SurveyConfig survey = tf::load_survey_from(data);
      tf::ResponseStore store(paths.responses(), &survey);
      if (counts_only) {
        const auto manifest = store.manifest();
        std::cout << "total: " << tf::format_thousands(manifest.total) << "\n";
        for (const auto& [model, count] : manifest.per_model) {
          std::cout << "  model " << model << ": " << tf::format_thousands(count) << "\n";
        }
        for (const auto& [setting, count] : manifest.per_setting) {
          std::cout << "  setting " << setting << ": " << tf::format_thousands(count) << "\n";
        }
        return kExitOk;
      }
      require_file(paths.stances(), "classify");
      tf::RunLock lock(paths.lock());
      tf::AxisWeightTable weights = tf::AxisWeightTable::load(data.pct_weights);
      weights.validate(survey.propositions.size());
      tf::StanceValueMap value_map;
      const auto outcome =
          tf::stage_stats(store, tf::load_stances(paths.stances()), weights, value_map,
                          tf::setting_from_string(stats_setting), paths, significance);
      std::cout << "stats: " << outcome.tvd_rows << " TVD rows, " << outcome.regressions
                << " regressions (" << outcome.regressions_skipped << " skipped), "
                << outcome.dispersion_cells << " dispersion cells\n";
      return kExitOk;
    };
  });

  // --- tropes ---
  auto* tropes_cmd = app.add_subcommand("tropes", "Extract recurring justifications");
  tf::ClusteringParams clustering;
  std::string tropes_endpoints;
  std::string embedder_name, filter_name, paraphrase_name, nli_name;
  bool debug_clusters = false;
  int tropes_in_flight = 8;
  tropes_cmd->add_option("--eps", clustering.epsilon, "Neighborhood radius (cosine distance)")
      ->capture_default_str();
  tropes_cmd->add_option("--min-pts", clustering.min_pts, "Core point neighbor threshold")
      ->capture_default_str();
  tropes_cmd->add_option("--min-cluster", clustering.min_cluster_size,
                         "Smallest surviving cluster")
      ->capture_default_str();
  tropes_cmd->add_option("--endpoints", tropes_endpoints, "Endpoint profile file")->required();
  tropes_cmd->add_option("--embedder", embedder_name, "Embedding profile")->required();
  tropes_cmd->add_option("--filter", filter_name, "Argument-filter profile")->required();
  tropes_cmd->add_option("--paraphrase", paraphrase_name, "Paraphrase profile (optional)");
  tropes_cmd->add_option("--nli", nli_name, "NLI profile for entailment precision (optional)");
  tropes_cmd->add_flag("--debug-clusters", debug_clusters, "Also write clusters_debug.jsonl");
  tropes_cmd->add_option("--max-in-flight", tropes_in_flight, "Concurrent NLI request cap")
      ->capture_default_str();
  tropes_cmd->callback([&]() {
    action = [&]() {
      const tf::DataPaths data = common.data();
      const tf::RunPaths paths = common.paths();
      require_file(paths.responses(), "generate");
      require_file(paths.stances(), "classify");
      tf::RunLock lock(paths.lock());
      const tf::SurveyConfig survey = tf::load_survey_from(data);
      tf::ResponseStore store(paths.responses(), &survey);

      tf::TropePipelineConfig config;
      config.clustering = clustering;
      config.max_in_flight = tropes_in_flight;
      config.run_filter = true;
      config.filter_template = tf::read_text_file(data.trope_filter_prompt);
      config.filter_profile = need_profile(tropes_endpoints, filter_name, "filter");
      if (!paraphrase_name.empty()) {
        config.run_paraphrase = true;
        config.paraphrase_template = tf::read_text_file(data.paraphrase_prompt);
        config.paraphrase_profile = need_profile(tropes_endpoints, paraphrase_name, "paraphrase");
      }
      if (!nli_name.empty()) {
        config.run_nli = true;
        config.nli_profile = need_profile(tropes_endpoints, nli_name, "nli");
      }
      tf::Embedder embedder(need_profile(tropes_endpoints, embedder_name, "embedder"),
                            paths.embedding_cache());
      const auto outcome =
          tf::stage_tropes(survey, store, tf::load_stances(paths.stances()), embedder,
                           config, paths, debug_clusters);
      std::cout << "tropes: " << outcome.tropes << " kept, " << outcome.rejected
                << " rejected, " << outcome.noise_sentences << " noise sentences, "
                << outcome.dropped_none_replies << " None replies dropped\n";
      return kExitOk;
    };
  });

  // --- report ---
  auto* report_cmd = app.add_subcommand("report", "Emit markdown and plot-data artifacts");
  size_t top_n = 30;
  double edge_floor = 0.0;
  std::string venn_category;
  report_cmd->add_option("--top-n", top_n, "Bubble chart size")->capture_default_str();
  report_cmd->add_option("--edge-floor", edge_floor,
                         "Smallest Jaccard weight that draws a bubble edge")
      ->capture_default_str();
  report_cmd->add_option("--venn-category", venn_category,
                         "Restrict the Venn to one proposition category");
  report_cmd->callback([&]() {
    action = [&]() {
      const tf::DataPaths data = common.data();
      const tf::RunPaths paths = common.paths();
      require_file(paths.responses(), "generate");
      require_file(paths.tropes(), "tropes");
      tf::RunLock lock(paths.lock());
      const tf::SurveyConfig survey = tf::load_survey_from(data);
      tf::ResponseStore store(paths.responses(), &survey);
      std::optional<tf::PropositionCategory> category;
      if (!venn_category.empty()) {
        category = tf::proposition_category_from_string(venn_category);
      }
      tf::stage_report(survey, store, paths, top_n, category, edge_floor);
      std::cout << "report: wrote " << paths.tropes_report().string() << ", "
                << paths.bubble().string() << ", " << paths.venn().string() << "\n";
      return kExitOk;
    };
  });

  // --- e2e ---
  auto* e2e_cmd = app.add_subcommand("e2e", "Full offline pipeline against the scripted stub");
  tf::E2eOptions e2e_options;
  e2e_cmd->add_option("--stub-seed", e2e_options.seed, "Stub determinism seed")
      ->capture_default_str();
  e2e_cmd->add_option("--max-in-flight", e2e_options.max_in_flight, "Concurrent request cap")
      ->capture_default_str();
  e2e_cmd->add_option("--eps", e2e_options.clustering.epsilon, "Clustering epsilon")
      ->capture_default_str();
  e2e_cmd->add_option("--min-pts", e2e_options.clustering.min_pts, "Clustering minPts")
      ->capture_default_str();
  e2e_cmd->add_option("--min-cluster", e2e_options.clustering.min_cluster_size,
                      "Smallest surviving cluster")
      ->capture_default_str();
  e2e_cmd->add_option("--props", e2e_options.proposition_ids,
                      "Proposition ids (default: 1..20)");
  e2e_cmd->add_option("--personas", e2e_options.personas,
                      "Persona values (default: the four political orientations)");
  e2e_cmd->callback([&]() {
    action = [&]() {
      tf::run_e2e(common.data(), common.paths(), e2e_options);
      std::cout << "e2e: run complete in " << common.run_dir << "\n";
      return kExitOk;
    };
  });

  // --- resume ---
  auto* resume_cmd = app.add_subcommand("resume", "Show per-stage progress for a run");
  resume_cmd->callback([&]() {
    action = [&]() {
      const tf::DataPaths data = common.data();
      const tf::RunPaths paths = common.paths();
      const tf::SurveyConfig survey = tf::load_survey_from(data);
      const auto progress = tf::resume_summary(paths, survey);
      bool anything_left = false;
      for (const auto& stage : progress) {
        std::cout << stage.stage << ": " << stage.completed << "/" << stage.total
                  << (stage.done() ? " (done)" : "") << "\n";
        anything_left = anything_left || !stage.done();
      }
      if (!anything_left) std::cout << "nothing to do\n";
      return kExitOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (!data_dir_flag.empty()) common.data_dir = data_dir_flag;

  try {
    return action();
  } catch (const tf::GatewayError& e) {
    std::cerr << "endpoint error: " << e.what() << "\n";
    return kExitEndpoint;
  } catch (const tf::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const tf::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
