#include "tropeforge/tropes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>
#include <unordered_set>

#include <json.hpp>

#include "tropeforge/errors.hpp"
#include "tropeforge/util.hpp"

namespace tropeforge {

namespace {

using nlohmann::json;

void validate_params(const ClusteringParams& params) {
  if (!(params.epsilon > 0.0 && params.epsilon < 2.0)) {
    throw ValidationError("epsilon must lie in (0, 2)");
  }
  if (params.min_pts < 1) throw ValidationError("min_pts must be >= 1");
  if (params.min_cluster_size < 1) throw ValidationError("min_cluster_size must be >= 1");
}

std::string sanitize_for_filename(const std::string& s) {
  std::string out;
  for (char c : s) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  }
  return out.empty() ? std::string("default") : out;
}

}  // namespace

double EmbeddingVector::norm() const {
  double ss = 0.0;
  for (float v : values) ss += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(ss);
}

void EmbeddingVector::normalize() {
  const double n = norm();
  if (n <= 0.0) return;
  for (auto& v : values) v = static_cast<float>(static_cast<double>(v) / n);
}

double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.values.size() != b.values.size()) {
    throw ValidationError("cosine_distance: dimension mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    const double x = a.values[i];
    const double y = b.values[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string to_string(StanceSide s) {
  return s == StanceSide::Support ? "Support" : "Oppose";
}

StanceSide stance_side_from_string(const std::string& s) {
  if (s == "Support") return StanceSide::Support;
  if (s == "Oppose") return StanceSide::Oppose;
  throw ValidationError("unknown stance side: " + s);
}

PartitionResult partition(const std::vector<ResponseRecord>& records,
                          const std::map<std::string, StanceRecord>& stances,
                          int proposition_id) {
  PartitionResult result;
  result.support.proposition_id = proposition_id;
  result.support.side = StanceSide::Support;
  result.oppose.proposition_id = proposition_id;
  result.oppose.side = StanceSide::Oppose;

  std::vector<const ResponseRecord*> selected;
  for (const auto& r : records) {
    if (r.setting != Setting::Open || r.proposition_id != proposition_id) continue;
    selected.push_back(&r);
  }
  std::sort(selected.begin(), selected.end(),
            [](const ResponseRecord* a, const ResponseRecord* b) {
              return a->record_id < b->record_id;
            });

  for (const ResponseRecord* r : selected) {
    const auto it = stances.find(r->record_id);
    const CollapsedStance stance =
        it == stances.end() ? CollapsedStance::None : collapse(it->second.label);
    if (stance == CollapsedStance::None) {
      ++result.dropped_none;
      continue;
    }
    auto& side = stance == CollapsedStance::Agree ? result.support : result.oppose;
    for (auto& unit : segment(r->record_id, r->raw_text)) {
      side.units.push_back(std::move(unit));
    }
  }
  return result;
}

ClusterResult cluster(const std::vector<EmbeddingVector>& vectors,
                      const ClusteringParams& params) {
  validate_params(params);
  const size_t n = vectors.size();
  ClusterResult result;
  if (n == 0) return result;

  const size_t dim = vectors[0].values.size();
  for (const auto& v : vectors) {
    if (v.values.size() != dim) throw ValidationError("cluster: dimension mismatch");
  }

  // One adjacency pass. Norms are hoisted and pairs mirrored; both are
  // bit-identical to evaluating the distance formula per ordered pair, so the
  // partition matches a naive per-pair implementation exactly.
  std::vector<double> norms(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (size_t d = 0; d < dim; ++d) {
      const double x = vectors[i].values[d];
      ss += x * x;
    }
    norms[i] = std::sqrt(ss);
  }
  // Neighborhoods are inclusive (<= epsilon) and count the point itself; the
  // diagonal goes through the same formula so the roundoff matches too.
  std::vector<std::vector<int>> adjacency(n);
  for (size_t i = 0; i < n; ++i) {
    const float* a = vectors[i].values.data();
    for (size_t j = i; j < n; ++j) {
      const float* b = vectors[j].values.data();
      double dot = 0.0;
      for (size_t d = 0; d < dim; ++d) {
        dot += static_cast<double>(a[d]) * static_cast<double>(b[d]);
      }
      const double dist = (norms[i] == 0.0 || norms[j] == 0.0)
                              ? 1.0
                              : 1.0 - dot / (norms[i] * norms[j]);
      if (dist <= params.epsilon) {
        adjacency[i].push_back(static_cast<int>(j));
        if (j != i) adjacency[j].push_back(static_cast<int>(i));
      }
    }
  }
  for (auto& neighbors : adjacency) std::sort(neighbors.begin(), neighbors.end());

  std::vector<bool> is_core(n, false);
  for (size_t i = 0; i < n; ++i) {
    is_core[i] = adjacency[i].size() >= static_cast<size_t>(params.min_pts);
  }

  std::vector<int> assignment(n, -1);
  std::vector<std::vector<int>> clusters;
  for (size_t i = 0; i < n; ++i) {
    if (assignment[i] != -1 || !is_core[i]) continue;
    const int cluster_id = static_cast<int>(clusters.size());
    std::vector<int> members;
    std::vector<int> queue{static_cast<int>(i)};
    assignment[i] = cluster_id;
    for (size_t head = 0; head < queue.size(); ++head) {
      const int p = queue[head];
      members.push_back(p);
      if (!is_core[static_cast<size_t>(p)]) continue;  // border points don't expand
      for (int j : adjacency[static_cast<size_t>(p)]) {
        if (assignment[static_cast<size_t>(j)] == -1) {
          assignment[static_cast<size_t>(j)] = cluster_id;
          queue.push_back(j);
        }
      }
    }
    std::sort(members.begin(), members.end());
    clusters.push_back(std::move(members));
  }

  for (auto& members : clusters) {
    if (members.size() < static_cast<size_t>(params.min_cluster_size)) {
      for (int m : members) assignment[static_cast<size_t>(m)] = -1;
      members.clear();
    }
  }
  for (auto& members : clusters) {
    if (!members.empty()) result.clusters.push_back(std::move(members));
  }
  for (size_t i = 0; i < n; ++i) {
    if (assignment[i] == -1) result.noise.push_back(static_cast<int>(i));
  }
  return result;
}

size_t representative_index(const std::vector<EmbeddingVector>& members) {
  if (members.empty()) throw ValidationError("representative of empty cluster");
  const size_t dim = members[0].values.size();
  std::vector<double> centroid(dim, 0.0);
  for (const auto& m : members) {
    if (m.values.size() != dim) throw ValidationError("cluster member dim mismatch");
    for (size_t i = 0; i < dim; ++i) centroid[i] += static_cast<double>(m.values[i]);
  }
  for (auto& c : centroid) c /= static_cast<double>(members.size());

  size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < members.size(); ++j) {
    double dist = 0.0;
    for (size_t i = 0; i < dim; ++i) {
      const double d = static_cast<double>(members[j].values[i]) - centroid[i];
      dist += d * d;
    }
    if (dist < best_dist) {  // strict: ties keep the earliest member
      best_dist = dist;
      best = j;
    }
  }
  return best;
}

Embedder::Embedder(EndpointProfile profile, std::filesystem::path cache_dir,
                   size_t batch_size)
    : profile_(std::move(profile)), batch_size_(std::max<size_t>(1, batch_size)) {
  std::filesystem::create_directories(cache_dir);
  cache_file_ = cache_dir / (sanitize_for_filename(profile_.model_id.empty()
                                                       ? profile_.name
                                                       : profile_.model_id) +
                             ".jsonl");
  load_cache();
}

void Embedder::load_cache() {
  if (!std::filesystem::exists(cache_file_)) return;
  repair_jsonl_tail(cache_file_);
  std::ifstream in(cache_file_, std::ios::binary);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("t") || !j.contains("v")) continue;
    EmbeddingVector v{j.at("v").get<std::vector<float>>()};
    cache_.emplace(j.at("t").get<std::string>(), std::move(v));
  }
}

void Embedder::append_cache(
    const std::vector<std::pair<std::string, EmbeddingVector>>& fresh) {
  if (fresh.empty()) return;
  std::ofstream out(cache_file_, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to embedding cache " + cache_file_.string());
  for (const auto& [text, vec] : fresh) {
    const json j = {{"t", text}, {"v", vec.values}};
    out << j.dump() << '\n';
  }
}

std::vector<EmbeddingVector> Embedder::embed(const std::vector<std::string>& texts) {
  // Resolve misses first so duplicated texts embed once.
  std::vector<std::string> missing;
  std::unordered_set<std::string> queued;
  for (const auto& t : texts) {
    if (cache_.count(t) || queued.count(t)) {
      ++hits_;
      continue;
    }
    ++misses_;
    missing.push_back(t);
    queued.insert(t);
  }
  std::vector<std::pair<std::string, EmbeddingVector>> fresh;
  for (size_t start = 0; start < missing.size(); start += batch_size_) {
    const size_t end = std::min(missing.size(), start + batch_size_);
    const std::vector<std::string> chunk(missing.begin() + static_cast<long>(start),
                                         missing.begin() + static_cast<long>(end));
    const auto vectors = embed_texts(chunk, profile_);
    for (size_t i = 0; i < chunk.size(); ++i) {
      EmbeddingVector v{vectors[i]};
      if (profile_.embedding_dim > 0 &&
          v.values.size() != static_cast<size_t>(profile_.embedding_dim)) {
        throw GatewayError("embedding dim mismatch for cached text");
      }
      v.normalize();
      cache_.emplace(chunk[i], v);
      fresh.emplace_back(chunk[i], std::move(v));
    }
  }
  append_cache(fresh);

  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(cache_.at(t));
  return out;
}

TropeFilter::TropeFilter(std::string prompt_template, EndpointProfile profile)
    : template_(std::move(prompt_template)), profile_(std::move(profile)) {
  if (template_.find("<Statement>") == std::string::npos ||
      template_.find("<Comment>") == std::string::npos) {
    throw ValidationError("filter template lacks <Statement>/<Comment> placeholders");
  }
}

TropeFilter TropeFilter::from_file(const std::filesystem::path& template_path,
                                   EndpointProfile profile) {
  return TropeFilter(read_text_file(template_path), std::move(profile));
}

std::string TropeFilter::build_prompt(const std::string& proposition_text,
                                      const std::string& candidate_sentence) const {
  std::string prompt = template_;
  prompt = replace_all(std::move(prompt), "<Statement>", proposition_text);
  prompt = replace_all(std::move(prompt), "<Comment>", candidate_sentence);
  return prompt;
}

namespace {

std::optional<TropeFilter::Verdict> parse_filter_verdict(const std::string& reply) {
  std::string value;
  const json j = json::parse(reply, nullptr, false);
  if (!j.is_discarded() && j.is_object() && j.contains("Decision") &&
      j.at("Decision").is_string()) {
    value = j.at("Decision").get<std::string>();
  }
  if (value.empty()) {
    const std::string key = "\"Decision\"";
    size_t pos = reply.find(key);
    if (pos != std::string::npos) {
      pos += key.size();
      while (pos < reply.size() && (std::isspace(static_cast<unsigned char>(reply[pos])) ||
                                    reply[pos] == ':')) {
        ++pos;
      }
      if (pos < reply.size() && reply[pos] == '"') {
        const size_t end = reply.find('"', pos + 1);
        if (end != std::string::npos) value = reply.substr(pos + 1, end - pos - 1);
      }
    }
  }
  const std::string norm = to_lower(trim(value));
  if (norm == "argument") return TropeFilter::Verdict::Argument;
  if (norm == "no argument") return TropeFilter::Verdict::NoArgument;
  return std::nullopt;
}

}  // namespace

TropeFilter::Verdict TropeFilter::classify(const std::string& proposition_text,
                                           const std::string& candidate_sentence) const {
  const std::string prompt = build_prompt(proposition_text, candidate_sentence);
  for (int ask = 0; ask < 2; ++ask) {
    const CompletionResult result =
        complete(CompletionTask{.prompt_key = to_hex16(fnv1a64(prompt)), .text = prompt},
                 profile_);
    if (result.status != CompletionStatus::Ok) {
      throw GatewayError("trope filter endpoint failed: " + result.error);
    }
    if (const auto verdict = parse_filter_verdict(result.text)) return *verdict;
  }
  return Verdict::Unparseable;
}

std::string paraphrase_trope(const std::string& representative_text,
                             const std::string& prompt_template,
                             const EndpointProfile& profile) {
  const std::string prompt =
      replace_all(prompt_template, "[TROPE]", representative_text);
  try {
    const CompletionResult result =
        complete(CompletionTask{.prompt_key = to_hex16(fnv1a64(prompt)), .text = prompt},
                 profile);
    if (result.status == CompletionStatus::Ok && !trim(result.text).empty()) {
      return trim(result.text);
    }
  } catch (const std::exception&) {
    // fall through to the representative
  }
  return representative_text;
}

std::string make_trope_id(int proposition_id, StanceSide side,
                          const std::string& representative_text) {
  const std::string canonical = "trope|" + std::to_string(proposition_id) + "|" +
                                to_string(side) + "|" + representative_text;
  return to_hex16(fnv1a64(canonical));
}

void assign_constituents(Trope& trope,
                         const std::map<std::string, std::string>& model_by_record) {
  trope.assigned_record_ids.clear();
  trope.per_model_counts.clear();
  for (const auto& unit : trope.constituents) {
    trope.assigned_record_ids.insert(unit.record_id);
    const auto it = model_by_record.find(unit.record_id);
    const std::string model = it == model_by_record.end() ? "unknown" : it->second;
    ++trope.per_model_counts[model];
  }
}

double EntailmentStats::frac_entail() const {
  return scored() == 0 ? 0.0 : static_cast<double>(n_entail) / static_cast<double>(scored());
}
double EntailmentStats::frac_neutral() const {
  return scored() == 0 ? 0.0 : static_cast<double>(n_neutral) / static_cast<double>(scored());
}
double EntailmentStats::frac_contradict() const {
  return scored() == 0 ? 0.0
                       : static_cast<double>(n_contradict) / static_cast<double>(scored());
}

EntailmentStats entailment_precision(const Trope& trope, const EndpointProfile& nli_profile,
                                     int max_in_flight) {
  if (max_in_flight < 1) throw ValidationError("max_in_flight must be >= 1");
  const size_t n = trope.constituents.size();
  std::vector<NliResult> results(n);
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= n) return;
      results[i] =
          nli_classify(trope.constituents[i].text, trope.paraphrase, nli_profile);
    }
  };
  std::vector<std::thread> workers;
  const size_t n_workers = std::min<size_t>(static_cast<size_t>(max_in_flight), n);
  workers.reserve(n_workers);
  for (size_t i = 0; i < n_workers; ++i) workers.emplace_back(worker);
  for (auto& t : workers) t.join();

  EntailmentStats stats;
  for (const auto& result : results) {
    if (!result.verdict) {
      ++stats.n_failed;
      continue;
    }
    switch (*result.verdict) {
      case NliVerdict::Entail: ++stats.n_entail; break;
      case NliVerdict::Neutral: ++stats.n_neutral; break;
      case NliVerdict::Contradict: ++stats.n_contradict; break;
    }
  }
  return stats;
}

EntailmentStats aggregate_entailment(const std::vector<EntailmentStats>& per_trope) {
  EntailmentStats total;
  for (const auto& s : per_trope) {
    total.n_entail += s.n_entail;
    total.n_neutral += s.n_neutral;
    total.n_contradict += s.n_contradict;
    total.n_failed += s.n_failed;
  }
  return total;
}

TropePipelineResult extract_tropes(const std::vector<ResponseRecord>& open_records,
                                   const std::map<std::string, StanceRecord>& stances,
                                   const SurveyConfig& survey, Embedder& embedder,
                                   const TropePipelineConfig& config) {
  validate_params(config.clustering);
  TropePipelineResult result;

  std::map<std::string, std::string> model_by_record;
  std::set<int> proposition_ids;
  for (const auto& r : open_records) {
    model_by_record[r.record_id] = r.model_id;
    if (r.setting == Setting::Open) proposition_ids.insert(r.proposition_id);
  }

  std::optional<TropeFilter> filter;
  if (config.run_filter) {
    if (!config.filter_profile) {
      throw ValidationError("trope filter enabled but no filter profile configured");
    }
    filter.emplace(config.filter_template, *config.filter_profile);
  }

  for (int prop_id : proposition_ids) {
    const Proposition* prop = survey.find_proposition(prop_id);
    if (!prop) {
      throw ValidationError("open records reference unknown proposition " +
                            std::to_string(prop_id));
    }
    PartitionResult parts = partition(open_records, stances, prop_id);
    result.dropped_none_replies += parts.dropped_none;

    for (StancePartition* part : {&parts.support, &parts.oppose}) {
      if (part->units.empty()) continue;
      std::vector<std::string> texts;
      texts.reserve(part->units.size());
      for (const auto& u : part->units) texts.push_back(u.text);
      const std::vector<EmbeddingVector> vectors = embedder.embed(texts);

      const ClusterResult clustering = cluster(vectors, config.clustering);
      result.noise_sentences += clustering.noise.size();
      result.clusters_found += clustering.clusters.size();

      for (const auto& members : clustering.clusters) {
        std::vector<EmbeddingVector> member_vectors;
        member_vectors.reserve(members.size());
        for (int m : members) member_vectors.push_back(vectors[static_cast<size_t>(m)]);
        const size_t rep_local = representative_index(member_vectors);
        const SentenceUnit& representative =
            part->units[static_cast<size_t>(members[rep_local])];

        if (filter) {
          const TropeFilter::Verdict verdict =
              filter->classify(prop->text, representative.text);
          if (verdict != TropeFilter::Verdict::Argument) {
            result.rejected.push_back(RejectedCandidate{
                .proposition_id = prop_id,
                .side = part->side,
                .representative_text = representative.text,
                .cluster_size = members.size(),
                .unparseable_verdict = verdict == TropeFilter::Verdict::Unparseable,
            });
            continue;
          }
        }

        Trope trope;
        trope.proposition_id = prop_id;
        trope.side = part->side;
        trope.representative_text = representative.text;
        trope.trope_id = make_trope_id(prop_id, part->side, representative.text);
        for (int m : members) trope.constituents.push_back(part->units[static_cast<size_t>(m)]);
        assign_constituents(trope, model_by_record);
        trope.paraphrase =
            config.run_paraphrase && config.paraphrase_profile
                ? paraphrase_trope(trope.representative_text, config.paraphrase_template,
                                   *config.paraphrase_profile)
                : trope.representative_text;

        if (config.run_nli) {
          if (!config.nli_profile) {
            throw ValidationError("NLI stage enabled but no NLI profile configured");
          }
          result.entailment_by_trope[trope.trope_id] =
              entailment_precision(trope, *config.nli_profile, config.max_in_flight);
        }
        result.tropes.push_back(std::move(trope));
      }
    }
  }

  std::sort(result.tropes.begin(), result.tropes.end(), [](const Trope& a, const Trope& b) {
    return std::tie(a.proposition_id, a.side, a.trope_id) <
           std::tie(b.proposition_id, b.side, b.trope_id);
  });
  return result;
}

std::string trope_to_json_line(const Trope& trope, const EntailmentStats* stats) {
  json constituents = json::array();
  for (const auto& u : trope.constituents) {
    constituents.push_back({{"record_id", u.record_id},
                            {"sentence_index", u.sentence_index},
                            {"text", u.text}});
  }
  json j = {
      {"trope_id", trope.trope_id},
      {"proposition_id", trope.proposition_id},
      {"side", to_string(trope.side)},
      {"representative", trope.representative_text},
      {"paraphrase", trope.paraphrase},
      {"constituents", constituents},
      {"assigned_record_ids", trope.assigned_record_ids},
      {"per_model_counts", trope.per_model_counts},
  };
  if (stats) {
    j["entailment"] = {{"entail", stats->n_entail},
                       {"neutral", stats->n_neutral},
                       {"contradict", stats->n_contradict},
                       {"failed", stats->n_failed}};
  }
  return j.dump();
}

Trope trope_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  Trope t;
  t.trope_id = j.at("trope_id").get<std::string>();
  t.proposition_id = j.at("proposition_id").get<int>();
  t.side = stance_side_from_string(j.at("side").get<std::string>());
  t.representative_text = j.at("representative").get<std::string>();
  t.paraphrase = j.at("paraphrase").get<std::string>();
  for (const auto& u : j.at("constituents")) {
    t.constituents.push_back(SentenceUnit{
        .record_id = u.at("record_id").get<std::string>(),
        .sentence_index = u.at("sentence_index").get<int>(),
        .text = u.at("text").get<std::string>(),
    });
  }
  for (const auto& id : j.at("assigned_record_ids")) {
    t.assigned_record_ids.insert(id.get<std::string>());
  }
  for (const auto& [model, count] : j.at("per_model_counts").items()) {
    t.per_model_counts[model] = count.get<int>();
  }
  return t;
}

}  // namespace tropeforge
