#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <json.hpp>
#include <set>

#include "helpers.hpp"
#include "oracles/brute_dbscan.hpp"
#include "tropeforge/errors.hpp"
#include "tropeforge/tropes.hpp"
#include "tropeforge/util.hpp"

using namespace tropeforge;
using nlohmann::json;

namespace {

EmbeddingVector vec(std::initializer_list<float> values) {
  EmbeddingVector v;
  v.values = values;
  return v;
}

// Canonical set-of-sets form for partition comparison.
oracle::BruteResult canonical(const ClusterResult& result) {
  oracle::BruteResult out;
  for (const auto& members : result.clusters) {
    out.clusters.insert(std::set<int>(members.begin(), members.end()));
  }
  out.noise.insert(result.noise.begin(), result.noise.end());
  return out;
}

// Random instance generator shared with the acceptance gate: a few planted
// blobs plus uniform background noise, in low dimension so neighborhoods mix.
std::vector<EmbeddingVector> random_instance(SplitMix64& rng, size_t max_n, int max_dim) {
  const int dim = 2 + static_cast<int>(rng.next() % static_cast<std::uint64_t>(max_dim - 1));
  const size_t n = 20 + rng.next() % (max_n - 19);
  const size_t n_blobs = 1 + rng.next() % 4;
  std::vector<EmbeddingVector> centers;
  for (size_t b = 0; b < n_blobs; ++b) centers.push_back(testutil::random_unit_vector(rng, dim));
  std::vector<EmbeddingVector> points;
  while (points.size() < n) {
    if (rng.next() % 3 == 0) {
      points.push_back(testutil::random_unit_vector(rng, dim));
    } else {
      // jitter around a blob center
      const auto& c = centers[rng.next() % centers.size()];
      EmbeddingVector p = c;
      for (auto& x : p.values) {
        x += static_cast<float>((rng.next_unit() - 0.5) * 0.35);
      }
      p.normalize();
      points.push_back(std::move(p));
    }
  }
  return points;
}

SentenceUnit unit(const std::string& record, int index, const std::string& text) {
  return SentenceUnit{.record_id = record, .sentence_index = index, .text = text};
}

ResponseRecord open_record(const std::string& id, int prop, const std::string& text,
                           const std::string& model = "m",
                           const std::string& persona = "far left") {
  ResponseRecord r;
  r.record_id = id;
  r.model_id = model;
  r.proposition_id = prop;
  r.persona_category = "PoliticalOrientation";
  r.persona_value = persona;
  r.instruction_id = 11;
  r.setting = Setting::Open;
  r.raw_text = text;
  return r;
}

StanceRecord stance_of(const std::string& id, StanceLabel label) {
  StanceRecord s;
  s.record_id = id;
  s.label = label;
  s.source = StanceSource::OpenJudge;
  return s;
}

}  // namespace

TEST_CASE("segment basics") {
  CHECK(segment("r", "I agree. It works.").size() == 2);
  CHECK(segment("r", "").empty());
  CHECK(segment("r", "   \n\n  ").empty());

  SUBCASE("indices are contiguous and order-preserving") {
    const auto units = segment("r", "One. Two! Three?");
    REQUIRE(units.size() == 3);
    for (size_t i = 0; i < units.size(); ++i) {
      CHECK(units[i].sentence_index == static_cast<int>(i));
      CHECK(units[i].record_id == "r");
    }
    CHECK(units[0].text == "One.");
    CHECK(units[1].text == "Two!");
    CHECK(units[2].text == "Three?");
  }

  SUBCASE("units are trimmed, non-empty, and contain a letter") {
    const auto units = segment("r", "See list:\n- \n- Alpha beta.\n123.\n");
    for (const auto& u : units) {
      CHECK(!u.text.empty());
      CHECK(u.text == trim(u.text));
    }
    // "- " and "123." carry no letters and are dropped
    REQUIRE(units.size() == 2);
    CHECK(units[1].text == "- Alpha beta.");
  }
}

TEST_CASE("segment matches the hand-annotated gold fixture at >= 95% F1") {
  const json fixture =
      json::parse(read_text_file(testutil::test_data_dir() / "segmentation_gold.json"));
  const auto& replies = fixture.at("replies");
  REQUIRE(replies.size() == 20);

  size_t gold_total = 0, predicted_total = 0, matched = 0;
  for (const auto& row : replies) {
    const auto predicted = segment("r", row.at("text").get<std::string>());
    std::multiset<std::string> gold_units, predicted_units;
    for (const auto& u : row.at("units")) gold_units.insert(u.get<std::string>());
    for (const auto& u : predicted) predicted_units.insert(u.text);
    gold_total += gold_units.size();
    predicted_total += predicted_units.size();
    for (const auto& g : gold_units) {
      const auto it = predicted_units.find(g);
      if (it != predicted_units.end()) {
        predicted_units.erase(it);
        ++matched;
      }
    }
  }
  const double f1 = 2.0 * static_cast<double>(matched) /
                    static_cast<double>(gold_total + predicted_total);
  INFO("segmentation F1: ", f1, " (", matched, " matched of ", gold_total, " gold)");
  CHECK(f1 >= 0.95);
}

TEST_CASE("embedding vectors normalize and measure cosine distance") {
  EmbeddingVector v = vec({3.0f, 4.0f});
  CHECK(v.norm() == doctest::Approx(5.0));
  v.normalize();
  CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(cosine_distance(v, v) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(cosine_distance(vec({1, 0}), vec({0, 1})) == doctest::Approx(1.0));
  CHECK(cosine_distance(vec({1, 0}), vec({-1, 0})) == doctest::Approx(2.0));
  CHECK_THROWS_AS(cosine_distance(vec({1, 0}), vec({1, 0, 0})), ValidationError);
}

TEST_CASE("embedder caches by text with a persistent disk cache") {
  testutil::TempDir tmp("embed_cache");
  EndpointProfile profile = stub_backend(21, StubScript{});
  profile.model_id = "stub-embed";
  profile.embedding_dim = 32;

  std::vector<EmbeddingVector> first;
  {
    Embedder embedder(profile, tmp / "cache");
    first = embedder.embed({"alpha", "beta", "alpha"});
    REQUIRE(first.size() == 3);
    CHECK(first[0].values == first[2].values);  // duplicate text, identical vector
    CHECK(embedder.cache_misses() == 2);
    CHECK(embedder.cache_hits() == 1);
    // self-similarity after normalization
    CHECK(cosine_distance(first[0], first[2]) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(first[0].norm() == doctest::Approx(1.0).epsilon(1e-6));
  }
  {
    Embedder warm(profile, tmp / "cache");
    const auto again = warm.embed({"alpha", "beta"});
    CHECK(warm.cache_misses() == 0);
    CHECK(warm.cache_hits() == 2);
    CHECK(again[0].values == first[0].values);
    CHECK(again[1].values == first[1].values);
  }
}

TEST_CASE("cluster edge behaviors") {
  ClusteringParams params;

  SUBCASE("parameter validation") {
    params.epsilon = 0.0;
    CHECK_THROWS_AS(cluster({}, params), ValidationError);
    params.epsilon = 2.5;
    CHECK_THROWS_AS(cluster({}, params), ValidationError);
    params = ClusteringParams{};
    params.min_pts = 0;
    CHECK_THROWS_AS(cluster({}, params), ValidationError);
  }

  SUBCASE("mutually distant points are all noise") {
    SplitMix64 rng(5);
    std::vector<EmbeddingVector> points;
    for (int i = 0; i < 30; ++i) points.push_back(testutil::random_unit_vector(rng, 64));
    // in 64 dims random unit vectors sit near distance 1 from each other
    const auto result = cluster(points, ClusteringParams{.epsilon = 0.15, .min_pts = 3,
                                                         .min_cluster_size = 2});
    CHECK(result.clusters.empty());
    CHECK(result.noise.size() == points.size());
  }

  SUBCASE("twelve identical vectors form one cluster of twelve") {
    std::vector<EmbeddingVector> points(12, vec({1, 0, 0}));
    const auto result = cluster(points, ClusteringParams{.epsilon = 0.15, .min_pts = 8,
                                                         .min_cluster_size = 10});
    REQUIRE(result.clusters.size() == 1);
    CHECK(result.clusters[0].size() == 12);
    CHECK(result.noise.empty());
  }

  SUBCASE("min_cluster_size drops a 9-member cluster and keeps a 10-member one") {
    std::vector<EmbeddingVector> points;
    for (int i = 0; i < 9; ++i) points.push_back(vec({1, 0, 0}));
    for (int i = 0; i < 10; ++i) points.push_back(vec({0, 1, 0}));
    const auto result = cluster(points, ClusteringParams{.epsilon = 0.15, .min_pts = 8,
                                                         .min_cluster_size = 10});
    REQUIRE(result.clusters.size() == 1);
    CHECK(result.clusters[0].size() == 10);
    CHECK(result.noise.size() == 9);
    // the surviving cluster is the second blob
    CHECK(result.clusters[0].front() == 9);
  }

  SUBCASE("empty input clusters to nothing") {
    const auto result = cluster({}, params);
    CHECK(result.clusters.empty());
    CHECK(result.noise.empty());
  }
}

TEST_CASE("cluster equals the brute-force reference on 100 random instances") {
  SplitMix64 rng(4242);
  for (int trial = 0; trial < 100; ++trial) {
    const auto points = random_instance(rng, 200, 16);
    ClusteringParams params;
    params.epsilon = 0.05 + rng.next_unit() * 0.4;
    params.min_pts = 2 + static_cast<int>(rng.next() % 7);
    params.min_cluster_size = 2 + static_cast<int>(rng.next() % 10);

    const auto fast = canonical(cluster(points, params));
    const auto brute = oracle::brute_dbscan(points, params.epsilon, params.min_pts,
                                            params.min_cluster_size);
    REQUIRE(fast.clusters == brute.clusters);
    REQUIRE(fast.noise == brute.noise);

    // every point lands in exactly one cluster or in noise
    size_t assigned = fast.noise.size();
    for (const auto& c : fast.clusters) assigned += c.size();
    REQUIRE(assigned == points.size());
  }
}

TEST_CASE("cluster partition is stable under input permutation (as set of sets)") {
  SplitMix64 rng(99);
  const auto points = random_instance(rng, 120, 8);
  ClusteringParams params{.epsilon = 0.25, .min_pts = 4, .min_cluster_size = 4};
  const auto base = cluster(points, params);

  std::vector<size_t> order(points.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.next() % i]);
  }
  std::vector<EmbeddingVector> shuffled;
  for (size_t i : order) shuffled.push_back(points[i]);
  const auto permuted = cluster(shuffled, params);

  // map shuffled indices back to their original identity before comparing
  oracle::BruteResult base_sets = canonical(base);
  oracle::BruteResult permuted_sets;
  for (const auto& members : permuted.clusters) {
    std::set<int> mapped;
    for (int m : members) mapped.insert(static_cast<int>(order[static_cast<size_t>(m)]));
    permuted_sets.clusters.insert(std::move(mapped));
  }
  for (int m : permuted.noise) {
    permuted_sets.noise.insert(static_cast<int>(order[static_cast<size_t>(m)]));
  }
  CHECK(base_sets.clusters == permuted_sets.clusters);
  CHECK(base_sets.noise == permuted_sets.noise);
}

TEST_CASE("representative selection") {
  SUBCASE("single member represents itself") {
    CHECK(representative_index({vec({1, 0})}) == 0);
  }
  SUBCASE("symmetric members tie-break to the earliest") {
    // centroid (0.5, 0.5); both members equidistant
    CHECK(representative_index({vec({1, 0}), vec({0, 1})}) == 0);
  }
  SUBCASE("matches the exhaustive argmin on random clusters") {
    SplitMix64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<EmbeddingVector> members;
      const size_t n = 2 + rng.next() % 9;
      const int dim = 3 + static_cast<int>(rng.next() % 6);
      for (size_t i = 0; i < n; ++i) members.push_back(testutil::random_unit_vector(rng, dim));

      // exhaustive oracle
      std::vector<double> centroid(static_cast<size_t>(dim), 0.0);
      for (const auto& m : members) {
        for (int d = 0; d < dim; ++d) centroid[static_cast<size_t>(d)] += m.values[static_cast<size_t>(d)];
      }
      for (auto& c : centroid) c /= static_cast<double>(n);
      size_t best = 0;
      double best_dist = 1e300;
      for (size_t i = 0; i < n; ++i) {
        double dist = 0;
        for (int d = 0; d < dim; ++d) {
          const double delta =
              static_cast<double>(members[i].values[static_cast<size_t>(d)]) -
              centroid[static_cast<size_t>(d)];
          dist += delta * delta;
        }
        if (dist < best_dist) {
          best_dist = dist;
          best = i;
        }
      }
      REQUIRE(representative_index(members) == best);
    }
  }
  SUBCASE("empty cluster is an error") {
    CHECK_THROWS_AS(representative_index({}), ValidationError);
  }
}

TEST_CASE("partition routes replies by collapsed stance") {
  std::vector<ResponseRecord> records;
  std::map<std::string, StanceRecord> stances;
  int made = 0;
  auto add = [&](StanceLabel label, int n_sentences) {
    const std::string id = "r" + std::to_string(made++);
    std::string text;
    for (int s = 0; s < n_sentences; ++s) {
      text += "Sentence number " + std::to_string(s) + " here. ";
    }
    records.push_back(open_record(id, 1, text));
    stances[id] = stance_of(id, label);
  };
  add(StanceLabel::Agree, 2);
  add(StanceLabel::StronglyAgree, 3);
  add(StanceLabel::Agree, 1);
  add(StanceLabel::Disagree, 2);
  add(StanceLabel::StronglyDisagree, 4);
  add(StanceLabel::None, 5);

  const auto parts = partition(records, stances, 1);
  CHECK(parts.support.units.size() == 6);   // 2 + 3 + 1
  CHECK(parts.oppose.units.size() == 6);    // 2 + 4
  CHECK(parts.dropped_none == 1);

  SUBCASE("all None leaves both partitions empty") {
    std::map<std::string, StanceRecord> none_stances;
    for (const auto& r : records) none_stances[r.record_id] = stance_of(r.record_id, StanceLabel::None);
    const auto empty_parts = partition(records, none_stances, 1);
    CHECK(empty_parts.support.units.empty());
    CHECK(empty_parts.oppose.units.empty());
    CHECK(empty_parts.dropped_none == records.size());
  }

  SUBCASE("membership matches a per-record routing table") {
    std::set<std::string> support_ids, oppose_ids;
    for (const auto& u : parts.support.units) support_ids.insert(u.record_id);
    for (const auto& u : parts.oppose.units) oppose_ids.insert(u.record_id);
    CHECK(support_ids == std::set<std::string>{"r0", "r1", "r2"});
    CHECK(oppose_ids == std::set<std::string>{"r3", "r4"});
  }

  SUBCASE("units arrive sorted by (record_id, sentence_index)") {
    const auto& units = parts.support.units;
    for (size_t i = 1; i < units.size(); ++i) {
      REQUIRE(std::tie(units[i - 1].record_id, units[i - 1].sentence_index) <
              std::tie(units[i].record_id, units[i].sentence_index));
    }
  }
}

TEST_CASE("trope filter classifies candidates through the moderator prompt") {
  const std::string tmpl = read_text_file(testutil::data_paths().trope_filter_prompt);

  SUBCASE("prompt substitution") {
    const TropeFilter filter(tmpl, stub_backend(1, StubScript{}));
    const std::string prompt =
        filter.build_prompt("Strict immigration policy is important.", "Candidate sentence.");
    CHECK(prompt.find("Strict immigration policy is important.") != std::string::npos);
    CHECK(prompt.find("Candidate sentence.") != std::string::npos);
    CHECK(prompt.find("<Statement>") == std::string::npos);
    CHECK(prompt.find("<Comment>") == std::string::npos);
  }

  SUBCASE("the shipped template carries the labeled worked examples") {
    // The argument/no-argument exemplars live inside the prompt of record;
    // assert the pairings survive transcription.
    auto labeled = [&](const std::string& sentence, const std::string& verdict) {
      const size_t at = tmpl.find(sentence);
      if (at == std::string::npos) return false;
      const size_t decision = tmpl.find("\"Decision\": \"" + verdict + "\"", at);
      if (decision == std::string::npos) return false;
      // the verdict must belong to this example, before the next input block
      const size_t next_input = tmpl.find("input:", at);
      return next_input == std::string::npos || decision < next_input;
    };
    CHECK(labeled("I think that Immigrants bring diversity and new ideas to a country.",
                  "Argument"));
    CHECK(labeled("Immigration is a complex issue that requires a nuanced approach.",
                  "No argument"));
    CHECK(labeled("I do believe that the USA should adopt a universal basic income.",
                  "No argument"));
  }

  SUBCASE("argument and no-argument verdicts route by the scripted judge") {
    // Rule patterns must be distinctive of the substituted candidate, never of
    // the template's own few-shot text.
    const auto profile = stub_backend(1, parse_stub_script(R"({"rules":[
      {"match_all":["Carbon taxes shift incentives"],
       "reply":"{\"Explanation\": \"States a mechanism.\", \"Decision\": \"Argument\"}"}],
      "default_reply":"{\"Explanation\": \"Pure stance statement.\", \"Decision\": \"No argument\"}"})"));
    const TropeFilter filter(tmpl, profile);
    CHECK(filter.classify("Fuel should be taxed.",
                          "Carbon taxes shift incentives toward cleaner energy.") ==
          TropeFilter::Verdict::Argument);
    CHECK(filter.classify("Any proposition.", "I simply support this proposal.") ==
          TropeFilter::Verdict::NoArgument);
  }

  SUBCASE("unparseable verdicts re-ask once, then reject") {
    const auto profile =
        stub_backend(1, parse_stub_script(R"({"default_reply":"mumble mumble"})"));
    const TropeFilter filter(tmpl, profile);
    CHECK(filter.classify("P.", "Candidate.") == TropeFilter::Verdict::Unparseable);
  }
}

TEST_CASE("paraphrase stage") {
  const std::string tmpl = read_text_file(testutil::data_paths().paraphrase_prompt);

  SUBCASE("worked example through a scripted paraphraser") {
    const auto profile = stub_backend(1, parse_stub_script(R"({"rules":[
      {"match_all":["theatres and museums play a valuable role"],
       "reply":"Theatres and museums provide valuable cultural, artistic, and educational experiences."}]})"));
    const std::string result = paraphrase_trope(
        "Firstly, it is important to recognize that theatres and museums play a valuable "
        "role in our society by providing cultural, artistic, and educational experiences.",
        tmpl, profile);
    CHECK(result ==
          "Theatres and museums provide valuable cultural, artistic, and educational "
          "experiences.");
  }

  SUBCASE("echoing stub keeps the sentence") {
    const auto profile = stub_backend(1, parse_stub_script(R"({"rules":[
      {"match_all":["Short claim."], "reply":"Short claim."}]})"));
    CHECK(paraphrase_trope("Short claim.", tmpl, profile) == "Short claim.");
  }

  SUBCASE("endpoint failure falls back to the representative") {
    const auto broken = stub_backend(1, parse_stub_script(
        R"({"rules":[{"match_all":["claim"],"reply":"x","fail_times":99}]})"));
    CHECK(paraphrase_trope("Fantastic claim here.", tmpl, broken) == "Fantastic claim here.");
  }
}

TEST_CASE("assign back-maps constituents to replies and models") {
  Trope trope;
  trope.constituents = {unit("r1", 0, "A."), unit("r1", 2, "B."), unit("r2", 1, "A.")};
  const std::map<std::string, std::string> models{{"r1", "model-a"}, {"r2", "model-b"}};
  assign_constituents(trope, models);
  CHECK(trope.assigned_record_ids == std::set<std::string>{"r1", "r2"});
  CHECK(trope.per_model_counts.at("model-a") == 2);
  CHECK(trope.per_model_counts.at("model-b") == 1);

  SUBCASE("single-model cluster has one counts key") {
    Trope single;
    single.constituents = {unit("r1", 0, "A."), unit("r1", 1, "B.")};
    assign_constituents(single, models);
    CHECK(single.per_model_counts.size() == 1);
  }
}

TEST_CASE("entailment precision") {
  Trope trope;
  trope.paraphrase = "The hypothesis.";

  SUBCASE("constant entail verdicts give a unit vector") {
    for (int i = 0; i < 7; ++i) trope.constituents.push_back(unit("r", i, "sentence"));
    const auto profile =
        stub_backend(1, parse_stub_script(R"({"default_reply":"entail"})"));
    const auto stats = entailment_precision(trope, profile);
    CHECK(stats.frac_entail() == 1.0);
    CHECK(stats.frac_neutral() == 0.0);
    CHECK(stats.frac_contradict() == 0.0);
    CHECK(stats.scored() == 7);
  }

  SUBCASE("scripted 581/405/14 split reproduces the fractions exactly") {
    trope.constituents.clear();
    for (int i = 0; i < 581; ++i) trope.constituents.push_back(unit("r", i, "alpha premise"));
    for (int i = 0; i < 405; ++i)
      trope.constituents.push_back(unit("r", 581 + i, "beta premise"));
    for (int i = 0; i < 14; ++i)
      trope.constituents.push_back(unit("r", 986 + i, "gamma premise"));
    const auto profile = stub_backend(1, parse_stub_script(R"({"rules":[
      {"match_all":["alpha"], "reply":"entail"},
      {"match_all":["beta"], "reply":"neutral"},
      {"match_all":["gamma"], "reply":"contradict"}]})"));
    const auto stats = entailment_precision(trope, profile);
    CHECK(stats.scored() == 1000);
    CHECK(stats.frac_entail() == 581.0 / 1000.0);
    CHECK(stats.frac_neutral() == 405.0 / 1000.0);
    CHECK(stats.frac_contradict() == 14.0 / 1000.0);
  }

  SUBCASE("single constituent yields a one-hot vector") {
    trope.constituents = {unit("r", 0, "only sentence")};
    const auto profile =
        stub_backend(1, parse_stub_script(R"({"default_reply":"neutral"})"));
    const auto stats = entailment_precision(trope, profile);
    CHECK(stats.frac_neutral() == 1.0);
    CHECK(stats.scored() == 1);
  }

  SUBCASE("failed pairs are excluded and counted") {
    trope.constituents = {unit("r", 0, "good premise"), unit("r", 1, "broken premise")};
    const auto profile = stub_backend(1, parse_stub_script(R"({"rules":[
      {"match_all":["broken"], "reply":"x", "fail_times":99}],
      "default_reply":"entail"})"));
    const auto stats = entailment_precision(trope, profile);
    CHECK(stats.scored() == 1);
    CHECK(stats.n_failed == 1);
    CHECK(stats.frac_entail() == 1.0);
  }

  SUBCASE("pairs run concurrently but never beyond max_in_flight") {
    trope.constituents.clear();
    for (int i = 0; i < 16; ++i) trope.constituents.push_back(unit("r", i, "slow premise"));
    const auto profile = stub_backend(1, parse_stub_script(R"({"rules":[
      {"match_all":["slow"], "reply":"entail", "latency_ms":10}]})"));
    const auto stats = entailment_precision(trope, profile, 4);
    CHECK(stats.scored() == 16);
    CHECK(profile.stub_probe->peak.load() <= 4);
    CHECK(profile.stub_probe->peak.load() >= 2);
  }

  SUBCASE("aggregate is the sentence-weighted sum of counts") {
    EntailmentStats a;
    a.n_entail = 3;
    a.n_neutral = 1;
    EntailmentStats b;
    b.n_entail = 1;
    b.n_contradict = 1;
    const auto total = aggregate_entailment({a, b});
    CHECK(total.scored() == 6);
    CHECK(total.frac_entail() == doctest::Approx(4.0 / 6.0));
  }
}

TEST_CASE("extract_tropes recovers a repeated justification end to end") {
  const SurveyConfig survey = testutil::default_survey();

  // 12 agreeing replies share justification J; every reply adds unique noise.
  std::vector<ResponseRecord> records;
  std::map<std::string, StanceRecord> stances;
  const std::string J = "Shared prosperity depends on fair access to opportunity.";
  for (int i = 0; i < 12; ++i) {
    const std::string id = "rec" + std::to_string(100 + i);
    const std::string text = "I agree with this proposition. " + J +
                             " Unique remark number " + std::to_string(i * 7919) + ".";
    records.push_back(open_record(id, 2, text));
    stances[id] = stance_of(id, i % 2 == 0 ? StanceLabel::Agree : StanceLabel::StronglyAgree);
  }
  // two disagreeing replies: not enough to cluster
  for (int i = 0; i < 2; ++i) {
    const std::string id = "opp" + std::to_string(i);
    records.push_back(open_record(id, 2, "I disagree with this proposition."));
    stances[id] = stance_of(id, StanceLabel::Disagree);
  }

  EndpointProfile embed_profile = stub_backend(31, StubScript{});
  embed_profile.model_id = "stub-embed";
  embed_profile.embedding_dim = 64;
  testutil::TempDir tmp("extract");
  Embedder embedder(embed_profile, tmp / "cache");

  TropePipelineConfig config;
  config.clustering = ClusteringParams{.epsilon = 0.15, .min_pts = 8, .min_cluster_size = 10};
  config.run_filter = true;
  config.filter_template = read_text_file(testutil::data_paths().trope_filter_prompt);
  config.filter_profile = stub_backend(1, parse_stub_script(R"({"rules":[
    {"match_all":["Shared prosperity depends"],
     "reply":"{\"Explanation\": \"An argument.\", \"Decision\": \"Argument\"}"}],
    "default_reply":"{\"Explanation\": \"No reasoning.\", \"Decision\": \"No argument\"}"})"));

  const auto result = extract_tropes(records, stances, survey, embedder, config);
  REQUIRE(result.tropes.size() == 1);
  const Trope& trope = result.tropes[0];
  CHECK(trope.representative_text == J);
  CHECK(trope.paraphrase == J);  // paraphrase stage disabled -> pass-through
  CHECK(trope.proposition_id == 2);
  CHECK(trope.side == StanceSide::Support);
  CHECK(trope.constituents.size() == 12);
  std::set<std::string> expected_ids;
  for (int i = 0; i < 12; ++i) expected_ids.insert("rec" + std::to_string(100 + i));
  CHECK(trope.assigned_record_ids == expected_ids);
  CHECK(trope.per_model_counts.at("m") == 12);
  // the stance markers clustered too but were filtered as non-arguments
  CHECK(result.rejected.size() == 1);
  CHECK(result.rejected[0].representative_text == "I agree with this proposition.");
  // unique noise sentences never cluster
  CHECK(result.noise_sentences == 12 + 2);  // 12 unique remarks + 2 oppose markers

  SUBCASE("trope ids are stable content hashes") {
    CHECK(trope.trope_id == make_trope_id(2, StanceSide::Support, J));
    const auto again = extract_tropes(records, stances, survey, embedder, config);
    REQUIRE(again.tropes.size() == 1);
    CHECK(again.tropes[0].trope_id == trope.trope_id);
  }

  SUBCASE("tropes round-trip through JSONL") {
    const std::string line = trope_to_json_line(trope);
    const Trope back = trope_from_json_line(line);
    CHECK(back.trope_id == trope.trope_id);
    CHECK(back.representative_text == trope.representative_text);
    CHECK(back.constituents.size() == trope.constituents.size());
    CHECK(back.assigned_record_ids == trope.assigned_record_ids);
    CHECK(back.per_model_counts == trope.per_model_counts);
  }
}
