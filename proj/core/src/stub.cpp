#include "tropeforge/stub.hpp"

#include <cmath>

#include <json.hpp>

#include "tropeforge/errors.hpp"
#include "tropeforge/util.hpp"

namespace tropeforge {

namespace {

using nlohmann::json;

constexpr std::uint64_t kEmbedSalt = 0x5eed5eedull;

bool rule_matches(const StubRule& rule, const std::string& prompt) {
  for (const auto& needle : rule.match_all) {
    if (prompt.find(needle) == std::string::npos) return false;
  }
  return true;
}

}  // namespace

void ConcurrencyProbe::enter() {
  const int now = current.fetch_add(1) + 1;
  int prev = peak.load();
  while (now > prev && !peak.compare_exchange_weak(prev, now)) {
  }
}

void ConcurrencyProbe::leave() { current.fetch_sub(1); }

StubScript parse_stub_script(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid stub script: ") + e.what());
  }
  StubScript script;
  script.default_reply = j.value("default_reply", std::string());
  script.default_latency_ms = j.value("default_latency_ms", 0);
  for (const auto& row : j.value("rules", json::array())) {
    StubRule rule;
    for (const auto& m : row.value("match_all", json::array())) {
      const std::string needle = m.get<std::string>();
      if (needle.empty()) throw ValidationError("invalid stub script: empty match pattern");
      rule.match_all.push_back(needle);
    }
    if (rule.match_all.empty()) {
      throw ValidationError("invalid stub script: rule without match_all patterns");
    }
    rule.reply = row.value("reply", std::string());
    rule.fail_times = row.value("fail_times", 0);
    rule.latency_ms = row.value("latency_ms", 0);
    if (rule.fail_times < 0 || rule.latency_ms < 0) {
      throw ValidationError("invalid stub script: negative fail_times/latency_ms");
    }
    script.rules.push_back(std::move(rule));
  }
  return script;
}

StubScript load_stub_script(const std::filesystem::path& path) {
  return parse_stub_script(read_text_file(path));
}

std::string stub_reply(const StubScript& script, std::uint64_t seed,
                       const std::string& prompt) {
  const std::string key = to_hex16(fnv1a64(prompt, seed ^ 0x9e3779b97f4a7c15ULL));
  for (const auto& rule : script.rules) {
    if (rule_matches(rule, prompt)) {
      return replace_all(rule.reply, "{key}", key);
    }
  }
  if (!script.default_reply.empty()) {
    return replace_all(script.default_reply, "{key}", key);
  }
  return "My considered position on this is recorded as note " + key + ".";
}

std::vector<float> stub_embedding(std::uint64_t seed, const std::string& text, int dim) {
  SplitMix64 rng(fnv1a64(text, seed ^ kEmbedSalt));
  std::vector<float> v(static_cast<size_t>(dim));
  // Box-Muller over splitmix uniforms keeps the output platform-stable.
  for (int i = 0; i < dim; i += 2) {
    double u1 = rng.next_unit();
    double u2 = rng.next_unit();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    v[static_cast<size_t>(i)] = static_cast<float>(r * std::cos(2.0 * M_PI * u2));
    if (i + 1 < dim) {
      v[static_cast<size_t>(i + 1)] = static_cast<float>(r * std::sin(2.0 * M_PI * u2));
    }
  }
  double norm_sq = 0.0;
  for (float x : v) norm_sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(norm_sq);
  if (norm > 0) {
    for (auto& x : v) x = static_cast<float>(static_cast<double>(x) / norm);
  } else {
    v[0] = 1.0f;
  }
  return v;
}

}  // namespace tropeforge
