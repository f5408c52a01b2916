#include <httplib.h>

#include "tropeforge/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "tropeforge/errors.hpp"
#include "tropeforge/util.hpp"

namespace tropeforge {

namespace {

using nlohmann::json;

struct AttemptOutcome {
  bool ok = false;
  bool transient = false;  // retry-worthy
  std::string text;
  std::string error;
};

std::string auth_token(const EndpointProfile& profile) {
  if (profile.auth_ref.empty()) return {};
  const char* value = std::getenv(profile.auth_ref.c_str());
  return value ? std::string(value) : std::string();
}

AttemptOutcome stub_chat_attempt(const std::string& prompt, const EndpointProfile& profile,
                                 int attempt) {
  AttemptOutcome out;
  const StubScript& script = *profile.stub_script;
  const StubRule* matched = nullptr;
  for (const auto& rule : script.rules) {
    bool all = true;
    for (const auto& needle : rule.match_all) {
      if (prompt.find(needle) == std::string::npos) { all = false; break; }
    }
    if (all) { matched = &rule; break; }
  }
  const int latency_ms = matched ? matched->latency_ms : script.default_latency_ms;
  if (profile.stub_probe) profile.stub_probe->enter();
  if (latency_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(latency_ms));
  }
  if (profile.stub_probe) profile.stub_probe->leave();
  if (matched && attempt <= matched->fail_times) {
    out.transient = true;
    out.error = "scripted transient failure (attempt " + std::to_string(attempt) + ")";
    return out;
  }
  out.text = stub_reply(script, profile.stub_seed, prompt);
  if (out.text.empty()) {
    out.error = "empty completion";
    return out;
  }
  out.ok = true;
  return out;
}

AttemptOutcome http_chat_attempt(const std::string& prompt, const EndpointProfile& profile) {
  AttemptOutcome out;
  httplib::Client client(profile.base_url);
  client.set_connection_timeout(std::chrono::duration<double>(profile.request_timeout_seconds));
  client.set_read_timeout(std::chrono::duration<double>(profile.request_timeout_seconds));
  const std::string token = auth_token(profile);
  if (!token.empty()) client.set_bearer_token_auth(token);

  json body = {
      {"model", profile.model_id},
      {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
      {"temperature", profile.temperature},
      {"max_tokens", profile.max_tokens},
  };
  auto res = client.Post("/v1/chat/completions", body.dump(), "application/json");
  if (!res) {
    out.transient = true;
    out.error = "connection failure: " + httplib::to_string(res.error());
    return out;
  }
  if (res->status == 429 || res->status >= 500) {
    out.transient = true;
    out.error = "http status " + std::to_string(res->status);
    return out;
  }
  if (res->status != 200) {
    out.error = "http status " + std::to_string(res->status);
    return out;
  }
  try {
    const json reply = json::parse(res->body);
    out.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    out.error = std::string("malformed endpoint response: ") + e.what();
    return out;
  }
  if (out.text.empty()) {
    out.error = "empty completion";
    return out;
  }
  out.ok = true;
  return out;
}

void backoff_sleep(const BackoffPolicy& policy, const std::string& key, int attempt) {
  double delay = policy.base_seconds;
  for (int i = 1; i < attempt; ++i) delay *= policy.factor;
  SplitMix64 rng(fnv1a64(key) ^ static_cast<std::uint64_t>(attempt));
  delay *= 1.0 + policy.jitter * (2.0 * rng.next_unit() - 1.0);
  if (delay > 0) {
    std::this_thread::sleep_for(std::chrono::duration<double>(delay));
  }
}

constexpr const char* kNliChatTemplate =
    "You are a natural language inference classifier. Decide whether the premise "
    "entails the hypothesis. Respond with exactly one word: entail, neutral, or "
    "contradict.\nPremise: \"{premise}\"\nHypothesis: \"{hypothesis}\"\nAnswer:";

}  // namespace

std::string to_string(EndpointKind k) {
  switch (k) {
    case EndpointKind::Chat: return "chat";
    case EndpointKind::Embedding: return "embedding";
    case EndpointKind::Nli: return "nli";
    case EndpointKind::Stub: return "stub";
  }
  return "?";
}

EndpointKind endpoint_kind_from_string(const std::string& s) {
  if (s == "chat") return EndpointKind::Chat;
  if (s == "embedding") return EndpointKind::Embedding;
  if (s == "nli") return EndpointKind::Nli;
  if (s == "stub") return EndpointKind::Stub;
  throw ValidationError("unknown endpoint kind: " + s);
}

std::string to_string(CompletionStatus s) {
  switch (s) {
    case CompletionStatus::Ok: return "ok";
    case CompletionStatus::Failed: return "failed";
    case CompletionStatus::Refused: return "refused";
  }
  return "?";
}

EndpointProfile stub_backend(std::uint64_t seed, StubScript script) {
  EndpointProfile profile;
  profile.name = "stub";
  profile.kind = EndpointKind::Stub;
  profile.model_id = "stub-model";
  profile.stub_seed = seed;
  profile.stub_script = std::make_shared<const StubScript>(std::move(script));
  profile.stub_probe = std::make_shared<ConcurrencyProbe>();
  profile.backoff.base_seconds = 0.0;  // scripted failures should not slow tests
  return profile;
}

CompletionResult complete(const CompletionTask& task, const EndpointProfile& profile) {
  CompletionResult result;
  result.prompt_key = task.prompt_key;
  const auto start = std::chrono::steady_clock::now();

  if (!profile.is_stub() && profile.stub_script) {
    throw ValidationError("non-stub profile carries a stub script");
  }
  if (profile.is_stub() && !profile.stub_script) {
    throw ValidationError("stub profile lacks a script");
  }

  const int max_attempts = std::max(1, profile.backoff.max_attempts);
  AttemptOutcome outcome;
  int attempt = 0;
  for (attempt = 1; attempt <= max_attempts; ++attempt) {
    try {
      outcome = profile.is_stub() ? stub_chat_attempt(task.text, profile, attempt)
                                  : http_chat_attempt(task.text, profile);
    } catch (const std::exception& e) {
      outcome = AttemptOutcome{.ok = false, .transient = false, .text = {}, .error = e.what()};
    }
    if (outcome.ok || !outcome.transient) break;
    if (attempt < max_attempts) backoff_sleep(profile.backoff, task.prompt_key, attempt);
  }
  result.attempts = std::min(attempt, max_attempts);
  result.text = outcome.text;
  result.status = outcome.ok ? CompletionStatus::Ok : CompletionStatus::Failed;
  result.error = outcome.error;
  result.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - start);
  return result;
}

std::vector<CompletionResult> run_batch(
    const std::vector<CompletionTask>& tasks, const EndpointProfile& profile,
    int max_in_flight, const std::function<void(const CompletionResult&)>& on_result) {
  if (max_in_flight < 1) throw ValidationError("max_in_flight must be >= 1");
  std::vector<CompletionResult> results;
  results.reserve(tasks.size());
  if (tasks.empty()) return results;

  std::atomic<size_t> next{0};
  std::mutex sink_mutex;
  std::exception_ptr sink_error;
  const size_t n_workers = std::min<size_t>(static_cast<size_t>(max_in_flight), tasks.size());

  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      CompletionResult r = complete(tasks[i], profile);
      std::lock_guard<std::mutex> lock(sink_mutex);
      if (on_result && !sink_error) {
        try {
          on_result(r);
        } catch (...) {
          // surfaced on the issuing thread once all workers drain
          sink_error = std::current_exception();
        }
      }
      results.push_back(std::move(r));
    }
  };

  std::vector<std::thread> workers;
  workers.reserve(n_workers);
  for (size_t i = 0; i < n_workers; ++i) workers.emplace_back(worker);
  for (auto& t : workers) t.join();
  if (sink_error) std::rethrow_exception(sink_error);
  return results;
}

std::vector<std::vector<float>> embed_texts(const std::vector<std::string>& texts,
                                            const EndpointProfile& profile) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  if (texts.empty()) return out;

  if (profile.is_stub()) {
    for (const auto& t : texts) {
      out.push_back(stub_embedding(profile.stub_seed, t, profile.embedding_dim));
    }
    return out;
  }

  const int max_attempts = std::max(1, profile.backoff.max_attempts);
  std::string last_error;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    httplib::Client client(profile.base_url);
    client.set_connection_timeout(std::chrono::duration<double>(profile.request_timeout_seconds));
    client.set_read_timeout(std::chrono::duration<double>(profile.request_timeout_seconds));
    const std::string token = auth_token(profile);
    if (!token.empty()) client.set_bearer_token_auth(token);

    json body = {{"model", profile.model_id}, {"input", texts}};
    auto res = client.Post("/v1/embeddings", body.dump(), "application/json");
    bool transient = false;
    if (!res) {
      transient = true;
      last_error = "connection failure: " + httplib::to_string(res.error());
    } else if (res->status == 429 || res->status >= 500) {
      transient = true;
      last_error = "http status " + std::to_string(res->status);
    } else if (res->status != 200) {
      throw GatewayError("embedding endpoint returned status " + std::to_string(res->status));
    } else {
      try {
        const json reply = json::parse(res->body);
        std::vector<std::vector<float>> vectors(texts.size());
        for (const auto& item : reply.at("data")) {
          const size_t index = item.at("index").get<size_t>();
          if (index >= vectors.size()) throw GatewayError("embedding index out of range");
          vectors[index] = item.at("embedding").get<std::vector<float>>();
        }
        for (const auto& v : vectors) {
          if (profile.embedding_dim > 0 &&
              v.size() != static_cast<size_t>(profile.embedding_dim)) {
            throw GatewayError("embedding dim mismatch: expected " +
                               std::to_string(profile.embedding_dim) + ", got " +
                               std::to_string(v.size()));
          }
        }
        return vectors;
      } catch (const json::exception& e) {
        throw GatewayError(std::string("malformed embedding response: ") + e.what());
      }
    }
    if (!transient) break;
    if (attempt < max_attempts) backoff_sleep(profile.backoff, "embeddings", attempt);
  }
  throw GatewayError("embedding request failed: " + last_error);
}

std::string to_string(NliVerdict v) {
  switch (v) {
    case NliVerdict::Entail: return "entail";
    case NliVerdict::Neutral: return "neutral";
    case NliVerdict::Contradict: return "contradict";
  }
  return "?";
}

std::optional<NliVerdict> nli_verdict_from_text(const std::string& reply) {
  const std::string lower = to_lower(reply);
  const size_t entail_pos = lower.find("entail");
  const size_t neutral_pos = lower.find("neutral");
  const size_t contra_pos = lower.find("contradict");
  size_t best = std::string::npos;
  std::optional<NliVerdict> verdict;
  if (entail_pos < best) { best = entail_pos; verdict = NliVerdict::Entail; }
  if (neutral_pos < best) { best = neutral_pos; verdict = NliVerdict::Neutral; }
  if (contra_pos < best) { best = contra_pos; verdict = NliVerdict::Contradict; }
  return verdict;
}

NliResult nli_classify(const std::string& premise, const std::string& hypothesis,
                       const EndpointProfile& profile) {
  NliResult result;

  if (!profile.is_stub() && !profile.nli_route.empty()) {
    // Dedicated classification route: {"premise", "hypothesis"} -> {"label"}.
    httplib::Client client(profile.base_url);
    client.set_connection_timeout(std::chrono::duration<double>(profile.request_timeout_seconds));
    client.set_read_timeout(std::chrono::duration<double>(profile.request_timeout_seconds));
    const std::string token = auth_token(profile);
    if (!token.empty()) client.set_bearer_token_auth(token);
    json body = {{"premise", premise}, {"hypothesis", hypothesis}};
    auto res = client.Post(profile.nli_route, body.dump(), "application/json");
    if (!res || res->status != 200) {
      result.error = !res ? "connection failure" : "http status " + std::to_string(res->status);
      return result;
    }
    try {
      const json reply = json::parse(res->body);
      result.verdict = nli_verdict_from_text(reply.at("label").get<std::string>());
      if (!result.verdict) result.error = "unrecognized NLI label";
    } catch (const json::exception& e) {
      result.error = std::string("malformed NLI response: ") + e.what();
    }
    return result;
  }

  std::string prompt = kNliChatTemplate;
  prompt = replace_all(std::move(prompt), "{premise}", premise);
  prompt = replace_all(std::move(prompt), "{hypothesis}", hypothesis);
  const CompletionResult completion =
      complete(CompletionTask{.prompt_key = to_hex16(fnv1a64(prompt)), .text = prompt}, profile);
  if (completion.status != CompletionStatus::Ok) {
    result.error = completion.error.empty() ? "completion failed" : completion.error;
    return result;
  }
  result.verdict = nli_verdict_from_text(completion.text);
  if (!result.verdict) result.error = "unrecognized NLI verdict: " + completion.text;
  return result;
}

std::map<std::string, EndpointProfile> load_endpoint_profiles(
    const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid endpoint profile file: ") + e.what());
  }
  std::map<std::string, EndpointProfile> profiles;
  for (const auto& row : j.value("profiles", json::array())) {
    EndpointProfile p;
    p.name = row.at("name").get<std::string>();
    p.kind = endpoint_kind_from_string(row.value("kind", std::string("chat")));
    p.base_url = row.value("base_url", std::string());
    p.model_id = row.value("model_id", std::string());
    p.temperature = row.value("temperature", 0.0);
    p.max_tokens = row.value("max_tokens", 1024);
    p.auth_ref = row.value("auth_ref", std::string());
    p.request_timeout_seconds = row.value("request_timeout_seconds", 60.0);
    p.embedding_dim = row.value("embedding_dim", 384);
    p.nli_route = row.value("nli_route", std::string());
    if (row.contains("backoff")) {
      const auto& b = row.at("backoff");
      p.backoff.base_seconds = b.value("base_seconds", 1.0);
      p.backoff.factor = b.value("factor", 2.0);
      p.backoff.jitter = b.value("jitter", 0.2);
      p.backoff.max_attempts = b.value("max_attempts", 5);
    }
    if (p.kind == EndpointKind::Stub) {
      if (!row.contains("seed")) {
        throw ValidationError("stub profile '" + p.name + "' requires a seed");
      }
      p.stub_seed = row.at("seed").get<std::uint64_t>();
      if (p.model_id.empty()) p.model_id = "stub-" + p.name;
      if (row.contains("script_path")) {
        const std::filesystem::path script_path =
            path.parent_path() / row.at("script_path").get<std::string>();
        p.stub_script = std::make_shared<const StubScript>(load_stub_script(script_path));
      } else {
        p.stub_script = std::make_shared<const StubScript>();
      }
      p.stub_probe = std::make_shared<ConcurrencyProbe>();
      p.backoff.base_seconds = 0.0;
    } else if (p.base_url.empty()) {
      throw ValidationError("profile '" + p.name + "' needs a base_url");
    }
    if (profiles.count(p.name)) {
      throw ValidationError("duplicate endpoint profile name: " + p.name);
    }
    profiles.emplace(p.name, std::move(p));
  }
  return profiles;
}

}  // namespace tropeforge
