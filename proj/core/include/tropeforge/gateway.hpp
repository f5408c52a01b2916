#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tropeforge/stub.hpp"

namespace tropeforge {

enum class EndpointKind { Chat, Embedding, Nli, Stub };

std::string to_string(EndpointKind k);
EndpointKind endpoint_kind_from_string(const std::string& s);

struct BackoffPolicy {
  double base_seconds = 1.0;
  double factor = 2.0;
  double jitter = 0.2;  // +-20%
  int max_attempts = 5;
};

struct EndpointProfile {
  std::string name;
  EndpointKind kind = EndpointKind::Stub;
  std::string base_url;
  std::string model_id;
  double temperature = 0.0;  // judge/filter roles stay at 0
  int max_tokens = 1024;
  std::string auth_ref;  // env var holding the credential; never the credential itself
  double request_timeout_seconds = 60.0;
  BackoffPolicy backoff;
  int embedding_dim = 384;
  // Dedicated NLI classification route; empty means classify through chat.
  std::string nli_route;

  // Stub backends only.
  std::uint64_t stub_seed = 0;
  std::shared_ptr<const StubScript> stub_script;
  std::shared_ptr<ConcurrencyProbe> stub_probe;

  bool is_stub() const { return kind == EndpointKind::Stub; }
};

// Builds a Stub profile whose replies are a pure function of (seed, prompt).
EndpointProfile stub_backend(std::uint64_t seed, StubScript script);

struct CompletionTask {
  std::string prompt_key;
  std::string text;
};

enum class CompletionStatus { Ok, Failed, Refused };

std::string to_string(CompletionStatus s);

struct CompletionResult {
  std::string prompt_key;
  std::string text;
  CompletionStatus status = CompletionStatus::Failed;
  int attempts = 1;
  std::chrono::milliseconds latency{0};
  std::string error;
};

// Single completion with retry/backoff on transient failures (timeout, 429,
// 5xx). Permanent failures and malformed responses return Failed immediately.
CompletionResult complete(const CompletionTask& task, const EndpointProfile& profile);

// Runs every task exactly once with at most max_in_flight outstanding
// requests. Results arrive in completion order; the prompt_key multiset is
// preserved. on_result, when given, is called serially under a lock.
std::vector<CompletionResult> run_batch(
    const std::vector<CompletionTask>& tasks, const EndpointProfile& profile,
    int max_in_flight,
    const std::function<void(const CompletionResult&)>& on_result = nullptr);

// Embeddings for a batch of texts, in input order. Throws GatewayError after
// retry exhaustion or on a dimension mismatch against the profile.
std::vector<std::vector<float>> embed_texts(const std::vector<std::string>& texts,
                                            const EndpointProfile& profile);

enum class NliVerdict { Entail, Neutral, Contradict };

std::string to_string(NliVerdict v);
std::optional<NliVerdict> nli_verdict_from_text(const std::string& reply);

struct NliResult {
  std::optional<NliVerdict> verdict;  // nullopt: endpoint failed or unparseable
  std::string error;
};

NliResult nli_classify(const std::string& premise, const std::string& hypothesis,
                       const EndpointProfile& profile);

// Named profiles for the pipeline roles (generator, judge, filter,
// paraphraser, embedder, nli), loaded from a JSON profile file.
std::map<std::string, EndpointProfile> load_endpoint_profiles(
    const std::filesystem::path& path);

}  // namespace tropeforge
