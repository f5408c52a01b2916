#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace tropeforge {

// Test instrumentation: tracks how many stub requests are in flight at once.
struct ConcurrencyProbe {
  std::atomic<int> current{0};
  std::atomic<int> peak{0};

  void enter();
  void leave();
};

// One scripted behavior. A rule applies when every match_all substring occurs
// in the prompt; the first applicable rule wins.
struct StubRule {
  std::vector<std::string> match_all;
  std::string reply;      // may contain "{key}", replaced by a per-prompt hash
  int fail_times = 0;     // attempts 1..fail_times fail with a transient error
  int latency_ms = 0;
};

struct StubScript {
  std::vector<StubRule> rules;
  std::string default_reply;  // empty: a hash-derived sentence is generated
  int default_latency_ms = 0;
};

StubScript load_stub_script(const std::filesystem::path& path);
StubScript parse_stub_script(const std::string& json_text);

// Deterministic reply for (seed, prompt) under the script. Pure.
std::string stub_reply(const StubScript& script, std::uint64_t seed,
                       const std::string& prompt);

// Deterministic L2-normalized pseudo-embedding of (seed, text).
std::vector<float> stub_embedding(std::uint64_t seed, const std::string& text, int dim);

}  // namespace tropeforge
