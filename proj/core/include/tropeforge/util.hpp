#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tropeforge {

// 64-bit FNV-1a. Used for prompt keys, trope ids, and the stub backend's
// deterministic text generation, so it must stay byte-stable forever.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string to_hex16(std::uint64_t value);

// splitmix64: tiny deterministic generator with platform-independent output.
struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}
  std::uint64_t next();
  double next_unit();  // uniform in [0, 1)
};

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool contains_ci(std::string_view haystack, std::string_view needle);
std::vector<std::string> split_lines(std::string_view text);
std::string replace_all(std::string text, std::string_view from, std::string_view to);

// "26040" -> "26,040"
std::string format_thousands(std::uint64_t n);

// Shortest decimal form that is stable across runs; used by every CSV writer.
std::string format_double(double v);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

// An interrupted writer can leave a partial record after the last newline of
// an append-only JSONL file. Truncates those trailing bytes so reloading and
// appending stay line-aligned; returns the number of bytes dropped.
std::size_t repair_jsonl_tail(const std::filesystem::path& path);

// RFC3339 UTC timestamp for record provenance.
std::string now_utc_iso8601();

std::string csv_escape(std::string_view field);

}  // namespace tropeforge
