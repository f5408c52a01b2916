#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tropeforge/pipeline.hpp"
#include "tropeforge/survey.hpp"
#include "tropeforge/tropes.hpp"
#include "tropeforge/util.hpp"

namespace testutil {

inline std::filesystem::path core_data_dir() { return TF_CORE_DATA_DIR; }
inline std::filesystem::path test_data_dir() { return TF_TEST_DATA_DIR; }

inline tropeforge::DataPaths data_paths() {
  return tropeforge::DataPaths::defaults(core_data_dir());
}

inline tropeforge::SurveyConfig default_survey() {
  return tropeforge::load_survey_from(data_paths());
}

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    dir_ = std::filesystem::temp_directory_path() /
           ("tf_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path operator/(const std::string& name) const { return dir_ / name; }

 private:
  std::filesystem::path dir_;
};

// Deterministic unit vector, uniform direction.
inline tropeforge::EmbeddingVector random_unit_vector(tropeforge::SplitMix64& rng, int dim) {
  tropeforge::EmbeddingVector v;
  v.values.resize(static_cast<size_t>(dim));
  for (int i = 0; i < dim; ++i) {
    // Box-Muller
    double u1 = rng.next_unit();
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = rng.next_unit();
    v.values[static_cast<size_t>(i)] = static_cast<float>(
        std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2));
  }
  v.normalize();
  return v;
}

inline size_t count_occurrences(const std::string& haystack, const std::string& needle) {
  size_t count = 0;
  for (size_t pos = haystack.find(needle); pos != std::string::npos;
       pos = haystack.find(needle, pos + 1)) {
    ++count;
  }
  return count;
}

}  // namespace testutil
