#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "tropeforge/stance.hpp"

namespace tropeforge {

// Total variation distance between two 3-bucket distributions: half the L1
// distance, in [0, 1].
double tvd(const ResponseDistribution& p, const ResponseDistribution& q);

struct MeanTvdResult {
  double mean = 0.0;
  std::map<int, double> per_proposition;
  std::vector<int> excluded;  // propositions missing an open or closed side
};

// Mean per-proposition TVD between the open and closed cells of one
// demographic value. Throws when no proposition has both sides.
MeanTvdResult mean_tvd(const std::map<int, ResponseDistribution>& open_cells,
                       const std::map<int, ResponseDistribution>& closed_cells);

// |A n B| / |A u B|; both empty yields 1 by convention (sets jaccard_empty_warning).
template <typename T>
double jaccard(const std::set<T>& a, const std::set<T>& b, bool* warned_empty = nullptr) {
  if (a.empty() && b.empty()) {
    if (warned_empty) *warned_empty = true;
    return 1.0;
  }
  size_t intersection = 0;
  for (const auto& x : a) intersection += b.count(x);
  const size_t unions = a.size() + b.size() - intersection;
  return static_cast<double>(intersection) / static_cast<double>(unions);
}

struct CoefficientEstimate {
  std::string level;
  double coefficient = 0.0;
  double std_error = 0.0;
  double t_stat = 0.0;
  double p_value = 1.0;  // NaN when exact (zero-variance sentinel)
  bool exact = false;    // exactly-fit effect: excluded from significance stars
};

struct RegressionResult {
  std::string dependent;
  CoefficientEstimate intercept;
  std::vector<CoefficientEstimate> coefficients;  // non-reference levels, sorted
  std::string reference_category;
  size_t n_samples = 0;
  double r_squared = 0.0;
  double rss = 0.0;
  int dof = 0;

  const CoefficientEstimate* find_level(const std::string& level) const;
};

// OLS of y on a one-hot encoding of `categories` with `reference_level`
// dropped into the intercept. Normal-equations solve with QR; two-sided
// p-values from the t distribution with n-k degrees of freedom.
RegressionResult ols_fit(const std::vector<double>& y,
                         const std::vector<std::string>& categories,
                         const std::string& reference_level,
                         const std::string& dependent_name = "y");

struct DispersionSample {
  std::string category;  // persona category
  int proposition_id = 0;
  double value = 0.0;    // numeric stance value
};

struct DispersionCell {
  std::string category;
  int proposition_id = 0;
  double stddev = 0.0;  // sample (n-1) standard deviation
  size_t n = 0;
  bool flagged_singleton = false;
};

// Per-(category, proposition) sample standard deviation; singleton cells are
// flagged rather than dropped silently.
std::vector<DispersionCell> stddev_by_category(const std::vector<DispersionSample>& samples);

}  // namespace tropeforge
