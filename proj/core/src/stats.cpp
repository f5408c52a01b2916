#include "tropeforge/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "tropeforge/errors.hpp"

namespace tropeforge {

double tvd(const ResponseDistribution& p, const ResponseDistribution& q) {
  return 0.5 * (std::abs(p.p_agree - q.p_agree) + std::abs(p.p_disagree - q.p_disagree) +
                std::abs(p.p_none - q.p_none));
}

MeanTvdResult mean_tvd(const std::map<int, ResponseDistribution>& open_cells,
                       const std::map<int, ResponseDistribution>& closed_cells) {
  MeanTvdResult result;
  std::set<int> all_props;
  for (const auto& [id, d] : open_cells) all_props.insert(id);
  for (const auto& [id, d] : closed_cells) all_props.insert(id);

  double sum = 0.0;
  for (int id : all_props) {
    const auto open_it = open_cells.find(id);
    const auto closed_it = closed_cells.find(id);
    if (open_it == open_cells.end() || closed_it == closed_cells.end()) {
      result.excluded.push_back(id);
      continue;
    }
    const double d = tvd(open_it->second, closed_it->second);
    result.per_proposition[id] = d;
    sum += d;
  }
  if (result.per_proposition.empty()) {
    throw ValidationError("no proposition has both an open and a closed distribution");
  }
  result.mean = sum / static_cast<double>(result.per_proposition.size());
  return result;
}

const CoefficientEstimate* RegressionResult::find_level(const std::string& level) const {
  for (const auto& c : coefficients)
    if (c.level == level) return &c;
  return nullptr;
}

RegressionResult ols_fit(const std::vector<double>& y,
                         const std::vector<std::string>& categories,
                         const std::string& reference_level,
                         const std::string& dependent_name) {
  const size_t n = y.size();
  if (n != categories.size()) {
    throw ValidationError("ols_fit: y and categories length mismatch");
  }
  if (n == 0) throw ValidationError("ols_fit: empty sample");

  std::map<std::string, size_t> level_counts;
  for (const auto& c : categories) ++level_counts[c];
  if (level_counts.size() < 2) {
    throw ValidationError("ols_fit: need at least 2 levels, got " +
                          std::to_string(level_counts.size()));
  }
  if (!level_counts.count(reference_level)) {
    throw ValidationError("ols_fit: reference level '" + reference_level +
                          "' absent from data (rank-deficient design)");
  }
  std::vector<std::string> levels;  // non-reference, sorted for determinism
  for (const auto& [level, count] : level_counts) {
    if (level == reference_level) continue;
    if (count < 2) {
      throw ValidationError("ols_fit: level '" + level + "' has " +
                            std::to_string(count) + " sample(s), need >= 2");
    }
    levels.push_back(level);
  }

  const size_t k = 1 + levels.size();
  if (n <= k) {
    throw ValidationError("ols_fit: insufficient samples (" + std::to_string(n) +
                          ") for " + std::to_string(k) + " parameters");
  }

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                            static_cast<Eigen::Index>(k));
  Eigen::VectorXd yv(static_cast<Eigen::Index>(n));
  std::map<std::string, size_t> level_column;
  for (size_t j = 0; j < levels.size(); ++j) level_column[levels[j]] = j + 1;
  for (size_t i = 0; i < n; ++i) {
    X(static_cast<Eigen::Index>(i), 0) = 1.0;
    const auto it = level_column.find(categories[i]);
    if (it != level_column.end()) {
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(it->second)) = 1.0;
    }
    yv(static_cast<Eigen::Index>(i)) = y[i];
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < static_cast<Eigen::Index>(k)) {
    throw ValidationError("ols_fit: rank-deficient design");
  }
  const Eigen::VectorXd beta = qr.solve(yv);
  const Eigen::VectorXd residuals = yv - X * beta;
  const double rss = residuals.squaredNorm();
  const int dof = static_cast<int>(n - k);

  const double y_mean = yv.mean();
  const double tss = (yv.array() - y_mean).square().sum();

  // Scale-aware zero-variance detection: an exactly fit model has no
  // residual noise to estimate standard errors from.
  const double y_scale = std::max(1.0, yv.array().abs().maxCoeff());
  const bool exact_fit = rss <= 1e-20 * y_scale * y_scale * static_cast<double>(n);
  const double sigma2 = exact_fit ? 0.0 : rss / static_cast<double>(dof);

  const Eigen::MatrixXd xtx_inv =
      (X.transpose() * X).ldlt().solve(Eigen::MatrixXd::Identity(
          static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)));

  const boost::math::students_t t_dist(static_cast<double>(dof));
  const double coef_tiny = 1e-10 * y_scale;

  auto estimate = [&](size_t j, const std::string& level) {
    CoefficientEstimate e;
    e.level = level;
    e.coefficient = beta(static_cast<Eigen::Index>(j));
    const double var_j = sigma2 * xtx_inv(static_cast<Eigen::Index>(j),
                                          static_cast<Eigen::Index>(j));
    e.std_error = var_j > 0.0 ? std::sqrt(var_j) : 0.0;
    if (exact_fit || e.std_error == 0.0) {
      if (std::abs(e.coefficient) <= coef_tiny) {
        // No effect and no noise: nothing to call significant.
        e.t_stat = 0.0;
        e.p_value = 1.0;
      } else {
        // Nonzero effect with zero residual variance: 0/0 standard error.
        e.exact = true;
        e.t_stat = 0.0;
        e.p_value = std::numeric_limits<double>::quiet_NaN();
      }
      return e;
    }
    e.t_stat = e.coefficient / e.std_error;
    e.p_value = 2.0 * boost::math::cdf(boost::math::complement(t_dist, std::abs(e.t_stat)));
    return e;
  };

  RegressionResult result;
  result.dependent = dependent_name;
  result.reference_category = reference_level;
  result.n_samples = n;
  result.rss = rss;
  result.dof = dof;
  result.r_squared = tss > 0.0 ? 1.0 - rss / tss : (exact_fit ? 1.0 : 0.0);
  result.intercept = estimate(0, "(intercept)");
  for (size_t j = 0; j < levels.size(); ++j) {
    result.coefficients.push_back(estimate(j + 1, levels[j]));
  }
  return result;
}

std::vector<DispersionCell> stddev_by_category(const std::vector<DispersionSample>& samples) {
  std::map<std::pair<std::string, int>, std::vector<double>> cells;
  for (const auto& s : samples) {
    cells[{s.category, s.proposition_id}].push_back(s.value);
  }
  std::vector<DispersionCell> out;
  for (const auto& [key, values] : cells) {
    DispersionCell cell;
    cell.category = key.first;
    cell.proposition_id = key.second;
    cell.n = values.size();
    if (values.size() < 2) {
      cell.flagged_singleton = true;
      out.push_back(std::move(cell));
      continue;
    }
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    cell.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    out.push_back(std::move(cell));
  }
  return out;
}

}  // namespace tropeforge
