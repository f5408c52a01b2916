#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "oracles/ols_oracle.hpp"
#include "tropeforge/errors.hpp"
#include "tropeforge/stats.hpp"

using namespace tropeforge;

namespace {

ResponseDistribution dist(double a, double d, double n) {
  return ResponseDistribution{.p_agree = a, .p_disagree = d, .p_none = n};
}

ResponseDistribution random_dist(SplitMix64& rng) {
  double a = rng.next_unit(), b = rng.next_unit(), c = rng.next_unit();
  const double sum = a + b + c;
  if (sum == 0.0) return dist(1, 0, 0);
  return dist(a / sum, b / sum, c / sum);
}

}  // namespace

TEST_CASE("tvd trivial identities hold exactly") {
  CHECK(tvd(dist(1, 0, 0), dist(1, 0, 0)) == 0.0);
  CHECK(tvd(dist(1, 0, 0), dist(0, 1, 0)) == 1.0);
  CHECK(tvd(dist(0.5, 0.5, 0), dist(0.25, 0.25, 0.5)) == 0.5);  // hand L1 oracle
}

TEST_CASE("tvd metric properties over 1000 random pairs") {
  SplitMix64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_dist(rng);
    const auto q = random_dist(rng);
    const auto r = random_dist(rng);
    const double pq = tvd(p, q);
    REQUIRE(pq >= 0.0);
    REQUIRE(pq <= 1.0);
    REQUIRE(pq == tvd(q, p));
    REQUIRE(tvd(p, r) <= pq + tvd(q, r) + 1e-15);  // triangle
    REQUIRE(tvd(p, p) == 0.0);
  }
}

TEST_CASE("mean_tvd") {
  SUBCASE("identical open/closed data -> 0") {
    std::map<int, ResponseDistribution> cells{{1, dist(0.4, 0.4, 0.2)},
                                              {2, dist(1, 0, 0)}};
    CHECK(mean_tvd(cells, cells).mean == 0.0);
  }
  SUBCASE("62 propositions with TVD 1 average to 1") {
    std::map<int, ResponseDistribution> open, closed;
    for (int id = 1; id <= 62; ++id) {
      open[id] = dist(1, 0, 0);
      closed[id] = dist(0, 1, 0);
    }
    CHECK(mean_tvd(open, closed).mean == 1.0);
  }
  SUBCASE("mean oracle over {0, 0.5, 1}") {
    std::map<int, ResponseDistribution> open{{1, dist(1, 0, 0)},
                                             {2, dist(0.5, 0.5, 0)},
                                             {3, dist(1, 0, 0)}};
    std::map<int, ResponseDistribution> closed{{1, dist(1, 0, 0)},
                                               {2, dist(0.25, 0.25, 0.5)},
                                               {3, dist(0, 1, 0)}};
    const auto result = mean_tvd(open, closed);
    CHECK(result.mean == doctest::Approx(0.5));
    CHECK(result.per_proposition.at(1) == 0.0);
    CHECK(result.per_proposition.at(2) == 0.5);
    CHECK(result.per_proposition.at(3) == 1.0);
  }
  SUBCASE("propositions missing a side are excluded and reported") {
    std::map<int, ResponseDistribution> open{{1, dist(1, 0, 0)}, {2, dist(1, 0, 0)}};
    std::map<int, ResponseDistribution> closed{{1, dist(1, 0, 0)}};
    const auto result = mean_tvd(open, closed);
    CHECK(result.per_proposition.size() == 1);
    REQUIRE(result.excluded.size() == 1);
    CHECK(result.excluded[0] == 2);
  }
  SUBCASE("zero overlap is an error") {
    std::map<int, ResponseDistribution> open{{1, dist(1, 0, 0)}};
    std::map<int, ResponseDistribution> closed{{2, dist(1, 0, 0)}};
    CHECK_THROWS_AS(mean_tvd(open, closed), ValidationError);
  }
}

TEST_CASE("jaccard identities") {
  const std::set<std::string> abc{"a", "b", "c"};
  const std::set<std::string> bcd{"b", "c", "d"};
  const std::set<std::string> empty;
  CHECK(jaccard(abc, abc) == 1.0);
  CHECK(jaccard(abc, std::set<std::string>{"x"}) == 0.0);
  CHECK(jaccard(abc, bcd) == 0.5);  // 2 shared / 4 union
  bool warned = false;
  CHECK(jaccard(empty, empty, &warned) == 1.0);
  CHECK(warned);

  SplitMix64 rng(3);
  for (int i = 0; i < 200; ++i) {
    std::set<int> a, b;
    for (int k = 0; k < 12; ++k) {
      if (rng.next() % 2) a.insert(static_cast<int>(rng.next() % 10));
      if (rng.next() % 2) b.insert(static_cast<int>(rng.next() % 10));
    }
    const double j = jaccard(a, b);
    REQUIRE(j >= 0.0);
    REQUIRE(j <= 1.0);
    REQUIRE(j == jaccard(b, a));
  }
}

TEST_CASE("ols exact-fit recovery with the zero-variance sentinel") {
  const std::vector<double> y{2.0, 2.0, 2.0, 5.0, 5.0, 5.0, 5.0};
  const std::vector<std::string> cats{"A", "A", "A", "B", "B", "B", "B"};
  const auto r = ols_fit(y, cats, "A");
  CHECK(r.intercept.coefficient == doctest::Approx(2.0).epsilon(1e-10));
  REQUIRE(r.coefficients.size() == 1);
  CHECK(r.coefficients[0].level == "B");
  CHECK(r.coefficients[0].coefficient == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(r.rss == doctest::Approx(0.0));
  // nonzero effect with zero residual variance: sentinel, no fabricated stars
  CHECK(r.coefficients[0].exact);
  CHECK(std::isnan(r.coefficients[0].p_value));
  CHECK(r.r_squared == doctest::Approx(1.0));
}

TEST_CASE("ols null effect: constant y gives zero coefficients and p = 1") {
  const std::vector<double> y(12, 4.25);
  std::vector<std::string> cats;
  for (int i = 0; i < 12; ++i) cats.push_back(i % 3 == 0 ? "base" : (i % 3 == 1 ? "L" : "R"));
  const auto r = ols_fit(y, cats, "base");
  for (const auto& c : r.coefficients) {
    CHECK(c.coefficient == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(c.p_value == 1.0);
    CHECK_FALSE(c.exact);
  }
  // the intercept itself is exactly determined
  CHECK(r.intercept.coefficient == doctest::Approx(4.25));
}

TEST_CASE("ols matches the independent normal-equations oracle on synthetic data") {
  SplitMix64 rng(77);
  const std::vector<std::string> levels{"base", "far left", "far right", "male", "old"};
  for (int trial = 0; trial < 50; ++trial) {
    const size_t n = 200;
    std::map<std::string, double> effect{{"base", 0.0},
                                         {"far left", -2.0 + rng.next_unit()},
                                         {"far right", 3.0 * rng.next_unit()},
                                         {"male", -0.5},
                                         {"old", 0.25 + rng.next_unit()}};
    std::vector<double> y;
    std::vector<std::string> cats;
    for (size_t i = 0; i < n; ++i) {
      const std::string& level = levels[rng.next() % levels.size()];
      // Box-Muller gaussian noise
      double u1 = rng.next_unit();
      if (u1 < 1e-300) u1 = 1e-300;
      const double noise =
          std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * rng.next_unit());
      cats.push_back(level);
      y.push_back(1.5 + effect[level] + 0.3 * noise);
    }
    const auto fitted = ols_fit(y, cats, "base");
    const auto expected = oracle::ols_oracle(y, cats, "base");

    REQUIRE(fitted.coefficients.size() + 1 == expected.columns.size());
    REQUIRE(std::abs(fitted.intercept.coefficient - expected.beta[0]) < 1e-8);
    REQUIRE(std::abs(fitted.intercept.p_value - expected.p_values[0]) < 1e-6);
    for (size_t j = 0; j < fitted.coefficients.size(); ++j) {
      REQUIRE(fitted.coefficients[j].level == expected.columns[j + 1]);
      REQUIRE(std::abs(fitted.coefficients[j].coefficient - expected.beta[j + 1]) < 1e-8);
      REQUIRE(std::abs(fitted.coefficients[j].std_error - expected.std_errors[j + 1]) < 1e-8);
      REQUIRE(std::abs(fitted.coefficients[j].p_value - expected.p_values[j + 1]) < 1e-6);
      REQUIRE(fitted.coefficients[j].p_value >= 0.0);
      REQUIRE(fitted.coefficients[j].p_value <= 1.0);
    }
  }
}

TEST_CASE("ols residuals are orthogonal to the design and group means are recovered") {
  SplitMix64 rng(88);
  const std::vector<std::string> levels{"base", "x1", "x2", "x3"};
  std::vector<double> y;
  std::vector<std::string> cats;
  for (size_t i = 0; i < 120; ++i) {
    const std::string& level = levels[rng.next() % levels.size()];
    cats.push_back(level);
    y.push_back(rng.next_unit() * 4.0 + (level == "x2" ? 2.0 : 0.0));
  }
  const auto r = ols_fit(y, cats, "base");

  // empirical group means
  std::map<std::string, std::pair<double, size_t>> groups;
  for (size_t i = 0; i < y.size(); ++i) {
    groups[cats[i]].first += y[i];
    groups[cats[i]].second += 1;
  }
  auto group_mean = [&](const std::string& level) {
    return groups.at(level).first / static_cast<double>(groups.at(level).second);
  };

  // saturated categorical design: predictions equal group means
  CHECK(r.intercept.coefficient == doctest::Approx(group_mean("base")).epsilon(1e-10));
  for (const auto& c : r.coefficients) {
    CHECK(r.intercept.coefficient + c.coefficient ==
          doctest::Approx(group_mean(c.level)).epsilon(1e-10));
  }

  // residual orthogonality against every design column
  std::map<std::string, double> level_coef;
  for (const auto& c : r.coefficients) level_coef[c.level] = c.coefficient;
  double dot_intercept = 0.0;
  std::map<std::string, double> dot_level;
  for (size_t i = 0; i < y.size(); ++i) {
    const double fitted = r.intercept.coefficient +
                          (level_coef.count(cats[i]) ? level_coef[cats[i]] : 0.0);
    const double residual = y[i] - fitted;
    dot_intercept += residual;
    if (cats[i] != "base") dot_level[cats[i]] += residual;
  }
  CHECK(std::abs(dot_intercept) < 1e-8);
  for (const auto& [level, dot] : dot_level) {
    CHECK(std::abs(dot) < 1e-8);
  }
}

TEST_CASE("ols input validation") {
  SUBCASE("single level") {
    CHECK_THROWS_AS(ols_fit({1, 2, 3}, {"a", "a", "a"}, "a"), ValidationError);
  }
  SUBCASE("level with fewer than 2 samples") {
    CHECK_THROWS_AS(ols_fit({1, 2, 3, 4}, {"a", "a", "a", "b"}, "a"), ValidationError);
  }
  SUBCASE("missing reference level") {
    CHECK_THROWS_AS(ols_fit({1, 2, 3, 4}, {"a", "a", "b", "b"}, "zzz"), ValidationError);
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(ols_fit({1, 2}, {"a"}, "a"), ValidationError);
  }
}

TEST_CASE("stddev_by_category") {
  SUBCASE("identical values have zero dispersion") {
    const std::vector<DispersionSample> samples{
        {"Gender", 1, 2.0}, {"Gender", 1, 2.0}, {"Gender", 1, 2.0}};
    const auto cells = stddev_by_category(samples);
    REQUIRE(cells.size() == 1);
    CHECK(cells[0].stddev == 0.0);
    CHECK(cells[0].n == 3);
  }
  SUBCASE("hand formula oracle for {0, 2}") {
    const auto cells = stddev_by_category({{"Age", 5, 0.0}, {"Age", 5, 2.0}});
    REQUIRE(cells.size() == 1);
    CHECK(cells[0].stddev == doctest::Approx(std::sqrt(2.0)));  // sample, n-1
  }
  SUBCASE("singleton cells are flagged and carry no stddev") {
    const auto cells = stddev_by_category({{"Class", 2, 1.0}});
    REQUIRE(cells.size() == 1);
    CHECK(cells[0].flagged_singleton);
    CHECK(cells[0].n == 1);
  }
  SUBCASE("cells are keyed by (category, proposition)") {
    const auto cells = stddev_by_category(
        {{"A", 1, 0.0}, {"A", 1, 1.0}, {"A", 2, 0.0}, {"B", 1, 5.0}, {"B", 1, 7.0}});
    CHECK(cells.size() == 3);
  }
}
