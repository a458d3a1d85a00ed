#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "tweezer/power_table.hpp"
#include "tweezer/stats.hpp"

using namespace tweezer;
using namespace tweezer::stats;

namespace {

std::string fixture(const std::string& name) { return std::string(TWEEZER_SOURCE_DIR) + "/data/fixtures/" + name; }

std::size_t nearest_index(const std::vector<double>& grid, double v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (std::abs(std::log(grid[i] / v)) < std::abs(std::log(grid[best] / v))) best = i;
  return best;
}

}  // namespace

TEST(NormalQuantile, TableValues) {
  EXPECT_NEAR(normal_quantile(0.975), 1.959963985, 1e-7);
  EXPECT_NEAR(normal_quantile(0.5), 0.0, 1e-12);
  EXPECT_NEAR(normal_quantile(0.001), -3.090232306, 1e-7);
  EXPECT_NEAR(normal_cdf(normal_quantile(0.8)), 0.8, 1e-12);
  EXPECT_NEAR(z95, normal_quantile(0.975), 1e-5);
}

TEST(Wilson, BoundaryIdentities) {
  for (std::size_t n : {1u, 10u, 1000u}) {
    EXPECT_EQ(wilson_interval(0, n).low, 0.0);
    EXPECT_EQ(wilson_interval(n, n).high, 1.0);
  }
}

TEST(Wilson, ClosedFormValue) {
  const auto ci = wilson_interval(50, 100, 0.95);
  EXPECT_NEAR(ci.low, 0.4038, 0.0005);
  EXPECT_NEAR(ci.high, 0.5962, 0.0005);
}

TEST(Wilson, ContainsPointEstimateAndNarrowsWithN) {
  for (std::size_t n = 1; n <= 60; ++n)
    for (std::size_t k = 0; k <= n; ++k) {
      const auto ci = wilson_interval(k, n);
      const double p = static_cast<double>(k) / static_cast<double>(n);
      EXPECT_LE(ci.low, p);
      EXPECT_GE(ci.high, p);
    }
  double last = 1.0;
  for (std::size_t n : {10u, 20u, 40u, 80u, 160u}) {
    const auto ci = wilson_interval(n / 5, n);
    EXPECT_LT(ci.high - ci.low, last);
    last = ci.high - ci.low;
  }
}

TEST(Wilson, RejectsBadInput) {
  EXPECT_THROW(wilson_interval(5, 4), std::invalid_argument);
  EXPECT_THROW(wilson_interval(0, 0), std::invalid_argument);
  EXPECT_THROW(wilson_interval(1, 2, 1.0), std::invalid_argument);
}

TEST(FitExponential, ConstantSamples) {
  std::vector<double> v(10, 3.25);
  const auto f = fit_exponential(v);
  EXPECT_DOUBLE_EQ(f.tau, 3.25);
  EXPECT_DOUBLE_EQ(f.std_error, 3.25 / std::sqrt(10.0));
}

TEST(FitExponential, RecoversGeneratorValue) {
  std::mt19937_64 eng(56);
  std::exponential_distribution<double> d(1.0 / 5.6);
  std::vector<double> v(1000);
  for (auto& x : v) x = d(eng);
  const auto f = fit_exponential(v);
  EXPECT_NEAR(f.tau, 5.6, 3.0 * 5.6 / std::sqrt(1000.0));
  const auto b = fit_exponential(v, FitMethod::binned_lsq, 1.0);
  EXPECT_NEAR(b.tau, 5.6, 0.6);
}

TEST(FitExponential, CensoredMle) {
  std::vector<Observation> obs{{2.0, false}, {3.0, true}, {1.0, false}};
  const auto f = fit_exponential(obs, FitMethod::censored_mle);
  EXPECT_DOUBLE_EQ(f.tau, 3.0);
  std::vector<Observation> all_censored{{2.0, true}, {3.0, true}};
  EXPECT_THROW(fit_exponential(all_censored, FitMethod::censored_mle), std::invalid_argument);
}

TEST(FitExponential, TooFewSamples) {
  std::vector<double> v{1, 2, 3, 4};
  EXPECT_THROW(fit_exponential(v), std::invalid_argument);
}

TEST(FitExponential, ScaleEquivariant) {
  std::mt19937_64 eng(9);
  std::exponential_distribution<double> d(0.5);
  std::vector<double> v(200), w(200);
  for (std::size_t i = 0; i < v.size(); ++i) w[i] = 7.0 * (v[i] = d(eng));
  for (auto m : {FitMethod::mle, FitMethod::binned_lsq}) {
    const auto a = fit_exponential(v, m, 0.5);
    const auto b = fit_exponential(w, m, 3.5);
    EXPECT_NEAR(b.tau, 7.0 * a.tau, 1e-6 * b.tau);
    EXPECT_NEAR(b.std_error, 7.0 * a.std_error, 1e-6 * b.std_error);
  }
}

TEST(FillingFraction, Examples) {
  EXPECT_DOUBLE_EQ(filling_fraction(3.0, 3.0), 0.5);
  EXPECT_NEAR(filling_fraction(2.07, 7.92), 0.7928, 1e-4);
  EXPECT_DOUBLE_EQ(filling_fraction(0.0, 1.0), 1.0);
  EXPECT_THROW(filling_fraction(1.0, 0.0), std::domain_error);
}

TEST(FillingFraction, MonotoneInBothTimes) {
  for (double td = 0.5; td < 10; td += 0.7)
    for (double t = 0.5; t < 10; t += 0.7) {
      EXPECT_GT(filling_fraction(td, t + 1e-3), filling_fraction(td, t));
      EXPECT_LT(filling_fraction(td + 1e-3, t), filling_fraction(td, t));
    }
}

TEST(EtaMap, ConstantTablesHaveNoMaxima) {
  const auto grid = log_spaced(mW(8), mW(100), 10);
  const auto m = eta_map(PowerTable::constant(2.0), PowerTable::constant(3.0), grid, grid);
  EXPECT_TRUE(m.maxima.empty());
  for (const auto& row : m.eta)
    for (double v : row) EXPECT_DOUBLE_EQ(v, 0.6);
}

TEST(EtaMap, OutsideTableIsError) {
  const auto dark = load_power_table(fixture("fig3_dark_time_mot_on.csv"));
  const auto life = load_power_table(fixture("fig3_lifetime_mot_on.csv"));
  const auto grid = log_spaced(mW(5), mW(100), 10);
  EXPECT_THROW(eta_map(dark, life, grid, grid), std::out_of_range);
}

TEST(EtaMap, FixtureMaxima) {
  const auto dark = load_power_table(fixture("fig3_dark_time_mot_on.csv"));
  const auto grid = log_spaced(mW(8), mW(100), 49);
  struct Case { const char* file; double low, high; };
  for (Case c : {Case{"fig3_lifetime_mot_on.csv", 0.74, 0.77}, Case{"fig3_lifetime_mot_off.csv", 0.85, 0.88}}) {
    const auto map = eta_map(dark, load_power_table(fixture(c.file)), grid, grid);
    ASSERT_EQ(map.maxima.size(), 2u) << c.file;
    const auto& a = map.maxima[0];
    const auto& b = map.maxima[1];
    EXPECT_LE(std::abs(static_cast<long>(a.loading_index) - static_cast<long>(nearest_index(grid, mW(10)))), 1);
    EXPECT_LE(std::abs(static_cast<long>(b.loading_index) - static_cast<long>(nearest_index(grid, mW(41)))), 1);
    for (const auto* m : {&a, &b})
      EXPECT_LE(std::abs(static_cast<long>(m->holding_index) - static_cast<long>(nearest_index(grid, mW(21)))), 1);
    EXPECT_NEAR(a.eta, c.low, 0.03) << c.file;
    EXPECT_NEAR(b.eta, c.high, 0.03) << c.file;
  }
}

TEST(EtaMap, InvariantUnderGridReordering) {
  const auto dark = load_power_table(fixture("fig3_dark_time_mot_on.csv"));
  const auto life = load_power_table(fixture("fig3_lifetime_mot_on.csv"));
  auto grid = log_spaced(mW(8), mW(100), 25);
  const auto a = eta_map(dark, life, grid, grid);
  auto shuffled = grid;
  std::mt19937_64 eng(1);
  std::shuffle(shuffled.begin(), shuffled.end(), eng);
  const auto b = eta_map(dark, life, shuffled, shuffled);
  for (std::size_t i = 0; i < shuffled.size(); ++i)
    for (std::size_t j = 0; j < shuffled.size(); ++j) {
      const auto ii = nearest_index(grid, shuffled[i]);
      const auto jj = nearest_index(grid, shuffled[j]);
      EXPECT_DOUBLE_EQ(b.eta[i][j], a.eta[ii][jj]);
    }
  ASSERT_EQ(a.maxima.size(), b.maxima.size());
  for (std::size_t k = 0; k < a.maxima.size(); ++k) {
    EXPECT_DOUBLE_EQ(a.maxima[k].loading_power, b.maxima[k].loading_power);
    EXPECT_DOUBLE_EQ(a.maxima[k].eta, b.maxima[k].eta);
  }
}

TEST(LocalMaxima, PlateauReportsLowestPowerCorner) {
  EtaMap m;
  m.loading_powers = {1, 2, 3, 4};
  m.holding_powers = {1, 2, 3};
  m.eta = {{0.1, 0.1, 0.1, 0.1}, {0.1, 0.5, 0.5, 0.1}, {0.1, 0.1, 0.1, 0.1}};
  const auto mx = find_local_maxima(m);
  ASSERT_EQ(mx.size(), 1u);
  EXPECT_EQ(mx[0].loading_index, 1u);
  EXPECT_EQ(mx[0].holding_index, 1u);
}

TEST(LocalMaxima, NonStrictNeighbourIsNotAMaximum) {
  EtaMap m;
  m.loading_powers = {1, 2, 3};
  m.holding_powers = {1};
  m.eta = {{0.2, 0.5, 0.6}};
  const auto mx = find_local_maxima(m);
  ASSERT_EQ(mx.size(), 1u);
  EXPECT_EQ(mx[0].loading_index, 2u);
}

TEST(MovingAverage, WindowOneIsIdentity) {
  std::vector<SeriesPoint> s{{1, 2, 0.1}, {2, 5, 0.2}, {3, 1, 0.3}};
  const auto out = moving_average(s, 1);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_DOUBLE_EQ(out[i].y, s[i].y);
    EXPECT_DOUBLE_EQ(out[i].y_err, s[i].y_err);
  }
}

TEST(MovingAverage, ConstantSeriesBand) {
  std::vector<SeriesPoint> s;
  for (int i = 0; i < 9; ++i) s.push_back({double(i), 4.0, 0.3});
  const auto out = moving_average(s, 5);
  for (std::size_t i = 2; i + 2 < s.size(); ++i) {
    EXPECT_DOUBLE_EQ(out[i].y, 4.0);
    EXPECT_NEAR(out[i].y_err, 0.3 / std::sqrt(5.0), 1e-12);
  }
  EXPECT_DOUBLE_EQ(out[0].y_err, 0.3);
}

TEST(MovingAverage, LinearRampInterior) {
  std::vector<SeriesPoint> s;
  for (int i = 0; i < 7; ++i) s.push_back({double(i), double(i), 1.0});
  const auto out = moving_average(s, 3);
  for (std::size_t i = 1; i + 1 < s.size(); ++i) EXPECT_DOUBLE_EQ(out[i].y, s[i].y);
}

TEST(MovingAverage, Errors) {
  std::vector<SeriesPoint> empty;
  EXPECT_THROW(moving_average(empty, 3), std::invalid_argument);
  std::vector<SeriesPoint> s{{1, 1, 1}, {2, 1, 1}};
  EXPECT_THROW(moving_average(s, 2), std::invalid_argument);
}

TEST(PowerTable, LogLinearInterpolation) {
  PowerTable t({{mW(10), 2.0, 0.0}, {mW(100), 4.0, 0.0}});
  EXPECT_NEAR(t(mW(std::sqrt(1000.0))), 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(t(mW(10)), 2.0);
  EXPECT_THROW(t(mW(9)), std::out_of_range);
}
