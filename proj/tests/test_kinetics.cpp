#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>
#include <tuple>

#include "tweezer/kinetics.hpp"
#include "tweezer/power_table.hpp"

using namespace tweezer;
using namespace tweezer::kinetics;

namespace {

RateSet rates(double R, double gamma, bool blockade = true, double pc = 1.0) {
  RateSet r;
  r.loading_rate = R;
  r.one_body_loss_light = gamma;
  r.blockade = blockade;
  r.capture_probability = pc;
  return r;
}

// One-sample Kolmogorov-Smirnov statistic against Exponential(rate).
double ks_exponential(std::vector<double> x, double rate) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = 1.0 - std::exp(-rate * x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
  }
  return d;
}

double ks_critical_001(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

std::vector<double> gaps(const OccupancyTimeline& tl) {
  std::vector<double> g;
  for (std::size_t i = 1; i < tl.intervals.size(); ++i) g.push_back(tl.intervals[i].enter - tl.intervals[i - 1].exit);
  return g;
}

}  // namespace

TEST(SimulateTrap, NoLoadingNoIntervals) {
  const auto tl = simulate_trap(RateSchedule::constant(rates(0.0, 1.0)), 1000.0, 3);
  EXPECT_TRUE(tl.intervals.empty());
  EXPECT_EQ(tl.total_duration, 1000.0);
}

TEST(SimulateTrap, BlockadeLimitIsHalf) {
  const auto tl = simulate_trap(RateSchedule::constant(rates(0.5, 0.0)), 1e5, 11);
  EXPECT_NEAR(tl.occupancy(), 0.5, 0.01);
  EXPECT_NEAR(tl.occupancy(), steady_state_occupancy(0.5, 0.0, true), 0.01);
}

TEST(SimulateTrap, DeterministicPerSeed) {
  const auto s = RateSchedule::constant(rates(0.7, 0.2));
  EXPECT_EQ(simulate_trap(s, 5000.0, 99, 4), simulate_trap(s, 5000.0, 99, 4));
  EXPECT_NE(simulate_trap(s, 5000.0, 99, 4), simulate_trap(s, 5000.0, 99, 5));
}

TEST(SimulateTrap, TimelineIsValidAndBinary) {
  const auto tl = simulate_trap(RateSchedule::constant(rates(2.0, 0.3)), 2000.0, 5);
  EXPECT_NO_THROW(tl.validate());
  for (std::size_t i = 1; i < tl.intervals.size(); ++i) EXPECT_GE(tl.intervals[i].enter, tl.intervals[i - 1].exit);
}

TEST(SimulateTrap, IntervalLengthsAreExponential) {
  const double R = 1.0, gamma = 0.4;
  const auto tl = simulate_trap(RateSchedule::constant(rates(R, gamma)), 4e4, 17);
  std::vector<double> occupied;
  for (const auto& iv : tl.intervals)
    if (iv.cause != ExitCause::censored) occupied.push_back(iv.length());
  ASSERT_GE(occupied.size(), 10000u);
  EXPECT_LT(ks_exponential(occupied, R + gamma), ks_critical_001(occupied.size()));
  const auto empty = gaps(tl);
  ASSERT_GE(empty.size(), 10000u);
  EXPECT_LT(ks_exponential(empty, R), ks_critical_001(empty.size()));
}

TEST(SimulateTrap, CausesFollowCompetingRates) {
  const double R = 1.0, gamma = 1.0;
  const auto tl = simulate_trap(RateSchedule::constant(rates(R, gamma)), 2e4, 23);
  double pair = 0, one = 0;
  for (const auto& iv : tl.intervals) {
    if (iv.cause == ExitCause::pair_loss) ++pair;
    if (iv.cause == ExitCause::one_body) ++one;
  }
  const double n = pair + one;
  EXPECT_NEAR(pair / n, 0.5, 3.0 * std::sqrt(0.25 / n));
}

TEST(SimulateTrap, ConvergesToSteadyState) {
  for (auto [R, gamma, blockade, pc] : {std::tuple{1.0, 2.0, true, 1.0}, std::tuple{0.3, 0.1, false, 1.0},
                                        std::tuple{2.0, 0.5, true, 0.4}}) {
    const auto tl = simulate_trap(RateSchedule::constant(rates(R, gamma, blockade, pc)), 5e4, 31);
    const double n = static_cast<double>(tl.intervals.size());
    EXPECT_NEAR(tl.occupancy(), steady_state_occupancy(R, gamma, blockade, pc), 3.0 / std::sqrt(n))
        << R << " " << gamma;
  }
}

TEST(SimulateTrap, BlockadeOccupancyNeverAboveHalf) {
  for (double R : {0.1, 1.0, 10.0})
    for (double pc : {0.2, 1.0}) {
      const auto tl = simulate_trap(RateSchedule::constant(rates(R, 0.0, true, pc)), 2e4, 41);
      const double n = static_cast<double>(tl.intervals.size());
      EXPECT_LE(tl.occupancy(), 0.5 + 3.0 * 0.5 / std::sqrt(n));
    }
}

TEST(SimulateTrap, MotOffSegmentStopsLoadingAndUsesDarkLoss) {
  RateSet r = rates(5.0, 0.0);
  r.one_body_loss_dark = 0.0;
  // Dark from 10 s on: the atom present at the switch (if any) stays forever.
  const RateSchedule s({ScheduleEntry{0.0, true, r}, ScheduleEntry{10.0, false, r}});
  const auto tl = simulate_trap(s, 100.0, 2);
  for (const auto& iv : tl.intervals) EXPECT_LE(iv.enter, 10.0);
  if (tl.occupied_at(10.0)) {
    EXPECT_EQ(tl.intervals.back().exit, 100.0);
    EXPECT_EQ(tl.intervals.back().cause, ExitCause::censored);
  }
}

TEST(SimulateTrap, RejectsBadSchedules) {
  EXPECT_THROW(RateSchedule({ScheduleEntry{1.0, true, rates(1, 0)}}), std::invalid_argument);
  EXPECT_THROW(RateSchedule({ScheduleEntry{0.0, true, rates(1, 0)}, ScheduleEntry{0.0, true, rates(1, 0)}}),
               std::invalid_argument);
  EXPECT_THROW(simulate_trap(RateSchedule::constant(rates(1, 0)), 0.0, 1), std::invalid_argument);
  EXPECT_THROW(RateSchedule::constant(rates(-1, 0)), std::invalid_argument);
}

TEST(SteadyState, Examples) {
  EXPECT_DOUBLE_EQ(steady_state_occupancy(1.0, 0.0, true), 0.5);
  EXPECT_NEAR(steady_state_occupancy(1e-9, 1.0, true), 0.0, 1e-8);
  EXPECT_DOUBLE_EQ(steady_state_occupancy(1.0, 2.0, true, 1.0), 0.25);
  EXPECT_THROW(steady_state_occupancy(0.0, 0.0, true), std::domain_error);
}

TEST(SteadyState, MasterEquationBalance) {
  // R (1 - p) = (R + gamma) p for the blockade chain
  for (double R : {0.2, 1.0, 3.0})
    for (double g : {0.0, 0.5, 4.0}) {
      const double p = steady_state_occupancy(R, g, true);
      EXPECT_NEAR(R * (1 - p), (R + g) * p, 1e-12);
    }
}

TEST(Survival, ZeroIntervalAlwaysSurvives) {
  RateSet r = rates(1.0, 0.0);
  r.one_body_loss_dark = 0.2;
  const auto e = simulate_survival_experiment(r, 0.0, 500, 1);
  EXPECT_EQ(e.successes, 500u);
  EXPECT_EQ(e.probability, 1.0);
  EXPECT_EQ(e.ci_high, 1.0);
}

TEST(Survival, AnalyticValue) {
  RateSet r = rates(1.0, 0.0);
  r.one_body_loss_dark = 1.0 / 20.0;
  EXPECT_NEAR(analytic_survival(r, 0.5), std::exp(-0.025), 1e-12);
  EXPECT_NEAR(analytic_survival(r, 0.5), 0.9753, 1e-4);
}

TEST(Survival, WilsonIntervalCoversAnalyticValue) {
  RateSet r = rates(1.0, 0.0);
  r.one_body_loss_dark = 0.3;
  const double truth = analytic_survival(r, 1.0);
  int covered = 0;
  const int runs = 200;
  for (int k = 0; k < runs; ++k) {
    const auto e = simulate_survival_experiment(r, 1.0, 10000, 77, static_cast<std::uint64_t>(k));
    EXPECT_LE(e.ci_low, e.probability);
    EXPECT_LE(e.probability, e.ci_high);
    if (e.ci_low <= truth && truth <= e.ci_high) ++covered;
  }
  EXPECT_GE(covered, static_cast<int>(0.93 * runs));
}

TEST(Survival, RejectsNoTrials) { EXPECT_THROW(simulate_survival_experiment(rates(1, 0), 1.0, 0, 1), std::invalid_argument); }

namespace {
Calibration modulation_calibration() {
  const std::string dir = std::string(TWEEZER_SOURCE_DIR) + "/data/fixtures/";
  Calibration cal;
  cal.dark_time = load_power_table(dir + "modulation_dark_time.csv");
  cal.lifetime = load_power_table(dir + "modulation_lifetime.csv");
  cal.lifetime_dark = load_power_table(dir + "modulation_lifetime_dark.csv");
  return cal;
}
}  // namespace

TEST(BuildRateSet, ShallowTrapTimes) {
  const auto cal = modulation_calibration();
  const auto r = build_rate_set(mW(10), true, cal);
  EXPECT_NEAR(1.0 / r.effective_loading(), 2.07, 1e-9);
  EXPECT_NEAR(1.0 / r.exit_rate(true), 1.99, 1e-9);
}

TEST(BuildRateSet, DeepTrapLifetime) {
  const auto r = build_rate_set(mW(21), true, modulation_calibration());
  EXPECT_NEAR(1.0 / r.exit_rate(true), 7.92, 1e-9);
}

TEST(BuildRateSet, DarkLifetimeNearlyThreefold) {
  const auto cal = modulation_calibration();
  const auto on = build_rate_set(mW(10), true, cal);
  const auto off = build_rate_set(mW(10), false, cal);
  const double ratio = (1.0 / off.exit_rate(false)) / (1.0 / on.exit_rate(true));
  EXPECT_NEAR(ratio, 3.0, 0.3);
}

TEST(BuildRateSet, OutsideTableIsError) {
  const auto cal = modulation_calibration();
  EXPECT_THROW(build_rate_set(mW(5), true, cal), std::out_of_range);
  EXPECT_THROW(build_rate_set(mW(30), true, cal), std::out_of_range);
  Calibration no_dark = cal;
  no_dark.lifetime_dark.reset();
  EXPECT_THROW(build_rate_set(mW(10), false, no_dark), std::invalid_argument);
}

TEST(RatesFromTimes, ReproduceTimes) {
  const auto r = rates_from_times(12.0, 7.92);
  EXPECT_NEAR(1.0 / r.arrival_rate(true), 12.0, 1e-12);
  EXPECT_NEAR(1.0 / r.exit_rate(true), 7.92, 1e-12);
  // With blockade an atom cannot outlive the dark time; the loss rate clamps at zero.
  const auto clamped = rates_from_times(2.07, 7.92);
  EXPECT_EQ(clamped.one_body_loss_light, 0.0);
  EXPECT_NEAR(1.0 / clamped.exit_rate(true), 2.07, 1e-12);
}
