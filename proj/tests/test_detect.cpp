#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "tweezer/detect.hpp"
#include "tweezer/kinetics.hpp"
#include "tweezer/signal.hpp"

using namespace tweezer;
using namespace tweezer::detect;

namespace {

std::vector<double> mixture(double w0, double mu0, double s0, double mu1, double s1, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::bernoulli_distribution pick(w0);
  std::normal_distribution<double> a(mu0, s0), b(mu1, s1);
  std::vector<double> v(n);
  for (auto& x : v) x = pick(eng) ? a(eng) : b(eng);
  return v;
}

// Posterior crossing by bisection on the log-density difference.
double crossing_by_bisection(const BimodalFit& f) {
  auto g = [&](double x) {
    const double l0 = std::log(f.weight0) - std::log(f.sigma0) - 0.5 * std::pow((x - f.mu0) / f.sigma0, 2);
    const double l1 = std::log(f.weight1()) - std::log(f.sigma1) - 0.5 * std::pow((x - f.mu1) / f.sigma1, 2);
    return l0 - l1;
  };
  double lo = f.mu0, hi = f.mu1;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

signal::FluorescenceTrace subtracted_trace(const OccupancyTimeline& tl, double depth, const signal::CountModel& m,
                                           std::uint64_t seed) {
  const auto raw = signal::synthesize_trace(tl, signal::constant_illumination(depth), m, seed);
  const auto bg = signal::synthesize_background(tl.total_duration, m, seed);
  return signal::background_subtract(raw, bg);
}

}  // namespace

TEST(FitBimodal, RecoversMixtureMeans) {
  const auto v = mixture(0.5, 0.0, 1.0, 10.0, 1.0, 100000, 1);
  const auto fit = fit_bimodal(make_histogram(v, 200));
  EXPECT_NEAR(fit.mu0, 0.0, 0.05);
  EXPECT_NEAR(fit.mu1, 10.0, 0.05);
  EXPECT_NEAR(fit.sigma0, 1.0, 0.05);
  EXPECT_NEAR(fit.weight0, 0.5, 0.01);
  EXPECT_LT(fit.mu0, fit.mu1);
}

TEST(FitBimodal, UnimodalInputFails) {
  const auto v = mixture(1.0, 0.0, 1.0, 10.0, 1.0, 20000, 2);
  EXPECT_THROW(fit_bimodal(make_histogram(v, 200)), FitFailure);
}

TEST(FitBimodal, SingleBinFails) {
  Histogram h{{0.0, 1.0, 2.0}, {0.0, 100.0, 0.0}};
  EXPECT_THROW(fit_bimodal(h), FitFailure);
}

TEST(FitBimodal, AffineEquivariant) {
  const auto v = mixture(0.3, 2.0, 0.7, 6.0, 1.2, 50000, 3);
  const auto f = fit_bimodal(make_histogram(v, 200));
  const double a = 40.0, b = -7.0;
  std::vector<double> w(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) w[i] = a * v[i] + b;
  const auto g = fit_bimodal(make_histogram(w, 200));
  EXPECT_NEAR(g.mu0, a * f.mu0 + b, 1e-6 * a);
  EXPECT_NEAR(g.mu1, a * f.mu1 + b, 1e-6 * a);
  EXPECT_NEAR(g.sigma0, a * f.sigma0, 1e-6 * a);
  EXPECT_NEAR(g.sigma1, a * f.sigma1, 1e-6 * a);
  EXPECT_NEAR(g.weight0, f.weight0, 1e-6);
}

TEST(ChooseThreshold, SymmetricIsMidpoint) {
  BimodalFit f;
  f.mu0 = 1.5;
  f.mu1 = 9.25;
  f.sigma0 = f.sigma1 = 1.3;
  f.weight0 = 0.5;
  EXPECT_EQ(choose_threshold(f).policy.threshold, 0.5 * (1.5 + 9.25));
}

TEST(ChooseThreshold, MisclassificationIsGaussianTail) {
  BimodalFit f;
  f.mu0 = 0;
  f.mu1 = 10;
  f.sigma0 = f.sigma1 = 1;
  f.weight0 = 0.5;
  const auto c = choose_threshold(f);
  const double phi_m5 = 0.5 * std::erfc(5.0 / std::sqrt(2.0));
  EXPECT_NEAR(c.false_positive, phi_m5, 1e-12);
  EXPECT_NEAR(c.false_negative, phi_m5, 1e-12);
  EXPECT_NEAR(c.false_positive, 2.87e-7, 0.01e-7);
}

TEST(ChooseThreshold, MatchesBisectionAndMovesTowardEmptyPeak) {
  BimodalFit f;
  f.mu0 = 0;
  f.mu1 = 10;
  f.sigma0 = 1;
  f.weight0 = 0.6;
  double last = 1e9;
  for (double s1 : {1.0, 1.5, 2.0, 3.0}) {
    f.sigma1 = s1;
    const double thr = choose_threshold(f).policy.threshold;
    EXPECT_NEAR(thr, crossing_by_bisection(f), 1e-9) << s1;
    EXPECT_LT(thr, last);
    last = thr;
  }
}

TEST(ChooseThreshold, RejectsInvalidFit) {
  BimodalFit f;
  f.mu0 = 5;
  f.mu1 = 1;
  EXPECT_THROW(choose_threshold(f), std::invalid_argument);
}

TEST(Binarize, AllBelowThresholdIsEmpty) {
  signal::FluorescenceTrace tr{0.0, 0.25, std::vector<double>(100, 1.0)};
  EXPECT_TRUE(binarize(tr, DetectionPolicy{5.0}).intervals.empty());
}

TEST(Binarize, DebounceRemovesIsolatedSpike) {
  std::vector<double> c(40, 0.0);
  c[10] = 100.0;
  for (std::size_t i = 20; i < 30; ++i) c[i] = 100.0;
  signal::FluorescenceTrace tr{0.0, 0.25, c};
  const auto raw = binarize(tr, DetectionPolicy{50.0, 0});
  EXPECT_EQ(raw.intervals.size(), 2u);
  const auto tl = binarize(tr, DetectionPolicy{50.0, 1});
  ASSERT_EQ(tl.intervals.size(), 1u);
  EXPECT_DOUBLE_EQ(tl.intervals[0].enter, 5.0);
  EXPECT_DOUBLE_EQ(tl.intervals[0].exit, 7.5);
  EXPECT_EQ(tl.intervals[0].cause, ExitCause::unknown);
}

TEST(Binarize, TraceEndIsCensored) {
  signal::FluorescenceTrace tr{0.0, 0.5, {0, 0, 9, 9, 9}};
  const auto tl = binarize(tr, DetectionPolicy{5.0, 0});
  ASSERT_EQ(tl.intervals.size(), 1u);
  EXPECT_EQ(tl.intervals[0].cause, ExitCause::censored);
  EXPECT_DOUBLE_EQ(tl.intervals[0].exit, 2.5);
}

TEST(Binarize, HysteresisSuppressesChatter) {
  signal::FluorescenceTrace tr{0.0, 1.0, {0, 6.5, 4.8, 5.2, 4.9, 5.1, 0, 0}};
  const auto plain = binarize(tr, DetectionPolicy{5.0, 0, 0.0});
  const auto hyst = binarize(tr, DetectionPolicy{5.0, 0, 2.0});
  EXPECT_GT(plain.intervals.size(), 1u);
  ASSERT_EQ(hyst.intervals.size(), 1u);
  EXPECT_DOUBLE_EQ(hyst.intervals[0].enter, 1.0);
  EXPECT_DOUBLE_EQ(hyst.intervals[0].exit, 6.0);
}

TEST(Binarize, SubBinTimingFromPartialBins) {
  DetectionPolicy p{50.0, 0};
  p.full_level = 90.0;
  p.empty_level = 10.0;
  p.single_atom_level = 100.0;
  // arrival 0.3 bins before bin 2, loss 0.6 bins into bin 5
  signal::FluorescenceTrace tr{0.0, 1.0, {0, 30, 100, 100, 100, 60, 0, 0}};
  auto tl = binarize(tr, p);
  ASSERT_EQ(tl.intervals.size(), 1u);
  EXPECT_NEAR(tl.intervals[0].enter, 1.7, 1e-12);
  EXPECT_NEAR(tl.intervals[0].exit, 5.6, 1e-12);
  // arrival inside the first lit bin, loss at its edge
  tr.counts = {0, 0, 75, 100, 100, 0, 0, 0};
  tl = binarize(tr, p);
  ASSERT_EQ(tl.intervals.size(), 1u);
  EXPECT_NEAR(tl.intervals[0].enter, 2.25, 1e-12);
  EXPECT_NEAR(tl.intervals[0].exit, 5.0, 1e-12);
  // a loss and reload inside one bin splits the run
  tr.counts = {0, 100, 100, 40, 100, 100, 0, 0};
  tl = binarize(tr, p);
  ASSERT_EQ(tl.intervals.size(), 2u);
  EXPECT_NEAR(tl.intervals[0].exit, 3.2, 1e-12);
  EXPECT_NEAR(tl.intervals[1].enter, 3.8, 1e-12);
  EXPECT_NEAR(tl.intervals[1].exit, 6.0, 1e-12);
}

TEST(Binarize, RecoversGroundTruthWithinOneBin) {
  signal::CountModel m;
  ASSERT_GE(signal::peak_statistics(m.reference_depth, m).separation, 6.0);
  kinetics::RateSet r;
  r.loading_rate = 0.2;
  r.one_body_loss_light = 0.05;
  const auto truth = kinetics::simulate_trap(kinetics::RateSchedule::constant(r), 3000.0, 8);
  const auto sub = subtracted_trace(truth, m.reference_depth, m, 8);
  const auto choice = choose_threshold(fit_bimodal(make_histogram(sub.counts)));
  const auto det = binarize(sub, choice.policy);
  // Noise-free reference: the same threshold and debounce applied to the
  // expected atom counts, so partially occupied bins are judged alike.
  auto ideal = sub;
  ideal.counts = signal::expected_counts(truth, signal::constant_illumination(m.reference_depth), m);
  for (auto& c : ideal.counts) c -= m.background_rate * m.bin_width;
  const auto expected = binarize(ideal, choice.policy).intervals;
  ASSERT_EQ(det.intervals.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_NEAR(det.intervals[i].enter, expected[i].enter, m.bin_width);
    EXPECT_NEAR(det.intervals[i].exit, expected[i].exit, m.bin_width);
  }
  std::size_t long_truth = 0;
  for (const auto& iv : truth.intervals) long_truth += iv.length() > m.bin_width ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(det.intervals.size()), static_cast<double>(long_truth), 0.05 * long_truth);
  EXPECT_NEAR(det.occupancy(), truth.occupancy(), 0.01);
}

TEST(ExtractIntervals, WholeTraceInterval) {
  OccupancyTimeline tl{100.0, {{0.0, 100.0, ExitCause::censored}}};
  const auto s = extract_intervals(tl);
  ASSERT_EQ(s.lifetimes.size(), 1u);
  EXPECT_TRUE(s.lifetimes[0].censored);
  EXPECT_TRUE(s.dark_times.empty());
}

TEST(ExtractIntervals, AlternatingPattern) {
  OccupancyTimeline tl{300.0, {}};
  for (int k = 0; k < 100; ++k) tl.intervals.push_back({3.0 * k + 2.0, 3.0 * k + 3.0, ExitCause::one_body});
  const auto s = extract_intervals(tl);
  EXPECT_EQ(s.lifetimes.size(), 100u);
  for (const auto& l : s.lifetimes) EXPECT_DOUBLE_EQ(l.duration, 1.0);
  EXPECT_GE(s.dark_times.size(), 99u);
  EXPECT_LE(s.dark_times.size(), 100u);
  for (const auto& d : s.dark_times) EXPECT_DOUBLE_EQ(d.duration, 2.0);
}

TEST(ExtractIntervals, MeanLifetimeMatchesKinetics) {
  kinetics::RateSet r;
  r.loading_rate = 0.8;
  r.one_body_loss_light = 0.3;
  const auto tl = kinetics::simulate_trap(kinetics::RateSchedule::constant(r), 2e4, 12);
  const auto life = extract_intervals(tl).uncensored_lifetimes();
  double mean = 0.0;
  for (double v : life) mean += v;
  mean /= static_cast<double>(life.size());
  const double tau = 1.0 / (0.8 + 0.3);
  EXPECT_NEAR(mean, tau, 3.0 * tau / std::sqrt(static_cast<double>(life.size())));
}

TEST(ConditionalOccupancy, ZeroIsOneAndPointsInsideWilson) {
  kinetics::RateSet r;
  r.loading_rate = 0.5;
  r.one_body_loss_light = 0.1;
  std::vector<OccupancyTimeline> tls;
  for (std::uint64_t k = 0; k < 4; ++k)
    tls.push_back(kinetics::simulate_trap(kinetics::RateSchedule::constant(r), 3600.0, 3, k));
  std::vector<double> sw;
  for (double t = 30.0; t < 3570.0; t += 60.0) sw.push_back(t);
  const auto c = conditional_occupancy(tls, sw);
  EXPECT_EQ(c.at_zero().probability, 1.0);
  for (const auto& p : c.points) {
    EXPECT_LE(p.ci_low, p.probability);
    EXPECT_LE(p.probability, p.ci_high);
  }
  EXPECT_EQ(c.points.size(), 240u);
  EXPECT_DOUBLE_EQ(c.points.front().t_rel, -30.0);
}

TEST(ConditionalOccupancy, PureDeathProcessDecaysExponentially) {
  // Atoms present at each switch decay at rate 1/tau afterwards.
  const double tau = 5.0;
  std::mt19937_64 eng(4);
  std::exponential_distribution<double> life(1.0 / tau);
  OccupancyTimeline tl{60.0 * 2000, {}};
  std::vector<double> sw;
  for (int k = 0; k < 2000; ++k) {
    const double s = 60.0 * k + 30.0;
    sw.push_back(s);
    tl.intervals.push_back({s, std::min(s + life(eng), s + 29.0), ExitCause::one_body});
  }
  const auto c = conditional_occupancy(std::span(&tl, 1), sw);
  int outside = 0, n = 0;
  for (const auto& p : c.points) {
    if (p.t_rel <= 0.0 || p.t_rel >= 29.0) continue;
    const double expected = std::exp(-p.t_rel / tau);
    ++n;
    if (expected < p.ci_low || expected > p.ci_high) ++outside;
  }
  EXPECT_LE(outside, static_cast<int>(0.1 * n));
  EXPECT_NEAR(fit_decay(c, 0.0, 29.0).tau, tau, 0.3);
}

TEST(ConditionalOccupancy, NoQualifyingWindowIsError) {
  OccupancyTimeline tl{200.0, {}};
  std::vector<double> sw{100.0};
  EXPECT_THROW(conditional_occupancy(std::span(&tl, 1), sw), std::invalid_argument);
}

TEST(ConditionalOccupancy, AnyAtomCountsLaterArrivals) {
  OccupancyTimeline tl{100.0, {{40.0, 50.0, ExitCause::one_body}, {52.0, 60.0, ExitCause::one_body}}};
  std::vector<double> sw{50.0 - 5.0};
  ConditionalOptions same, any;
  any.mode = ConditionMode::any_atom;
  const auto a = conditional_occupancy(std::span(&tl, 1), sw, same);
  const auto b = conditional_occupancy(std::span(&tl, 1), sw, any);
  auto at = [](const OccupancyCurve& c, double t) {
    for (const auto& p : c.points)
      if (std::abs(p.t_rel - t) < 1e-9) return p.probability;
    return -1.0;
  };
  EXPECT_EQ(at(a, 10.0), 0.0);
  EXPECT_EQ(at(b, 10.0), 1.0);
}

TEST(Ensemble, MeanAndSpread) {
  OccupancyCurve a, b;
  a.points = {{0.0, 1, 1, 1.0}, {1.0, 1, 1, 0.8}};
  b.points = {{0.0, 1, 1, 1.0}, {1.0, 1, 1, 0.4}};
  std::vector<OccupancyCurve> cs{a, b};
  const auto e = ensemble_occupancy(cs);
  EXPECT_DOUBLE_EQ(e[1].mean, 0.6);
  EXPECT_NEAR(e[1].stddev, std::sqrt(0.08), 1e-12);
  EXPECT_EQ(e[0].stddev, 0.0);
}

TEST(DeepTraps, OverlappingPeaksShortenLifetimes) {
  signal::CountModel m;
  const double depth = mK(8.3);
  ASSERT_LT(signal::peak_statistics(depth, m).separation, 2.0);
  kinetics::RateSet r;
  r.loading_rate = 0.25;
  r.one_body_loss_light = 0.0;
  const auto truth = kinetics::simulate_trap(kinetics::RateSchedule::constant(r), 1800.0, 21);
  const auto sub = subtracted_trace(truth, depth, m, 21);
  const auto fit = fit_bimodal(make_histogram(sub.counts));
  const auto det = binarize(sub, choose_threshold(fit).policy);
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  EXPECT_LT(mean_of(extract_intervals(det).uncensored_lifetimes()),
            mean_of(extract_intervals(truth).uncensored_lifetimes()));
}
