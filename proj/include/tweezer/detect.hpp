#pragma once

// Occupancy recovery from fluorescence: bimodal histogram fit, threshold,
// binarisation, interval extraction and occupancy curves conditioned on an
// atom being present at a switching instant.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <utility>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "tweezer/signal.hpp"
#include "tweezer/stats.hpp"
#include "tweezer/timeline.hpp"

namespace tweezer::detect {

class FitFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Histogram {
  std::vector<double> centers;
  std::vector<double> frequencies;  // counts per bin

  double total() const { return std::accumulate(frequencies.begin(), frequencies.end(), 0.0); }
  double bin_width() const { return centers.size() > 1 ? centers[1] - centers[0] : 1.0; }
};

inline Histogram make_histogram(std::span<const double> values, std::size_t n_bins = 200) {
  if (values.empty()) throw std::invalid_argument("make_histogram: no values");
  if (n_bins < 2) throw std::invalid_argument("make_histogram: need >= 2 bins");
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double w = (hi - lo) / static_cast<double>(n_bins);
  Histogram h;
  h.centers.resize(n_bins);
  h.frequencies.assign(n_bins, 0.0);
  for (std::size_t i = 0; i < n_bins; ++i) h.centers[i] = lo + (static_cast<double>(i) + 0.5) * w;
  for (double v : values) {
    auto k = static_cast<std::size_t>((v - lo) / w);
    h.frequencies[std::min(k, n_bins - 1)] += 1.0;
  }
  return h;
}

struct BimodalFit {
  double mu0 = 0.0, sigma0 = 1.0;  // empty trap
  double mu1 = 1.0, sigma1 = 1.0;  // one atom
  double weight0 = 0.5;
  // Bins with an arrival or loss inside them spread uniformly between the
  // two peaks; their share of the histogram.
  double weight_transition = 0.0;
  double log_likelihood = 0.0;

  double weight1() const { return 1.0 - weight0 - weight_transition; }
  int iterations = 0;
};

namespace detail {

inline double log_normal_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * constants::pi);
}

inline double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace detail

/// Two-Gaussian mixture fitted by EM to binned data (k-means start, at most
/// 500 iterations, log-likelihood tolerance 1e-9 per sample), with a uniform
/// component between the two means for partly occupied bins. Throws
/// FitFailure if a component collapses or the data are better described by a
/// single Gaussian (BIC).
inline BimodalFit fit_bimodal(const Histogram& hist) {
  const auto& x = hist.centers;
  const auto& f = hist.frequencies;
  if (x.size() != f.size()) throw std::invalid_argument("fit_bimodal: centers/frequencies size mismatch");
  std::size_t populated = 0;
  for (double v : f) {
    if (v < 0.0) throw std::invalid_argument("fit_bimodal: negative frequency");
    populated += v > 0.0;
  }
  if (populated < 2) throw FitFailure("fit_bimodal: fewer than two populated bins");
  const double n = hist.total();
  const double range = *std::max_element(x.begin(), x.end()) - *std::min_element(x.begin(), x.end());

  // k-means (k = 2) on histogram mass, started at the weighted quartiles.
  auto weighted_quantile = [&](double q) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
    double acc = 0.0;
    for (auto i : order) {
      acc += f[i];
      if (acc >= q * n) return x[i];
    }
    return x[order.back()];
  };
  double c0 = weighted_quantile(0.25), c1 = weighted_quantile(0.75);
  if (c0 == c1) throw FitFailure("fit_bimodal: histogram mass concentrated in one bin");
  for (int it = 0; it < 100; ++it) {
    const double cut = 0.5 * (c0 + c1);
    double s0 = 0, w0 = 0, s1 = 0, w1 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] <= cut) {
        s0 += f[i] * x[i];
        w0 += f[i];
      } else {
        s1 += f[i] * x[i];
        w1 += f[i];
      }
    }
    if (w0 == 0 || w1 == 0) throw FitFailure("fit_bimodal: k-means left a cluster empty");
    const double n0 = s0 / w0, n1 = s1 / w1;
    if (n0 == c0 && n1 == c1) break;
    c0 = n0;
    c1 = n1;
  }
  if (c0 > c1) std::swap(c0, c1);

  BimodalFit fit;
  {
    const double cut = 0.5 * (c0 + c1);
    double v0 = 0, w0 = 0, v1 = 0, w1 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] <= cut) {
        v0 += f[i] * (x[i] - c0) * (x[i] - c0);
        w0 += f[i];
      } else {
        v1 += f[i] * (x[i] - c1) * (x[i] - c1);
        w1 += f[i];
      }
    }
    const double floor = hist.bin_width() * 0.5;
    fit.mu0 = c0;
    fit.mu1 = c1;
    fit.sigma0 = std::max(std::sqrt(v0 / w0), floor);
    fit.sigma1 = std::max(std::sqrt(v1 / w1), floor);
    fit.weight_transition = 0.02;
    fit.weight0 = (1.0 - fit.weight_transition) * w0 / n;
  }

  // Per-component log densities (empty, one atom, transition) at x.
  auto components = [](const BimodalFit& m, double v) {
    const double lo = std::min(m.mu0, m.mu1), hi = std::max(m.mu0, m.mu1);
    const double lt = (m.weight_transition > 0.0 && v >= lo && v <= hi && hi > lo)
                          ? std::log(m.weight_transition) - std::log(hi - lo)
                          : -std::numeric_limits<double>::infinity();
    return std::array<double, 3>{std::log(m.weight0) + detail::log_normal_pdf(v, m.mu0, m.sigma0),
                                 std::log(m.weight1()) + detail::log_normal_pdf(v, m.mu1, m.sigma1), lt};
  };
  auto log_total = [](const std::array<double, 3>& c) {
    const double m = std::max({c[0], c[1], c[2]});
    return m + std::log(std::exp(c[0] - m) + std::exp(c[1] - m) + std::exp(c[2] - m));
  };
  auto log_likelihood = [&](const BimodalFit& m) {
    double ll = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (f[i] != 0.0) ll += f[i] * log_total(components(m, x[i]));
    return ll;
  };

  const double collapse = 1e-6 * range;
  double ll = log_likelihood(fit);
  for (fit.iterations = 1; fit.iterations <= 500; ++fit.iterations) {
    double r0 = 0, r0x = 0, r0xx = 0, r1 = 0, r1x = 0, r1xx = 0, rt = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (f[i] == 0.0) continue;
      const auto c = components(fit, x[i]);
      const double total = log_total(c);
      const double m0 = f[i] * std::exp(c[0] - total), m1 = f[i] * std::exp(c[1] - total);
      rt += f[i] * std::exp(c[2] - total);
      r0 += m0;
      r0x += m0 * x[i];
      r1 += m1;
      r1x += m1 * x[i];
      r0xx += m0 * x[i] * x[i];
      r1xx += m1 * x[i] * x[i];
    }
    if (r0 <= 0.0 || r1 <= 0.0) throw FitFailure("fit_bimodal: a component lost all mass");
    fit.weight0 = r0 / n;
    fit.weight_transition = rt / n;
    fit.mu0 = r0x / r0;
    fit.mu1 = r1x / r1;
    fit.sigma0 = std::sqrt(std::max(0.0, r0xx / r0 - fit.mu0 * fit.mu0));
    fit.sigma1 = std::sqrt(std::max(0.0, r1xx / r1 - fit.mu1 * fit.mu1));
    if (!(fit.sigma0 > collapse) || !(fit.sigma1 > collapse) || fit.weight0 < 1e-6 || fit.weight1() < 1e-6)
      throw FitFailure("fit_bimodal: EM collapsed onto a single component");
    const double next = log_likelihood(fit);
    const bool done = std::abs(next - ll) <= 1e-9 * n;
    ll = next;
    if (done) break;
  }
  fit.iterations = std::min(fit.iterations, 500);
  fit.log_likelihood = ll;
  if (fit.mu0 > fit.mu1) {
    std::swap(fit.mu0, fit.mu1);
    std::swap(fit.sigma0, fit.sigma1);
    fit.weight0 = fit.weight1();
  }
  if (fit.mu0 == fit.mu1) throw FitFailure("fit_bimodal: components coincide");

  // One-Gaussian alternative; four extra parameters must earn their BIC cost.
  double mean = 0.0, var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mean += f[i] * x[i];
  mean /= n;
  for (std::size_t i = 0; i < x.size(); ++i) var += f[i] * (x[i] - mean) * (x[i] - mean);
  const double sd = std::sqrt(var / n);
  double ll1 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (f[i] > 0.0) ll1 += f[i] * detail::log_normal_pdf(x[i], mean, sd);
  if (ll - ll1 < 2.0 * std::log(n)) throw FitFailure("fit_bimodal: histogram is unimodal");
  return fit;
}

struct DetectionPolicy {
  double threshold = 0.0;
  std::size_t debounce_bins = 1;
  double hysteresis = 0.0;
  // Sub-bin timing, disabled while full_level is -inf. Bins above full_level
  // are occupied for the whole bin, bins below empty_level not at all; in
  // between, the occupied fraction is counts / single_atom_level.
  double full_level = -std::numeric_limits<double>::infinity();
  double empty_level = std::numeric_limits<double>::infinity();
  double single_atom_level = 0.0;

  bool sub_bin() const { return std::isfinite(full_level); }
};

struct ThresholdChoice {
  DetectionPolicy policy;
  double false_positive = 0.0;  // P(empty bin read as occupied)
  double false_negative = 0.0;  // P(occupied bin read as empty)
  bool posterior_crossing = true;
};

/// Threshold where both components have equal posterior probability, or the
/// midpoint if the posteriors do not cross between the means.
inline constexpr double level_sigmas = 4.0;  // peak half-width for sub-bin timing

inline ThresholdChoice choose_threshold(const BimodalFit& fit) {
  if (!(fit.sigma0 > 0.0 && fit.sigma1 > 0.0 && fit.mu1 > fit.mu0 && fit.weight0 > 0.0 && fit.weight1() > 0.0))
    throw std::invalid_argument("choose_threshold: invalid fit");
  ThresholdChoice out;
  const double mid = 0.5 * (fit.mu0 + fit.mu1);
  double thr = mid;
  if (fit.sigma0 == fit.sigma1 && fit.weight0 == fit.weight1()) {
    thr = mid;
  } else {
    const double s0 = fit.sigma0 * fit.sigma0, s1 = fit.sigma1 * fit.sigma1;
    const double a = 0.5 / s1 - 0.5 / s0;
    const double b = fit.mu0 / s0 - fit.mu1 / s1;
    const double c = 0.5 * fit.mu1 * fit.mu1 / s1 - 0.5 * fit.mu0 * fit.mu0 / s0 +
                     std::log(fit.weight0 * fit.sigma1 / (fit.weight1() * fit.sigma0));
    std::vector<double> roots;
    if (std::abs(a) * (fit.mu1 - fit.mu0) < 1e-12 * std::abs(b)) {
      roots.push_back(-c / b);
    } else {
      const double disc = b * b - 4.0 * a * c;
      if (disc >= 0.0) {
        const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
        roots.push_back(q / a);
        if (q != 0.0) roots.push_back(c / q);
      }
    }
    bool found = false;
    for (double r : roots) {
      if (r > fit.mu0 && r < fit.mu1 && (!found || std::abs(r - mid) < std::abs(thr - mid))) {
        thr = r;
        found = true;
      }
    }
    out.posterior_crossing = found;
  }
  out.policy.threshold = thr;
  // Sub-bin timing only when partly filled bins stand apart from both peaks.
  const double full = fit.mu1 - level_sigmas * fit.sigma1;
  const double empty = fit.mu0 + level_sigmas * fit.sigma0;
  if (empty < thr && thr < full) {
    out.policy.full_level = full;
    out.policy.empty_level = empty;
    out.policy.single_atom_level = fit.mu1;
  }
  out.false_positive = stats::normal_cdf(-(thr - fit.mu0) / fit.sigma0);
  out.false_negative = stats::normal_cdf((thr - fit.mu1) / fit.sigma1);
  return out;
}

/// Per-bin levels for sub-bin timing (see DetectionPolicy).
struct SubBinLevels {
  std::span<const double> full, empty, single_atom;
};

namespace detail {

/// Flips runs no longer than `max_len` to the surrounding state, left to right.
inline void debounce(std::vector<char>& state, std::size_t max_len) {
  if (max_len == 0 || state.empty()) return;
  const std::size_t n = state.size();
  bool changed = true;
  while (changed) {
    changed = false;
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j < n && state[j] == state[i]) ++j;
      const std::size_t len = j - i;
      // A run covering the whole trace has no neighbour to take over.
      if (len <= max_len && !(i == 0 && j == n)) {
        const char other = state[i] ? 0 : 1;
        for (std::size_t k = i; k < j; ++k) state[k] = other;
        changed = true;
        // Skip past the merged run.
        while (j < n && state[j] == other) ++j;
      }
      i = j;
    }
  }
}

/// Interval times inside the occupied run [i, j). Arrivals and losses are
/// placed inside partly filled bins from the missing fraction of the
/// single-atom counts; interior dips are a loss followed by a new arrival.
/// `claimed` is the bin already used by the previous run's exit and
/// `reload` the arrival it implies for this run, if any.
inline void refine_run(const signal::FluorescenceTrace& trace, const std::vector<char>& state, std::size_t i,
                       std::size_t j, const SubBinLevels& lv, std::size_t& claimed, double& reload,
                       std::vector<std::pair<double, double>>& out) {
  const std::size_t n = trace.size();
  const double w = trace.bin_width;
  auto frac = [&](std::size_t k) { return std::clamp(trace.counts[k] / lv.single_atom[k], 0.0, 1.0); };
  auto partial = [&](std::size_t k) { return trace.counts[k] < lv.full[k]; };
  auto lit = [&](std::size_t k) { return trace.counts[k] > lv.empty[k]; };
  const double start = w * static_cast<double>(i);
  double enter = start;
  if (i > 0 && claimed == i - 1) {
    if (std::isfinite(reload)) enter = reload;
  } else if (i > 0 && !state[i - 1] && lit(i - 1)) {
    enter = start - frac(i - 1) * w;
  } else if (partial(i)) {
    enter = start + (1.0 - frac(i)) * w;
  }
  double exit;
  const double end = w * static_cast<double>(j);
  if (j == n) {
    exit = trace.duration();
  } else if (!state[j] && lit(j)) {
    const double f = frac(j);
    claimed = j;
    if (j + 1 < n && state[j + 1]) {
      // one lit bin between two runs is a loss and a reload
      exit = end + 0.5 * f * w;
      reload = exit + (1.0 - f) * w;
    } else {
      exit = end + f * w;
      reload = std::numeric_limits<double>::infinity();
    }
  } else if (partial(j - 1)) {
    exit = end - (1.0 - frac(j - 1)) * w;
  } else {
    exit = end;
  }
  if (!(exit > enter)) {
    enter = start;
    exit = j == n ? trace.duration() : end;
  }
  std::size_t k = i + 1;
  while (k + 1 < j) {
    if (!partial(k)) {
      ++k;
      continue;
    }
    std::size_t e = k;
    while (e + 1 < j && partial(e)) ++e;
    // dip bins [k, e); bin e is full again
    double gap_start, gap_end;
    if (e == k + 1) {
      const double f = frac(k);
      gap_start = w * (static_cast<double>(k) + 0.5 * f);
      gap_end = gap_start + (1.0 - f) * w;
    } else {
      gap_start = w * (static_cast<double>(k) + frac(k));
      gap_end = std::max(gap_start, w * (static_cast<double>(e) - frac(e - 1)));
    }
    if (gap_start > enter && gap_end < exit) {
      out.emplace_back(enter, gap_start);
      enter = gap_end;
    }
    k = e + 1;
  }
  out.emplace_back(enter, exit);
}

}  // namespace detail

/// Binarises with one threshold per bin (piecewise regimes with different
/// single-atom levels). Interval times are relative to the trace start.
/// With sub-bin levels, arrival and loss times are placed inside the bins.
inline OccupancyTimeline binarize(const signal::FluorescenceTrace& trace, std::span<const double> thresholds,
                                  std::size_t debounce_bins = 1, double hysteresis = 0.0,
                                  std::optional<SubBinLevels> levels = std::nullopt) {
  if (thresholds.size() != trace.size()) throw std::invalid_argument("binarize: one threshold per bin required");
  if (!(hysteresis >= 0.0)) throw std::invalid_argument("binarize: hysteresis must be >= 0");
  const std::size_t n = trace.size();
  if (levels && (levels->full.size() != n || levels->empty.size() != n || levels->single_atom.size() != n))
    throw std::invalid_argument("binarize: one sub-bin level per bin required");
  OccupancyTimeline tl;
  tl.total_duration = trace.duration();
  if (n == 0) return tl;
  std::vector<char> state(n);
  bool occ = trace.counts[0] > thresholds[0];
  for (std::size_t i = 0; i < n; ++i) {
    const double c = trace.counts[i];
    if (hysteresis == 0.0) {
      occ = c > thresholds[i];
    } else if (occ) {
      occ = !(c < thresholds[i] - 0.5 * hysteresis);
    } else {
      occ = c > thresholds[i] + 0.5 * hysteresis;
    }
    state[i] = occ ? 1 : 0;
  }
  detail::debounce(state, debounce_bins);
  std::vector<std::pair<double, double>> pieces;
  std::size_t claimed = n;
  double reload = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n;) {
    if (!state[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && state[j]) ++j;
    pieces.clear();
    if (levels) {
      detail::refine_run(trace, state, i, j, *levels, claimed, reload, pieces);
    } else {
      pieces.emplace_back(trace.bin_width * static_cast<double>(i),
                          j == n ? tl.total_duration : trace.bin_width * static_cast<double>(j));
    }
    for (std::size_t p = 0; p < pieces.size(); ++p) {
      const bool last = p + 1 == pieces.size();
      tl.intervals.push_back({pieces[p].first, pieces[p].second,
                              last && j == n ? ExitCause::censored : ExitCause::unknown});
    }
    i = j;
  }
  return tl;
}

inline OccupancyTimeline binarize(const signal::FluorescenceTrace& trace, const DetectionPolicy& policy) {
  std::vector<double> thr(trace.size(), policy.threshold);
  if (!policy.sub_bin()) return binarize(trace, thr, policy.debounce_bins, policy.hysteresis);
  std::vector<double> full(trace.size(), policy.full_level), empty(trace.size(), policy.empty_level),
      level(trace.size(), policy.single_atom_level);
  return binarize(trace, thr, policy.debounce_bins, policy.hysteresis, SubBinLevels{full, empty, level});
}

struct IntervalSummary {
  std::vector<stats::Observation> lifetimes;
  std::vector<stats::Observation> dark_times;

  std::vector<double> uncensored_lifetimes() const { return uncensored(lifetimes); }
  std::vector<double> uncensored_dark_times() const { return uncensored(dark_times); }

  static std::vector<double> uncensored(const std::vector<stats::Observation>& v) {
    std::vector<double> out;
    for (const auto& o : v)
      if (!o.censored) out.push_back(o.duration);
    return out;
  }
};

/// Occupied and empty stretches. Anything touching the start or end of the
/// record (or with a censored exit) is flagged as censored.
inline IntervalSummary extract_intervals(const OccupancyTimeline& tl) {
  tl.validate();
  IntervalSummary s;
  double prev_exit = 0.0;
  for (std::size_t i = 0; i < tl.intervals.size(); ++i) {
    const auto& iv = tl.intervals[i];
    if (iv.enter > prev_exit) s.dark_times.push_back({iv.enter - prev_exit, i == 0});
    const bool censored = iv.enter <= 0.0 || iv.exit >= tl.total_duration || iv.cause == ExitCause::censored;
    s.lifetimes.push_back({iv.length(), censored});
    prev_exit = iv.exit;
  }
  if (tl.total_duration > prev_exit) s.dark_times.push_back({tl.total_duration - prev_exit, true});
  return s;
}

// Conditional occupancy around switching instants

enum class ConditionMode {
  same_atom,  // the atom present at the switch is still (or already) there
  any_atom,   // any atom present
};

struct ConditionalOptions {
  double window = 60.0;     // s, centred on the switch
  double resolution = 0.25; // s
  ConditionMode mode = ConditionMode::same_atom;
  double confidence = 0.95;
};

struct CurvePoint {
  double t_rel = 0.0;
  std::size_t trials = 0;
  std::size_t successes = 0;
  double probability = 0.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
};

struct OccupancyCurve {
  std::vector<CurvePoint> points;
  std::size_t qualifying_windows = 0;

  const CurvePoint& at_zero() const {
    for (const auto& p : points)
      if (p.t_rel == 0.0) return p;
    throw std::logic_error("occupancy curve has no t = 0 point");
  }
};

/// Curve of P(occupied at s + t | atom present at s) pooled over all traps and
/// all switching instants whose window lies inside the record.
inline OccupancyCurve conditional_occupancy(std::span<const OccupancyTimeline> timelines,
                                            std::span<const double> switch_times,
                                            const ConditionalOptions& opt = {}) {
  if (!(opt.window > 0.0 && opt.resolution > 0.0)) throw std::invalid_argument("conditional_occupancy: bad window");
  const long k_max = static_cast<long>(std::floor(0.5 * opt.window / opt.resolution + 1e-9));
  OccupancyCurve curve;
  std::vector<std::size_t> hits(static_cast<std::size_t>(2 * k_max), 0);
  for (const auto& tl : timelines) {
    for (double s : switch_times) {
      if (s - 0.5 * opt.window < -1e-9 || s + 0.5 * opt.window > tl.total_duration + 1e-9) continue;
      const long idx = tl.interval_at(s);
      if (idx < 0) continue;
      ++curve.qualifying_windows;
      const auto& iv = tl.intervals[static_cast<std::size_t>(idx)];
      for (long k = -k_max; k < k_max; ++k) {
        const double t = s + static_cast<double>(k) * opt.resolution;
        const bool occ = opt.mode == ConditionMode::same_atom ? (iv.enter <= t && t < iv.exit) : tl.occupied_at(t);
        hits[static_cast<std::size_t>(k + k_max)] += occ ? 1 : 0;
      }
    }
  }
  if (curve.qualifying_windows == 0)
    throw std::invalid_argument("conditional_occupancy: no window has an atom present at the switch");
  curve.points.reserve(hits.size());
  for (long k = -k_max; k < k_max; ++k) {
    CurvePoint p;
    p.t_rel = static_cast<double>(k) * opt.resolution;
    p.trials = curve.qualifying_windows;
    p.successes = hits[static_cast<std::size_t>(k + k_max)];
    p.probability = static_cast<double>(p.successes) / static_cast<double>(p.trials);
    const auto ci = stats::wilson_interval(p.successes, p.trials, opt.confidence);
    p.ci_low = ci.low;
    p.ci_high = ci.high;
    curve.points.push_back(p);
  }
  return curve;
}

struct EnsemblePoint {
  double t_rel = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t traps = 0;
};

/// Mean and sample standard deviation across per-trap curves on a common grid.
inline std::vector<EnsemblePoint> ensemble_occupancy(std::span<const OccupancyCurve> curves) {
  if (curves.empty()) throw std::invalid_argument("ensemble_occupancy: no curves");
  const std::size_t m = curves.front().points.size();
  for (const auto& c : curves)
    if (c.points.size() != m) throw std::invalid_argument("ensemble_occupancy: curves on different grids");
  std::vector<EnsemblePoint> out(m);
  const double k = static_cast<double>(curves.size());
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0, ss = 0.0;
    for (const auto& c : curves) s += c.points[i].probability;
    const double mean = s / k;
    for (const auto& c : curves) ss += (c.points[i].probability - mean) * (c.points[i].probability - mean);
    out[i] = {curves.front().points[i].t_rel, mean, curves.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0,
              curves.size()};
  }
  return out;
}

struct DecayFit {
  double tau = 0.0;
  double std_error = 0.0;
  std::size_t n_points = 0;
};

/// Least-squares fit of exp(-|t| / tau) to curve points with t in [t_min, t_max].
template <class Points, class TimeOf, class ValueOf>
DecayFit fit_decay_points(const Points& pts, TimeOf time_of, ValueOf value_of, double t_min, double t_max) {
  std::vector<std::pair<double, double>> data;
  for (const auto& p : pts) {
    const double t = time_of(p);
    if (t >= t_min && t <= t_max && t != 0.0) data.emplace_back(std::abs(t), value_of(p));
  }
  if (data.size() < 2) throw std::invalid_argument("fit_decay: fewer than two points in range");
  auto sse = [&](double log_tau) {
    const double tau = std::exp(log_tau);
    double s = 0.0;
    for (auto [t, y] : data) {
      const double r = y - std::exp(-t / tau);
      s += r * r;
    }
    return s;
  };
  const double t_span = std::max(std::abs(t_min), std::abs(t_max));
  auto [log_tau, best] = boost::math::tools::brent_find_minima(sse, std::log(1e-3 * t_span), std::log(1e3 * t_span), 50);
  DecayFit fit;
  fit.tau = std::exp(log_tau);
  fit.n_points = data.size();
  double jj = 0.0;
  for (auto [t, y] : data) {
    const double j = t / (fit.tau * fit.tau) * std::exp(-t / fit.tau);
    jj += j * j;
  }
  const double resid_var = best / static_cast<double>(std::max<std::size_t>(1, data.size() - 1));
  fit.std_error = jj > 0.0 ? std::sqrt(resid_var / jj) : 0.0;
  return fit;
}

inline DecayFit fit_decay(const OccupancyCurve& curve, double t_min, double t_max) {
  return fit_decay_points(curve.points, [](const CurvePoint& p) { return p.t_rel; },
                          [](const CurvePoint& p) { return p.probability; }, t_min, t_max);
}

inline DecayFit fit_decay(std::span<const EnsemblePoint> curve, double t_min, double t_max) {
  return fit_decay_points(curve, [](const EnsemblePoint& p) { return p.t_rel; },
                          [](const EnsemblePoint& p) { return p.mean; }, t_min, t_max);
}

}  // namespace tweezer::detect
