#pragma once

// Lifetime estimators, binomial intervals, the filling-fraction law and the
// eta map over (loading power x holding power).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "tweezer/power_table.hpp"
#include "tweezer/units.hpp"

namespace tweezer::stats {

// Normal distribution

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Inverse standard-normal CDF: Acklam's rational approximation followed by
/// one Halley step, good to ~1e-15 relative in double precision.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must be in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * constants::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

inline constexpr double z95 = 1.95996;  // two-sided 95% normal quantile

// Wilson score interval

struct ProportionInterval {
  double low = 0.0;
  double high = 1.0;
};

inline ProportionInterval wilson_interval(std::size_t successes, std::size_t trials, double confidence = 0.95) {
  if (trials == 0) throw std::invalid_argument("wilson_interval: trials must be >= 1");
  if (successes > trials) throw std::invalid_argument("wilson_interval: successes > trials");
  if (!(confidence > 0.0 && confidence < 1.0))
    throw std::invalid_argument("wilson_interval: confidence must be in (0, 1)");
  const double z = normal_quantile(0.5 * (1.0 + confidence));
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2n = z * z / n;
  const double centre = (p + 0.5 * z2n) / (1.0 + z2n);
  const double half = z / (1.0 + z2n) * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n));
  ProportionInterval ci{std::min(centre - half, p), std::max(centre + half, p)};
  if (successes == 0) ci.low = 0.0;
  if (successes == trials) ci.high = 1.0;
  ci.low = std::clamp(ci.low, 0.0, 1.0);
  ci.high = std::clamp(ci.high, 0.0, 1.0);
  return ci;
}

// Exponential lifetime fits

/// A duration sample; `censored` marks intervals cut by the observation window.
struct Observation {
  double duration = 0.0;
  bool censored = false;
};

enum class FitMethod { mle, censored_mle, binned_lsq };

struct ExpFit {
  double tau = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
  FitMethod method = FitMethod::mle;
};

namespace detail {

inline ExpFit fit_binned(const std::vector<double>& x, double bin_width) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("fit_exponential: bin width must be > 0");
  const double max_x = *std::max_element(x.begin(), x.end());
  const auto n_bins = static_cast<std::size_t>(std::floor(max_x / bin_width)) + 1;
  std::vector<double> counts(n_bins, 0.0);
  for (double v : x) counts[std::min(n_bins - 1, static_cast<std::size_t>(v / bin_width))] += 1.0;
  // For fixed tau the amplitude is linear, so profile it out and minimise over
  // log tau only.
  auto sse = [&](double log_tau) {
    const double tau = std::exp(log_tau);
    double ne = 0.0, ee = 0.0, nn = 0.0;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double e = std::exp(-(static_cast<double>(k) + 0.5) * bin_width / tau);
      ne += counts[k] * e;
      ee += e * e;
      nn += counts[k] * counts[k];
    }
    return nn - ne * ne / ee;
  };
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  const double lo = std::log(std::max(mean, bin_width) * 1e-2);
  const double hi = std::log(std::max(mean, bin_width) * 1e2);
  auto [log_tau, value] = boost::math::tools::brent_find_minima(sse, lo, hi, 40);
  (void)value;
  const double tau = std::exp(log_tau);
  return {tau, tau / std::sqrt(static_cast<double>(x.size())), x.size(), FitMethod::binned_lsq};
}

}  // namespace detail

/// Exponential lifetime estimate. MLE and binned LSQ use uncensored samples
/// only; censored MLE divides the total exposure by the number of events.
inline ExpFit fit_exponential(std::span<const Observation> samples, FitMethod method = FitMethod::mle,
                              double bin_width = 1.0) {
  std::vector<double> events;
  double exposure = 0.0;
  for (const auto& s : samples) {
    if (!(s.duration >= 0.0) || !std::isfinite(s.duration))
      throw std::invalid_argument("fit_exponential: durations must be finite and >= 0");
    exposure += s.duration;
    if (!s.censored) events.push_back(s.duration);
  }
  if (method == FitMethod::censored_mle) {
    if (events.empty()) throw std::invalid_argument("fit_exponential: no uncensored events");
    const double tau = exposure / static_cast<double>(events.size());
    if (!(tau > 0.0)) throw std::invalid_argument("fit_exponential: zero total exposure");
    return {tau, tau / std::sqrt(static_cast<double>(events.size())), samples.size(), method};
  }
  if (events.size() < 5)
    throw std::invalid_argument("fit_exponential: need at least 5 uncensored samples, got " +
                                std::to_string(events.size()));
  if (method == FitMethod::binned_lsq) return detail::fit_binned(events, bin_width);
  const double tau = std::accumulate(events.begin(), events.end(), 0.0) / static_cast<double>(events.size());
  if (!(tau > 0.0)) throw std::invalid_argument("fit_exponential: all samples are zero");
  return {tau, tau / std::sqrt(static_cast<double>(events.size())), events.size(), FitMethod::mle};
}

inline ExpFit fit_exponential(std::span<const double> uncensored, FitMethod method = FitMethod::mle,
                              double bin_width = 1.0) {
  std::vector<Observation> obs;
  obs.reserve(uncensored.size());
  for (double v : uncensored) obs.push_back({v, false});
  return fit_exponential(std::span<const Observation>(obs), method, bin_width);
}

// Filling fraction

/// Time-averaged occupation tau / (tau_d + tau) of a trap that reloads after a
/// mean dark time tau_d and then holds its atom for a mean lifetime tau.
inline double filling_fraction(double tau_dark, double tau) {
  if (!(tau > 0.0)) throw std::domain_error("filling_fraction: tau must be > 0");
  if (!(tau_dark >= 0.0)) throw std::domain_error("filling_fraction: tau_dark must be >= 0");
  return tau / (tau_dark + tau);
}

// Eta map

struct EtaMaximum {
  double loading_power = 0.0;
  double holding_power = 0.0;
  double eta = 0.0;
  std::size_t loading_index = 0;
  std::size_t holding_index = 0;
};

struct EtaMap {
  std::vector<double> loading_powers;   // W, columns
  std::vector<double> holding_powers;   // W, rows
  std::vector<std::vector<double>> eta; // eta[holding][loading]
  std::vector<EtaMaximum> maxima;

  double at(std::size_t holding, std::size_t loading) const { return eta[holding][loading]; }
};

inline std::vector<double> log_spaced(double lo, double hi, std::size_t n) {
  if (n < 2 || !(lo > 0.0) || !(hi > lo)) throw std::invalid_argument("log_spaced: need n >= 2, 0 < lo < hi");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * static_cast<double>(i) / static_cast<double>(n - 1));
  v.front() = lo;
  v.back() = hi;
  return v;
}

/// Maxima on the 4-neighbourhood graph. Connected equal-valued plateaus count
/// when every outside neighbour is strictly lower; a plateau is reported at its
/// lowest-power cell. A grid that is one single plateau has no maximum.
inline std::vector<EtaMaximum> find_local_maxima(const EtaMap& map) {
  const std::size_t rows = map.holding_powers.size();
  const std::size_t cols = map.loading_powers.size();
  if (rows == 0 || cols == 0) return {};
  // Work in power-sorted order so that maxima do not depend on grid order.
  std::vector<std::size_t> row_order(rows), col_order(cols);
  std::iota(row_order.begin(), row_order.end(), 0);
  std::iota(col_order.begin(), col_order.end(), 0);
  std::sort(row_order.begin(), row_order.end(),
            [&](auto a, auto b) { return map.holding_powers[a] < map.holding_powers[b]; });
  std::sort(col_order.begin(), col_order.end(),
            [&](auto a, auto b) { return map.loading_powers[a] < map.loading_powers[b]; });
  auto value = [&](std::size_t r, std::size_t c) { return map.eta[row_order[r]][col_order[c]]; };

  std::vector<int> label(rows * cols, -1);
  std::vector<EtaMaximum> out;
  std::vector<std::pair<std::size_t, std::size_t>> stack, members;
  int next_label = 0;
  for (std::size_t c0 = 0; c0 < cols; ++c0) {
    for (std::size_t r0 = 0; r0 < rows; ++r0) {
      if (label[r0 * cols + c0] >= 0) continue;
      const double v = value(r0, c0);
      const int lab = next_label++;
      bool is_max = true;
      bool has_outside = false;
      stack.assign(1, {r0, c0});
      members.clear();
      label[r0 * cols + c0] = lab;
      while (!stack.empty()) {
        auto [r, c] = stack.back();
        stack.pop_back();
        members.emplace_back(r, c);
        const std::pair<long, long> nbrs[] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
        for (auto [dr, dc] : nbrs) {
          const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(rows) || cc >= static_cast<long>(cols)) continue;
          const double w = value(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
          if (w == v) {
            auto& l = label[static_cast<std::size_t>(rr) * cols + static_cast<std::size_t>(cc)];
            if (l < 0) {
              l = lab;
              stack.emplace_back(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
            }
          } else {
            has_outside = true;
            if (w > v) is_max = false;
          }
        }
      }
      if (is_max && has_outside) {
        auto best = *std::min_element(members.begin(), members.end(), [](const auto& a, const auto& b) {
          return a.second != b.second ? a.second < b.second : a.first < b.first;
        });
        const std::size_t hr = row_order[best.first], lc = col_order[best.second];
        out.push_back({map.loading_powers[lc], map.holding_powers[hr], map.eta[hr][lc], lc, hr});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const EtaMaximum& a, const EtaMaximum& b) {
    return a.loading_power != b.loading_power ? a.loading_power < b.loading_power : a.holding_power < b.holding_power;
  });
  return out;
}

/// eta[i][j] = filling_fraction(tau_d(loading_j), tau(holding_i)).
inline EtaMap eta_map(const PowerTable& dark_time, const PowerTable& lifetime, std::span<const double> loading_grid,
                      std::span<const double> holding_grid) {
  if (loading_grid.empty() || holding_grid.empty()) throw std::invalid_argument("eta_map: empty grid");
  EtaMap map;
  map.loading_powers.assign(loading_grid.begin(), loading_grid.end());
  map.holding_powers.assign(holding_grid.begin(), holding_grid.end());
  std::vector<double> tau_d(loading_grid.size());
  for (std::size_t j = 0; j < loading_grid.size(); ++j) tau_d[j] = dark_time(loading_grid[j]);
  map.eta.resize(holding_grid.size());
  for (std::size_t i = 0; i < holding_grid.size(); ++i) {
    const double tau = lifetime(holding_grid[i]);
    auto& row = map.eta[i];
    row.resize(loading_grid.size());
    for (std::size_t j = 0; j < loading_grid.size(); ++j) row[j] = filling_fraction(tau_d[j], tau);
  }
  map.maxima = find_local_maxima(map);
  return map;
}

// Moving average

struct SeriesPoint {
  double x = 0.0;
  double y = 0.0;
  double y_err = 0.0;
};

/// Centred inverse-variance weighted moving average. Near the edges the window
/// shrinks symmetrically so every output point stays centred.
inline std::vector<SeriesPoint> moving_average(std::span<const SeriesPoint> series, std::size_t window) {
  if (series.empty()) throw std::invalid_argument("moving_average: empty series");
  if (window == 0 || window % 2 == 0) throw std::invalid_argument("moving_average: window must be odd and >= 1");
  for (std::size_t i = 1; i < series.size(); ++i)
    if (series[i].x < series[i - 1].x) throw std::invalid_argument("moving_average: series must be sorted by x");
  for (const auto& p : series)
    if (!(p.y_err > 0.0)) throw std::invalid_argument("moving_average: y_err must be > 0");
  const std::size_t n = series.size();
  const std::size_t h = window / 2;
  std::vector<SeriesPoint> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t hi = std::min({h, i, n - 1 - i});
    double wsum = 0.0, wy = 0.0;
    for (std::size_t k = i - hi; k <= i + hi; ++k) {
      const double w = 1.0 / (series[k].y_err * series[k].y_err);
      wsum += w;
      wy += w * series[k].y;
    }
    out[i] = {series[i].x, wy / wsum, 1.0 / std::sqrt(wsum)};
  }
  return out;
}

}  // namespace tweezer::stats
