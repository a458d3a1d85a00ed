#pragma once

// Fluorescence count traces from occupancy timelines: background light, a
// depth-dependent single-atom rate (the trap's Stark shift detunes the cooling
// light) and EMCCD-like excess noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "tweezer/random.hpp"
#include "tweezer/timeline.hpp"
#include "tweezer/units.hpp"

namespace tweezer::signal {

inline constexpr double rb87_d2_linewidth = constants::two_pi * 6.0666e6;  // rad/s

struct CountModel {
  double background_rate = 0.5e6;       // counts/s
  double single_atom_rate_ref = 0.25e6; // counts/s at reference_depth
  double reference_depth = 0.83e-3;     // K
  double linewidth = rb87_d2_linewidth; // rad/s
  double detuning_at_zero_depth = -2.2 * rb87_d2_linewidth;  // rad/s
  double stark_shift_per_kelvin = 4.0 * rb87_d2_linewidth / 1e-3;  // rad/s per K, pushes the line away
  double bin_width = 0.25;              // s
  double excess_noise_factor = 2.0;

  void validate() const {
    if (!(background_rate >= 0.0 && single_atom_rate_ref >= 0.0))
      throw std::invalid_argument("count model: rates must be >= 0");
    if (!(bin_width > 0.0)) throw std::invalid_argument("count model: bin_width must be > 0");
    if (!(linewidth > 0.0)) throw std::invalid_argument("count model: linewidth must be > 0");
    if (!(reference_depth >= 0.0)) throw std::invalid_argument("count model: reference_depth must be >= 0");
    if (!(excess_noise_factor >= 1.0)) throw std::invalid_argument("count model: excess_noise_factor must be >= 1");
  }
};

/// Cooling-light detuning seen by a trapped atom. Deeper traps detune the
/// (red-detuned) light further.
inline double effective_detuning(double depth, const CountModel& model) {
  return model.detuning_at_zero_depth - model.stark_shift_per_kelvin * depth;
}

inline double lorentzian(double detuning, double linewidth) {
  const double x = 2.0 * detuning / linewidth;
  return 1.0 / (1.0 + x * x);
}

inline double scattering_rate(double depth, const CountModel& model) {
  if (!(depth >= 0.0)) throw std::domain_error("scattering_rate: depth must be >= 0");
  if (depth == model.reference_depth) return model.single_atom_rate_ref;
  return model.single_atom_rate_ref * lorentzian(effective_detuning(depth, model), model.linewidth) /
         lorentzian(effective_detuning(model.reference_depth, model), model.linewidth);
}

/// Piecewise-constant trap depth and cooling-light state. A dark atom
/// (MOT off) scatters nothing.
struct IlluminationSegment {
  double start_time = 0.0;
  double depth = 0.0;  // K
  bool mot_on = true;

  bool operator==(const IlluminationSegment&) const = default;
};

using IlluminationSchedule = std::vector<IlluminationSegment>;

inline IlluminationSchedule constant_illumination(double depth, bool mot_on = true) {
  return {IlluminationSegment{0.0, depth, mot_on}};
}

struct FluorescenceTrace {
  double start_time = 0.0;
  double bin_width = 0.25;
  std::vector<double> counts;

  std::size_t size() const { return counts.size(); }
  double duration() const { return bin_width * static_cast<double>(counts.size()); }
  double bin_start(std::size_t i) const { return start_time + bin_width * static_cast<double>(i); }
  bool operator==(const FluorescenceTrace&) const = default;
};

inline std::size_t bin_count(double duration, double bin_width) {
  return static_cast<std::size_t>(std::ceil(duration / bin_width - 1e-9));
}

/// Expected counts per bin, without noise.
inline std::vector<double> expected_counts(const OccupancyTimeline& timeline, const IlluminationSchedule& schedule,
                                           const CountModel& model) {
  model.validate();
  if (schedule.empty() || schedule.front().start_time != 0.0)
    throw std::invalid_argument("synthesize_trace: illumination schedule must start at t = 0");
  for (std::size_t i = 1; i < schedule.size(); ++i)
    if (!(schedule[i].start_time > schedule[i - 1].start_time))
      throw std::invalid_argument("synthesize_trace: illumination start times must increase");
  if (!(timeline.total_duration > 0.0)) throw std::invalid_argument("synthesize_trace: empty timeline duration");

  const std::size_t n = bin_count(timeline.total_duration, model.bin_width);
  std::vector<double> rate(schedule.size());
  for (std::size_t s = 0; s < schedule.size(); ++s)
    rate[s] = schedule[s].mot_on ? scattering_rate(schedule[s].depth, model) : 0.0;

  std::vector<double> mean(n);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = model.bin_width * static_cast<double>(i);
    const double b = std::min(a + model.bin_width, timeline.total_duration);
    double m = model.background_rate * model.bin_width;
    while (seg + 1 < schedule.size() && schedule[seg + 1].start_time <= a) ++seg;
    for (std::size_t s = seg; s < schedule.size() && schedule[s].start_time < b; ++s) {
      const double lo = std::max(a, schedule[s].start_time);
      const double hi = s + 1 < schedule.size() ? std::min(b, schedule[s + 1].start_time) : b;
      if (hi > lo && rate[s] > 0.0) m += rate[s] * timeline.occupied_time_between(lo, hi);
    }
    mean[i] = m;
  }
  return mean;
}

/// Poisson counts whose mean is gamma-mixed so that var/mean equals the
/// excess noise factor.
inline double draw_counts(Engine& eng, double mean, double excess_noise_factor) {
  if (mean <= 0.0) return 0.0;
  double lambda = mean;
  if (excess_noise_factor > 1.0) {
    std::gamma_distribution<double> mix(mean / (excess_noise_factor - 1.0), excess_noise_factor - 1.0);
    lambda = mix(eng);
    if (lambda <= 0.0) return 0.0;
  }
  std::poisson_distribution<long long> pois(lambda);
  return static_cast<double>(pois(eng));
}

inline FluorescenceTrace synthesize_trace(const OccupancyTimeline& timeline, const IlluminationSchedule& schedule,
                                          const CountModel& model, Engine& eng) {
  FluorescenceTrace tr;
  tr.bin_width = model.bin_width;
  tr.counts = expected_counts(timeline, schedule, model);
  for (double& c : tr.counts) c = draw_counts(eng, c, model.excess_noise_factor);
  return tr;
}

inline FluorescenceTrace synthesize_trace(const OccupancyTimeline& timeline, const IlluminationSchedule& schedule,
                                          const CountModel& model, std::uint64_t seed, std::uint64_t stream = 0) {
  Engine eng = make_engine(seed, StreamTag::signal, stream);
  return synthesize_trace(timeline, schedule, model, eng);
}

/// Reference trace from the pixels around a trap: background light only.
inline FluorescenceTrace synthesize_background(double duration, const CountModel& model, std::uint64_t seed,
                                               std::uint64_t stream = 0) {
  Engine eng = make_engine(seed, StreamTag::background, stream);
  OccupancyTimeline empty{duration, {}};
  return synthesize_trace(empty, constant_illumination(model.reference_depth), model, eng);
}

/// Centred moving average with shrinking windows at the edges.
inline std::vector<double> smooth(const std::vector<double>& v, std::size_t window) {
  if (window <= 1 || v.empty()) return v;
  const std::size_t h = window / 2;
  const std::size_t n = v.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + v[i];
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = std::min({h, i, n - 1 - i});
    out[i] = (prefix[i + k + 1] - prefix[i - k]) / static_cast<double>(2 * k + 1);
  }
  return out;
}

inline FluorescenceTrace background_subtract(const FluorescenceTrace& trace, const FluorescenceTrace& background,
                                             std::size_t window = 1) {
  if (trace.size() != background.size() || trace.bin_width != background.bin_width)
    throw std::invalid_argument("background_subtract: traces differ in length or bin width");
  if (window == 0 || window % 2 == 0) throw std::invalid_argument("background_subtract: window must be odd");
  FluorescenceTrace out = trace;
  const auto bg = smooth(background.counts, window);
  for (std::size_t i = 0; i < out.size(); ++i) out.counts[i] -= bg[i];
  return out;
}

/// Analytic empty / single-atom peak statistics of a background-subtracted
/// trace at fixed depth. `separation` is the peak distance in units of the
/// combined width sqrt(sigma0^2 + sigma1^2).
struct PeakStatistics {
  double mu0 = 0.0, sigma0 = 0.0;
  double mu1 = 0.0, sigma1 = 0.0;
  double separation = 0.0;
};

inline PeakStatistics peak_statistics(double depth, const CountModel& model, std::size_t background_window = 1) {
  model.validate();
  const double f = model.excess_noise_factor;
  const double bg = model.background_rate * model.bin_width;
  const double atom = scattering_rate(depth, model) * model.bin_width;
  const double bg_var = f * bg / static_cast<double>(std::max<std::size_t>(1, background_window));
  PeakStatistics p;
  p.mu0 = 0.0;
  p.mu1 = atom;
  p.sigma0 = std::sqrt(f * bg + bg_var);
  p.sigma1 = std::sqrt(f * (bg + atom) + bg_var);
  p.separation = (p.mu1 - p.mu0) / std::hypot(p.sigma0, p.sigma1);
  return p;
}

}  // namespace tweezer::signal
