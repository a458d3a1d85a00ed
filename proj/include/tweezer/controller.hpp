#pragma once

// Depth-switching feedback on atom arrival, and the open-loop periodic
// modulation experiment, over arrays of independent traps.

#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "tweezer/detect.hpp"
#include "tweezer/kinetics.hpp"
#include "tweezer/parallel.hpp"
#include "tweezer/physics.hpp"
#include "tweezer/random.hpp"
#include "tweezer/signal.hpp"

namespace tweezer::controller {

/// Anything mapping optical power (W) to the rate set of a trap at that power.
template <class F>
concept RateSource = requires(const F& f, double power) {
  { f(power) } -> std::convertible_to<kinetics::RateSet>;
};

/// Two-point rate source: one rate set for the loading/shallow power, one for
/// the holding/deep power.
struct RegimeRates {
  double low_power = mW(10);
  kinetics::RateSet low;
  double high_power = mW(21);
  kinetics::RateSet high;

  kinetics::RateSet operator()(double power) const {
    if (std::abs(power - low_power) <= 1e-12) return low;
    if (std::abs(power - high_power) <= 1e-12) return high;
    throw std::out_of_range("RegimeRates: power not one of the two regimes");
  }
};

struct FeedbackPolicy {
  double loading_power = mW(10);
  double holding_power = mW(21);
  double detection_latency = 0.25;  // s between arrival and the depth switch
  bool mot_off_on_detect = false;
  bool release_on_loss = true;

  void validate() const {
    if (!(loading_power >= 0.0 && holding_power >= 0.0)) throw std::invalid_argument("feedback policy: negative power");
    if (!(detection_latency >= 0.0)) throw std::invalid_argument("feedback policy: latency must be >= 0");
  }
};

struct ModulationSchedule {
  double period = 30.0;  // s per regime
  double shallow_power = mW(10);
  double deep_power = mW(21);
  double total_duration = 7200.0;

  void validate() const {
    if (!(period > 0.0)) throw std::invalid_argument("modulation schedule: period must be > 0");
    if (!(total_duration >= 2.0 * period))
      throw std::invalid_argument("modulation schedule: duration must cover at least two periods");
  }

  /// Shallow -> deep switching instants (shallow first, starting at t = 0).
  std::vector<double> shallow_to_deep_switches() const {
    std::vector<double> s;
    for (double t = period; t < total_duration - 1e-9; t += 2.0 * period) s.push_back(t);
    return s;
  }

  bool is_shallow(double t) const { return static_cast<long long>(std::floor(t / period + 1e-12)) % 2 == 0; }
};

struct ArrayOptions {
  double rate_jitter_sigma = 0.1;  // per-trap log-normal spread of loading and loss rates
  double depth_slope = physics::default_depth_slope;  // K/W, for the count model
  std::optional<signal::CountModel> count_model;      // enables synthetic traces / detection
  std::size_t background_window = 1;
  std::size_t histogram_bins = 200;
  unsigned workers = 0;  // 0: TWEEZER_WORKERS or hardware concurrency
};

/// Power and cooling-light state applied to one trap from start_time on.
struct ControlSegment {
  double start_time = 0.0;
  double power = 0.0;
  bool mot_on = true;
  bool operator==(const ControlSegment&) const = default;
};

using CauseCounts = std::array<std::size_t, 5>;  // indexed by ExitCause

struct TrapRun {
  OccupancyTimeline timeline;
  std::vector<ControlSegment> control;
  double filling = 0.0;
  std::optional<double> detected_filling;
  CauseCounts exits{};
  std::size_t arrivals = 0;
  double loading_jitter = 1.0;
  double loss_jitter = 1.0;
};

struct ArrayRunResult {
  std::vector<TrapRun> traps;
  double mean_filling = 0.0;
  double std_filling = 0.0;
  std::optional<double> mean_detected_filling;
  CauseCounts exits{};
  std::size_t arrivals = 0;
};

namespace detail {

struct Jitter {
  double loading = 1.0;
  double loss = 1.0;
};

inline Jitter draw_jitter(std::uint64_t seed, std::size_t trap, double sigma) {
  if (sigma <= 0.0) return {};
  Engine eng = make_engine(seed, StreamTag::jitter, trap);
  std::normal_distribution<double> n(0.0, sigma);
  const double a = n(eng);
  const double b = n(eng);
  return {std::exp(a), std::exp(b)};
}

inline kinetics::RateSet apply_jitter(kinetics::RateSet r, const Jitter& j) {
  r.loading_rate *= j.loading;
  r.one_body_loss_light *= j.loss;
  r.one_body_loss_dark *= j.loss;
  r.prompt_loss_rate *= j.loss;
  return r;
}

inline void count_exits(TrapRun& run) {
  run.exits.fill(0);
  for (const auto& iv : run.timeline.intervals) ++run.exits[static_cast<std::size_t>(iv.cause)];
  run.arrivals = run.timeline.intervals.size();
}

inline signal::IlluminationSchedule illumination_from(std::span<const ControlSegment> control, double slope) {
  signal::IlluminationSchedule s;
  for (const auto& c : control) {
    if (!s.empty() && s.back().start_time == c.start_time) s.pop_back();
    s.push_back({c.start_time, physics::depth_from_power_calibrated(c.power, slope), c.mot_on});
  }
  return s;
}

inline ArrayRunResult aggregate(std::vector<TrapRun> traps) {
  ArrayRunResult r;
  r.traps = std::move(traps);
  const double n = static_cast<double>(r.traps.size());
  double s = 0.0, sd = 0.0;
  std::size_t n_det = 0;
  for (const auto& t : r.traps) {
    s += t.filling;
    if (t.detected_filling) {
      sd += *t.detected_filling;
      ++n_det;
    }
    for (std::size_t k = 0; k < r.exits.size(); ++k) r.exits[k] += t.exits[k];
    r.arrivals += t.arrivals;
  }
  r.mean_filling = s / n;
  double ss = 0.0;
  for (const auto& t : r.traps) ss += (t.filling - r.mean_filling) * (t.filling - r.mean_filling);
  r.std_filling = r.traps.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  if (n_det == r.traps.size() && n_det > 0) r.mean_detected_filling = sd / static_cast<double>(n_det);
  return r;
}

}  // namespace detail

/// Background-subtracted trace -> occupancy using a single whole-trace fit.
inline OccupancyTimeline detect_occupancy(const signal::FluorescenceTrace& raw, const signal::FluorescenceTrace& background,
                                          std::size_t background_window, std::size_t histogram_bins,
                                          std::size_t debounce_bins = 1) {
  const auto sub = signal::background_subtract(raw, background, background_window);
  const auto hist = detect::make_histogram(sub.counts, histogram_bins);
  auto choice = detect::choose_threshold(detect::fit_bimodal(hist));
  choice.policy.debounce_bins = debounce_bins;
  return detect::binarize(sub, choice.policy);
}

/// One trap under arrival-triggered depth switching. Arrival at the loading
/// power schedules a switch to the holding power after the detection latency
/// (cancelled if the atom is lost first); on loss the trap returns to the
/// loading power, or with release_on_loss = false stays at the holding power
/// with the cooling light on.
template <RateSource Src>
TrapRun run_feedback_trap(const FeedbackPolicy& policy, const Src& source, double duration, std::uint64_t seed,
                          std::size_t trap, double jitter_sigma) {
  const auto jit = detail::draw_jitter(seed, trap, jitter_sigma);
  const auto load = detail::apply_jitter(source(policy.loading_power), jit);
  const auto hold = detail::apply_jitter(source(policy.holding_power), jit);
  load.validate();
  hold.validate();
  Engine eng = make_engine(seed, StreamTag::kinetics, trap);

  TrapRun run;
  run.loading_jitter = jit.loading;
  run.loss_jitter = jit.loss;
  run.timeline.total_duration = duration;
  run.control.push_back({0.0, policy.loading_power, true});

  enum class Regime { loading, holding, parked };
  Regime regime = Regime::loading;
  bool occupied = false;
  double enter = 0.0;
  constexpr double none = std::numeric_limits<double>::infinity();
  double pending_switch = none;
  double t = 0.0;

  auto switch_to_holding = [&](double when) {
    regime = Regime::holding;
    run.control.push_back({when, policy.holding_power, !policy.mot_off_on_detect});
  };

  while (t < duration) {
    if (regime == Regime::loading) {
      const double horizon = std::min(pending_switch, duration);
      auto ev = kinetics::next_event(eng, load, true, occupied, t, horizon);
      if (!ev) {
        t = horizon;
        if (t == pending_switch && t < duration) {
          pending_switch = none;
          switch_to_holding(t);
        }
        continue;
      }
      t = ev->time;
      if (ev->arrival) {
        occupied = true;
        enter = t;
        if (policy.detection_latency == 0.0) {
          switch_to_holding(t);
        } else {
          pending_switch = t + policy.detection_latency;
        }
      } else {
        occupied = false;
        pending_switch = none;
        run.timeline.intervals.push_back({enter, t, ev->cause});
      }
    } else {
      const bool parked = regime == Regime::parked;
      const bool mot_on = parked || !policy.mot_off_on_detect;
      auto ev = kinetics::next_event(eng, hold, mot_on, occupied, t, duration);
      if (!ev) {
        t = duration;
        continue;
      }
      t = ev->time;
      if (ev->arrival) {
        occupied = true;
        enter = t;
        continue;
      }
      occupied = false;
      run.timeline.intervals.push_back({enter, t, ev->cause});
      if (parked) continue;
      if (policy.release_on_loss) {
        regime = Regime::loading;
        run.control.push_back({t, policy.loading_power, true});
      } else {
        regime = Regime::parked;
        run.control.push_back({t, policy.holding_power, true});
      }
    }
  }
  if (occupied && duration > enter) run.timeline.intervals.push_back({enter, duration, ExitCause::censored});
  run.filling = run.timeline.occupancy();
  detail::count_exits(run);
  return run;
}

template <RateSource Src>
ArrayRunResult run_feedback(std::size_t n_traps, const FeedbackPolicy& policy, const Src& source, double duration,
                            std::uint64_t seed, const ArrayOptions& opt = {}) {
  policy.validate();
  if (n_traps == 0) throw std::invalid_argument("run_feedback: need at least one trap");
  if (!(duration > 0.0)) throw std::invalid_argument("run_feedback: duration must be > 0");
  std::vector<TrapRun> traps(n_traps);
  parallel_for(
      n_traps,
      [&](std::size_t i) {
        traps[i] = run_feedback_trap(policy, source, duration, seed, i, opt.rate_jitter_sigma);
        // A dark atom cannot be seen, so detection only runs with the light on.
        if (opt.count_model && !policy.mot_off_on_detect) {
          const auto illum = detail::illumination_from(traps[i].control, opt.depth_slope);
          const auto raw = signal::synthesize_trace(traps[i].timeline, illum, *opt.count_model, seed, i);
          const auto bg = signal::synthesize_background(duration, *opt.count_model, seed, i);
          const auto det = detect_occupancy(raw, bg, opt.background_window, opt.histogram_bins);
          traps[i].detected_filling = det.occupancy();
        }
      },
      opt.workers);
  return detail::aggregate(std::move(traps));
}

/// Renewal estimate of the feedback filling fraction. With latency L the atom
/// first sits at the loading depth (exit rate a); the expected occupied time
/// per cycle is (1 - e^{-aL})/a + e^{-aL} tau_hold, against a mean wait tau_d.
template <RateSource Src>
double predicted_filling(const FeedbackPolicy& policy, const Src& source) {
  policy.validate();
  const auto load = source(policy.loading_power);
  const auto hold = source(policy.holding_power);
  const double arrival = load.arrival_rate(true);
  if (!(arrival > 0.0)) return 0.0;
  const double tau_dark = 1.0 / arrival;
  const double hold_exit = hold.exit_rate(!policy.mot_off_on_detect);
  const double tau_hold = hold_exit > 0.0 ? 1.0 / hold_exit : std::numeric_limits<double>::infinity();
  const double a = load.exit_rate(true);
  const double L = policy.detection_latency;
  double occupied;
  if (L == 0.0) {
    occupied = tau_hold;
  } else {
    const double survive = std::exp(-a * L);
    occupied = (a > 0.0 ? (1.0 - survive) / a : L) + survive * tau_hold;
  }
  if (std::isinf(occupied)) return 1.0;
  return stats::filling_fraction(tau_dark, occupied);
}

// Periodic modulation

struct ModulationRun {
  ArrayRunResult result;
  std::vector<signal::FluorescenceTrace> traces;       // raw, one per trap
  std::vector<signal::FluorescenceTrace> backgrounds;  // surrounding-pixel reference
  std::vector<double> switch_times;                    // shallow -> deep
  std::vector<ControlSegment> control;
};

inline std::vector<ControlSegment> modulation_control(const ModulationSchedule& sched) {
  std::vector<ControlSegment> c;
  bool shallow = true;
  for (double t = 0.0; t < sched.total_duration - 1e-9; t += sched.period, shallow = !shallow)
    c.push_back({t, shallow ? sched.shallow_power : sched.deep_power, true});
  return c;
}

template <RateSource Src>
ModulationRun run_periodic_modulation(std::size_t n_traps, const ModulationSchedule& sched, const Src& source,
                                      std::uint64_t seed, const ArrayOptions& opt = {}) {
  sched.validate();
  if (n_traps == 0) throw std::invalid_argument("run_periodic_modulation: need at least one trap");
  ModulationRun out;
  out.control = modulation_control(sched);
  out.switch_times = sched.shallow_to_deep_switches();
  const auto shallow = source(sched.shallow_power);
  const auto deep = source(sched.deep_power);
  std::vector<TrapRun> traps(n_traps);
  if (opt.count_model) {
    out.traces.resize(n_traps);
    out.backgrounds.resize(n_traps);
  }
  const auto illum = detail::illumination_from(out.control, opt.depth_slope);
  parallel_for(
      n_traps,
      [&](std::size_t i) {
        const auto jit = detail::draw_jitter(seed, i, opt.rate_jitter_sigma);
        std::vector<kinetics::ScheduleEntry> entries;
        for (const auto& c : out.control)
          entries.push_back({c.start_time, c.mot_on,
                             detail::apply_jitter(c.power == sched.shallow_power ? shallow : deep, jit)});
        auto& run = traps[i];
        run.loading_jitter = jit.loading;
        run.loss_jitter = jit.loss;
        run.control = out.control;
        run.timeline = kinetics::simulate_trap(kinetics::RateSchedule(std::move(entries)), sched.total_duration, seed, i);
        run.filling = run.timeline.occupancy();
        detail::count_exits(run);
        if (opt.count_model) {
          out.traces[i] = signal::synthesize_trace(run.timeline, illum, *opt.count_model, seed, i);
          out.backgrounds[i] = signal::synthesize_background(sched.total_duration, *opt.count_model, seed, i);
        }
      },
      opt.workers);
  out.result = detail::aggregate(std::move(traps));
  return out;
}

/// Occupied fraction of the shallow half-periods.
inline double shallow_filling(const OccupancyTimeline& tl, const ModulationSchedule& sched) {
  double occ = 0.0, total = 0.0;
  for (double t = 0.0; t < tl.total_duration - 1e-9; t += 2.0 * sched.period) {
    const double end = std::min(t + sched.period, tl.total_duration);
    occ += tl.occupied_time_between(t, end);
    total += end - t;
  }
  return total > 0.0 ? occ / total : 0.0;
}

struct ModulationAnalysis {
  std::vector<OccupancyTimeline> detected;
  std::vector<detect::BimodalFit> shallow_fits, deep_fits;
  detect::OccupancyCurve pooled;
  std::vector<detect::OccupancyCurve> per_trap;
  std::vector<detect::EnsemblePoint> ensemble;
  detect::DecayFit tau_shallow;  // before the switch
  detect::DecayFit tau_deep;     // after the switch
  detect::DecayFit ensemble_tau_shallow, ensemble_tau_deep;
  double shallow_filling_detected = 0.0;
  double shallow_filling_truth = 0.0;
};

struct AnalysisOptions {
  std::size_t background_window = 1;
  std::size_t histogram_bins = 200;
  std::size_t debounce_bins = 1;
  bool sub_bin_timing = true;  // place arrivals and losses inside partly filled bins
  detect::ConditionMode mode = detect::ConditionMode::same_atom;
};

/// Full chain on a modulation run: background subtraction, a bimodal fit and
/// threshold per regime (the single-atom level differs between depths),
/// binarisation, conditional occupancy around the shallow -> deep switches and
/// exponential fits on either side.
inline ModulationAnalysis analyze_modulation(const ModulationRun& run, const ModulationSchedule& sched,
                                             const AnalysisOptions& opt = {}) {
  if (run.traces.size() != run.result.traps.size())
    throw std::invalid_argument("analyze_modulation: run has no synthetic traces");
  ModulationAnalysis a;
  const std::size_t n = run.traces.size();
  a.detected.resize(n);
  a.shallow_fits.resize(n);
  a.deep_fits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto sub = signal::background_subtract(run.traces[i], run.backgrounds[i], opt.background_window);
    std::vector<double> shallow_counts, deep_counts;
    std::vector<char> is_shallow(sub.size());
    for (std::size_t b = 0; b < sub.size(); ++b) {
      is_shallow[b] = sched.is_shallow(sub.bin_start(b) - sub.start_time) ? 1 : 0;
      (is_shallow[b] ? shallow_counts : deep_counts).push_back(sub.counts[b]);
    }
    a.shallow_fits[i] = detect::fit_bimodal(detect::make_histogram(shallow_counts, opt.histogram_bins));
    a.deep_fits[i] = detect::fit_bimodal(detect::make_histogram(deep_counts, opt.histogram_bins));
    const auto pol_s = detect::choose_threshold(a.shallow_fits[i]).policy;
    const auto pol_d = detect::choose_threshold(a.deep_fits[i]).policy;
    std::vector<double> thr(sub.size()), full(sub.size()), empty(sub.size()), level(sub.size());
    const bool sub_bin = opt.sub_bin_timing && pol_s.sub_bin() && pol_d.sub_bin();
    for (std::size_t b = 0; b < sub.size(); ++b) {
      const auto& p = is_shallow[b] ? pol_s : pol_d;
      thr[b] = p.threshold;
      full[b] = p.full_level;
      empty[b] = p.empty_level;
      level[b] = p.single_atom_level;
    }
    a.detected[i] = detect::binarize(sub, thr, opt.debounce_bins, 0.0,
                                     sub_bin ? std::optional(detect::SubBinLevels{full, empty, level}) : std::nullopt);
  }
  detect::ConditionalOptions copt;
  copt.window = 2.0 * sched.period;
  copt.resolution = run.traces.front().bin_width;
  copt.mode = opt.mode;
  a.pooled = detect::conditional_occupancy(a.detected, run.switch_times, copt);
  for (std::size_t i = 0; i < n; ++i)
    a.per_trap.push_back(detect::conditional_occupancy(std::span(&a.detected[i], 1), run.switch_times, copt));
  a.ensemble = detect::ensemble_occupancy(a.per_trap);
  a.tau_shallow = detect::fit_decay(a.pooled, -sched.period, 0.0);
  a.tau_deep = detect::fit_decay(a.pooled, 0.0, sched.period);
  a.ensemble_tau_shallow = detect::fit_decay(a.ensemble, -sched.period, 0.0);
  a.ensemble_tau_deep = detect::fit_decay(a.ensemble, 0.0, sched.period);
  double det = 0.0, truth = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    det += shallow_filling(a.detected[i], sched);
    truth += shallow_filling(run.result.traps[i].timeline, sched);
  }
  a.shallow_filling_detected = det / static_cast<double>(n);
  a.shallow_filling_truth = truth / static_cast<double>(n);
  return a;
}

}  // namespace tweezer::controller
