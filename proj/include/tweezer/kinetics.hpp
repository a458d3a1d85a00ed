#pragma once

// Two-state (empty / one atom) trap kinetics under a MOT: Poissonian loading,
// one-body loss and collisional-blockade pair loss, simulated exactly with
// competing exponentials for piecewise-constant rates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tweezer/power_table.hpp"
#include "tweezer/random.hpp"
#include "tweezer/stats.hpp"
#include "tweezer/timeline.hpp"

namespace tweezer::kinetics {

struct RateSet {
  double loading_rate = 0.0;         // R, 1/s
  double one_body_loss_light = 0.0;  // gamma_L, cooling light on
  double one_body_loss_dark = 0.0;   // gamma_D, cooling light off
  bool blockade = true;              // second arrival ejects both atoms
  double capture_probability = 1.0;  // p_c
  double prompt_loss_rate = 0.0;     // extra escape channel of weakly bound atoms

  bool operator==(const RateSet&) const = default;

  void validate() const {
    if (!(loading_rate >= 0.0 && one_body_loss_light >= 0.0 && one_body_loss_dark >= 0.0 && prompt_loss_rate >= 0.0))
      throw std::invalid_argument("rate set: rates must be >= 0");
    if (!(capture_probability >= 0.0 && capture_probability <= 1.0))
      throw std::invalid_argument("rate set: capture_probability must be in [0, 1]");
  }

  double effective_loading() const { return loading_rate * capture_probability; }

  /// Rate of empty -> occupied. Loading needs the MOT.
  double arrival_rate(bool mot_on) const { return mot_on ? effective_loading() : 0.0; }
  double one_body_rate(bool mot_on) const { return mot_on ? one_body_loss_light : one_body_loss_dark; }
  double pair_loss_rate(bool mot_on) const { return (mot_on && blockade) ? effective_loading() : 0.0; }
  double exit_rate(bool mot_on) const { return one_body_rate(mot_on) + pair_loss_rate(mot_on) + prompt_loss_rate; }
};

struct ScheduleEntry {
  double start_time = 0.0;
  bool mot_on = true;
  RateSet rates;
};

class RateSchedule {
 public:
  RateSchedule() = default;
  explicit RateSchedule(std::vector<ScheduleEntry> entries) : entries_(std::move(entries)) { validate(); }

  static RateSchedule constant(const RateSet& rates, bool mot_on = true) {
    return RateSchedule({ScheduleEntry{0.0, mot_on, rates}});
  }

  void validate() const {
    if (entries_.empty() || entries_.front().start_time != 0.0)
      throw std::invalid_argument("rate schedule: first entry must start at t = 0");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      entries_[i].rates.validate();
      if (i > 0 && !(entries_[i].start_time > entries_[i - 1].start_time))
        throw std::invalid_argument("rate schedule: start times must be strictly increasing");
    }
  }

  const std::vector<ScheduleEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const ScheduleEntry& operator[](std::size_t i) const { return entries_[i]; }

  double segment_end(std::size_t i, double duration) const {
    return i + 1 < entries_.size() ? std::min(entries_[i + 1].start_time, duration) : duration;
  }

 private:
  std::vector<ScheduleEntry> entries_;
};

struct Event {
  double time = 0.0;
  bool arrival = false;  // otherwise a loss
  ExitCause cause = ExitCause::censored;
};

/// Next jump of the two-state chain from `now`, or nullopt if nothing happens
/// before `horizon` (the rates may change there; by memorylessness the caller
/// simply draws again from the horizon).
inline std::optional<Event> next_event(Engine& eng, const RateSet& r, bool mot_on, bool occupied, double now,
                                       double horizon) {
  if (!occupied) {
    const double dt = draw_exponential(eng, r.arrival_rate(mot_on));
    if (!(now + dt < horizon)) return std::nullopt;
    return Event{now + dt, true, ExitCause::censored};
  }
  const double one_body = r.one_body_rate(mot_on);
  const double pair = r.pair_loss_rate(mot_on);
  const double prompt = r.prompt_loss_rate;
  const double total = one_body + pair + prompt;
  const double dt = draw_exponential(eng, total);
  if (!(now + dt < horizon)) return std::nullopt;
  const double u = uniform_open(eng) * total;
  ExitCause cause = u < one_body ? ExitCause::one_body : (u < one_body + pair ? ExitCause::pair_loss : ExitCause::prompt);
  return Event{now + dt, false, cause};
}

inline OccupancyTimeline simulate_trap(const RateSchedule& schedule, double duration, Engine& eng) {
  if (!(duration > 0.0)) throw std::invalid_argument("simulate_trap: duration must be > 0");
  schedule.validate();
  OccupancyTimeline tl;
  tl.total_duration = duration;
  bool occupied = false;
  double enter = 0.0;
  for (std::size_t s = 0; s < schedule.size() && schedule[s].start_time < duration; ++s) {
    const auto& entry = schedule[s];
    const double end = schedule.segment_end(s, duration);
    double t = entry.start_time;
    while (auto ev = next_event(eng, entry.rates, entry.mot_on, occupied, t, end)) {
      t = ev->time;
      if (ev->arrival) {
        occupied = true;
        enter = t;
      } else {
        occupied = false;
        if (t > enter) tl.intervals.push_back({enter, t, ev->cause});
      }
    }
  }
  if (occupied && duration > enter) tl.intervals.push_back({enter, duration, ExitCause::censored});
  return tl;
}

/// Deterministic per seed: trap `stream` of master `seed`.
inline OccupancyTimeline simulate_trap(const RateSchedule& schedule, double duration, std::uint64_t seed,
                                       std::uint64_t stream = 0) {
  Engine eng = make_engine(seed, StreamTag::kinetics, stream);
  return simulate_trap(schedule, duration, eng);
}

/// Stationary occupation of the two-state chain. With blockade the occupied
/// state leaves at R_eff + gamma (a second arrival ejects both atoms), so
/// p = R_eff / (2 R_eff + gamma); without it p = R_eff / (R_eff + gamma).
inline double steady_state_occupancy(double loading_rate, double gamma, bool blockade, double capture_probability = 1.0) {
  if (!(loading_rate >= 0.0 && gamma >= 0.0 && capture_probability >= 0.0 && capture_probability <= 1.0))
    throw std::domain_error("steady_state_occupancy: invalid rates");
  const double r = loading_rate * capture_probability;
  if (!(r + gamma > 0.0)) throw std::domain_error("steady_state_occupancy: all rates zero");
  return blockade ? r / (2.0 * r + gamma) : r / (r + gamma);
}

inline double steady_state_occupancy(const RateSet& rates, bool mot_on = true) {
  const double arrive = rates.arrival_rate(mot_on);
  const double leave = rates.exit_rate(mot_on);
  if (!(arrive + leave > 0.0)) throw std::domain_error("steady_state_occupancy: all rates zero");
  return arrive / (arrive + leave);
}

// Survival (release-and-recapture in the dark)

struct SurvivalEstimate {
  double dark_interval = 0.0;
  std::size_t trials = 0;
  std::size_t successes = 0;
  double probability = 0.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
  double elapsed_time = 0.0;  // loading waits + dark intervals
};

inline double analytic_survival(const RateSet& rates, double dark_interval) {
  return std::exp(-(rates.one_body_loss_dark + rates.prompt_loss_rate) * dark_interval);
}

/// Each trial: wait for a loading event, extinguish the MOT for the dark
/// interval and check for the atom on re-illumination. A surviving atom starts
/// the next trial immediately; a lost one means waiting for a new load.
inline SurvivalEstimate simulate_survival_experiment(const RateSet& rates, double dark_interval, std::size_t trials,
                                                     std::uint64_t seed, std::uint64_t stream = 0) {
  if (trials < 1) throw std::invalid_argument("simulate_survival_experiment: trials must be >= 1");
  if (!(dark_interval >= 0.0)) throw std::invalid_argument("simulate_survival_experiment: dark interval must be >= 0");
  rates.validate();
  if (!(rates.effective_loading() > 0.0))
    throw std::invalid_argument("simulate_survival_experiment: trap never loads");
  Engine eng = make_engine(seed, StreamTag::survival, stream);
  const double dark_loss = rates.one_body_loss_dark + rates.prompt_loss_rate;
  SurvivalEstimate est;
  est.dark_interval = dark_interval;
  est.trials = trials;
  bool have_atom = false;
  for (std::size_t i = 0; i < trials; ++i) {
    if (!have_atom) {
      est.elapsed_time += draw_exponential(eng, rates.effective_loading());
      have_atom = true;
    }
    const double loss_time = draw_exponential(eng, dark_loss);
    if (loss_time >= dark_interval) {
      ++est.successes;
      est.elapsed_time += dark_interval;
    } else {
      have_atom = false;
      est.elapsed_time += dark_interval;
    }
  }
  est.probability = static_cast<double>(est.successes) / static_cast<double>(trials);
  const auto ci = stats::wilson_interval(est.successes, trials, 0.95);
  est.ci_low = ci.low;
  est.ci_high = ci.high;
  return est;
}

// Rates from measured lifetime / dark-time tables

struct Calibration {
  PowerTable dark_time;                   // tau_d(P), MOT on
  PowerTable lifetime;                    // tau(P), MOT on
  std::optional<PowerTable> lifetime_dark;  // tau(P) with cooling light extinguished
  bool blockade = true;
  double capture_probability = 1.0;
  double prompt_loss_rate = 0.0;

  bool covers(double power) const {
    return dark_time.covers(power) && lifetime.covers(power) && (!lifetime_dark || lifetime_dark->covers(power));
  }
};

/// R_eff = 1/tau_d(P). With blockade, gamma_L makes the total MOT-on exit rate
/// equal 1/tau(P) (clamped at zero when tau > tau_d cannot be reproduced).
/// gamma_D = 1/tau_dark(P) when that table exists.
inline RateSet build_rate_set(double power, bool mot_on, const Calibration& cal) {
  if (!(cal.capture_probability > 0.0 && cal.capture_probability <= 1.0))
    throw std::invalid_argument("build_rate_set: capture_probability must be in (0, 1]");
  if (!mot_on && !cal.lifetime_dark)
    throw std::invalid_argument("build_rate_set: no MOT-off lifetime table for a MOT-off rate set");
  RateSet r;
  r.blockade = cal.blockade;
  r.capture_probability = cal.capture_probability;
  r.prompt_loss_rate = cal.prompt_loss_rate;
  const double r_eff = 1.0 / cal.dark_time(power);
  r.loading_rate = r_eff / cal.capture_probability;
  const double exit_total = 1.0 / cal.lifetime(power);
  r.one_body_loss_light = std::max(0.0, exit_total - (cal.blockade ? r_eff : 0.0) - cal.prompt_loss_rate);
  if (cal.lifetime_dark) r.one_body_loss_dark = std::max(0.0, 1.0 / (*cal.lifetime_dark)(power) - cal.prompt_loss_rate);
  return r;
}

/// Power -> RateSet callable over a calibration (what the controller consumes).
class CalibratedRates {
 public:
  explicit CalibratedRates(Calibration cal) : cal_(std::move(cal)) {}
  RateSet operator()(double power) const { return build_rate_set(power, true, cal_); }
  const Calibration& calibration() const { return cal_; }

 private:
  Calibration cal_;
};

/// Rate set with given mean dark time, MOT-on lifetime and (optional) MOT-off
/// lifetime, blockade on.
inline RateSet rates_from_times(double tau_dark, double tau, double tau_mot_off = std::numeric_limits<double>::infinity()) {
  if (!(tau_dark > 0.0 && tau > 0.0 && tau_mot_off > 0.0)) throw std::invalid_argument("rates_from_times: times must be > 0");
  RateSet r;
  r.loading_rate = 1.0 / tau_dark;
  r.one_body_loss_light = std::max(0.0, 1.0 / tau - r.loading_rate);
  r.one_body_loss_dark = std::isinf(tau_mot_off) ? 0.0 : 1.0 / tau_mot_off;
  return r;
}

}  // namespace tweezer::kinetics
