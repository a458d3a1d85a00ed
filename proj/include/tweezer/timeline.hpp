#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tweezer {

/// Why an atom left. `unknown` is used for exits inferred from fluorescence.
enum class ExitCause { one_body, pair_loss, prompt, censored, unknown };

inline std::string_view to_string(ExitCause c) {
  switch (c) {
    case ExitCause::one_body: return "one_body";
    case ExitCause::pair_loss: return "pair_loss";
    case ExitCause::prompt: return "prompt";
    case ExitCause::censored: return "censored";
    case ExitCause::unknown: return "unknown";
  }
  return "censored";
}

inline ExitCause exit_cause_from_string(std::string_view s) {
  if (s == "one_body") return ExitCause::one_body;
  if (s == "pair_loss") return ExitCause::pair_loss;
  if (s == "prompt") return ExitCause::prompt;
  if (s == "censored") return ExitCause::censored;
  if (s == "unknown") return ExitCause::unknown;
  throw std::invalid_argument("unknown exit cause: " + std::string(s));
}

struct OccupiedInterval {
  double enter = 0.0;
  double exit = 0.0;
  ExitCause cause = ExitCause::censored;

  double length() const { return exit - enter; }
  bool operator==(const OccupiedInterval&) const = default;
};

/// Single-trap occupancy history: at most one atom at any time, so the
/// history is a list of disjoint occupied intervals.
struct OccupancyTimeline {
  double total_duration = 0.0;
  std::vector<OccupiedInterval> intervals;

  bool operator==(const OccupancyTimeline&) const = default;

  void validate() const {
    if (!(total_duration > 0.0)) throw std::invalid_argument("timeline: total_duration must be > 0");
    double last = 0.0;
    for (const auto& iv : intervals) {
      if (!(iv.enter >= last && iv.enter < iv.exit && iv.exit <= total_duration))
        throw std::invalid_argument("timeline: intervals must be ordered, disjoint and inside [0, duration]");
      last = iv.exit;
    }
  }

  double occupied_time() const {
    double s = 0.0;
    for (const auto& iv : intervals) s += iv.length();
    return s;
  }

  double occupancy() const { return total_duration > 0.0 ? occupied_time() / total_duration : 0.0; }

  /// Occupied time inside [from, to).
  double occupied_time_between(double from, double to) const {
    double s = 0.0;
    auto it = std::lower_bound(intervals.begin(), intervals.end(), from,
                               [](const OccupiedInterval& iv, double t) { return iv.exit <= t; });
    for (; it != intervals.end() && it->enter < to; ++it)
      s += std::max(0.0, std::min(it->exit, to) - std::max(it->enter, from));
    return s;
  }

  /// Index of the interval covering t (enter <= t < exit), or -1.
  long interval_at(double t) const {
    auto it = std::upper_bound(intervals.begin(), intervals.end(), t,
                               [](double v, const OccupiedInterval& iv) { return v < iv.enter; });
    if (it == intervals.begin()) return -1;
    --it;
    return (t < it->exit) ? static_cast<long>(it - intervals.begin()) : -1;
  }

  bool occupied_at(double t) const { return interval_at(t) >= 0; }
};

}  // namespace tweezer
