#pragma once

// Lifetime / dark-time lookup tables indexed by optical power, interpolated
// piecewise-linearly in (log P, tau).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tweezer/units.hpp"

namespace tweezer {

struct TablePoint {
  double power = 0.0;  // W
  double tau = 0.0;    // s
  double tau_err = 0.0;
};

class PowerTable {
 public:
  PowerTable() = default;

  explicit PowerTable(std::vector<TablePoint> points, std::string name = "table")
      : points_(std::move(points)), name_(std::move(name)) {
    if (points_.empty()) throw std::invalid_argument(name_ + ": empty table");
    std::sort(points_.begin(), points_.end(),
              [](const TablePoint& a, const TablePoint& b) { return a.power < b.power; });
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!(points_[i].power > 0.0)) throw std::invalid_argument(name_ + ": powers must be > 0");
      if (!(points_[i].tau > 0.0)) throw std::invalid_argument(name_ + ": tau must be > 0");
      if (i > 0 && points_[i].power == points_[i - 1].power)
        throw std::invalid_argument(name_ + ": duplicate power");
    }
  }

  /// Table returning `tau` for every power (handy for synthetic rate sets).
  static PowerTable constant(double tau, double p_min = mW(1), double p_max = mW(1000)) {
    return PowerTable({{p_min, tau, 0.0}, {p_max, tau, 0.0}}, "constant");
  }

  double min_power() const { return points_.front().power; }
  double max_power() const { return points_.back().power; }
  bool covers(double power) const {
    return power >= min_power() * (1 - 1e-12) && power <= max_power() * (1 + 1e-12);
  }
  const std::vector<TablePoint>& points() const { return points_; }
  const std::string& name() const { return name_; }

  double operator()(double power) const {
    if (!covers(power))
      throw std::out_of_range(name_ + ": power " + std::to_string(to_mW(power)) + " mW outside table range [" +
                              std::to_string(to_mW(min_power())) + ", " + std::to_string(to_mW(max_power())) +
                              "] mW");
    if (points_.size() == 1) return points_.front().tau;
    power = std::clamp(power, min_power(), max_power());
    auto hi = std::lower_bound(points_.begin(), points_.end(), power,
                               [](const TablePoint& p, double v) { return p.power < v; });
    if (hi == points_.begin()) return hi->tau;
    if (hi == points_.end()) return points_.back().tau;
    auto lo = hi - 1;
    const double f = (std::log(power) - std::log(lo->power)) / (std::log(hi->power) - std::log(lo->power));
    return lo->tau + f * (hi->tau - lo->tau);
  }

 private:
  std::vector<TablePoint> points_;
  std::string name_;
};

/// Reads `power_mW,tau_s,tau_err_s` CSV (header row and '#' comments allowed).
inline PowerTable load_power_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fixture table: " + path);
  std::vector<TablePoint> pts;
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (raw.find("power_mW") != std::string::npos) continue;
    std::stringstream ss(raw);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ','))
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected power_mW,tau_s[,tau_err_s]");
    std::getline(ss, c);
    try {
      pts.push_back({mW(std::stod(a)), std::stod(b), c.empty() ? 0.0 : std::stod(c)});
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return PowerTable(std::move(pts), path);
}

}  // namespace tweezer
