#pragma once

// File formats: timeline JSONL, trace CSV with a JSON sidecar, histogram and
// eta-map CSVs, and small JSON documents. Numbers are written in shortest
// round-trip form so repeated runs give byte-identical files.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "tweezer/detect.hpp"
#include "tweezer/signal.hpp"
#include "tweezer/stats.hpp"
#include "tweezer/timeline.hpp"

namespace tweezer::io {

using json = nlohmann::json;

inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_number failed");
  return std::string(buf, end);
}

inline std::string format_fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

inline json read_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

// Timelines

struct TimelineSet {
  double duration = 0.0;
  std::uint64_t seed = 0;
  std::vector<OccupancyTimeline> timelines;
};

inline void write_timelines(std::ostream& out, const TimelineSet& set) {
  out << json{{"record", "header"}, {"duration_s", set.duration}, {"seed", set.seed},
              {"n_traps", set.timelines.size()}}
             .dump()
      << '\n';
  for (std::size_t trap = 0; trap < set.timelines.size(); ++trap)
    for (const auto& iv : set.timelines[trap].intervals)
      out << json{{"trap_id", trap}, {"enter_s", iv.enter}, {"exit_s", iv.exit}, {"cause", to_string(iv.cause)}}.dump()
          << '\n';
}

inline void write_timelines(const std::filesystem::path& path, const TimelineSet& set) {
  auto out = open_out(path);
  write_timelines(out, set);
}

inline TimelineSet read_timelines(std::istream& in, const std::string& source = "<stream>") {
  TimelineSet set;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (j.value("record", "") == "header") {
      set.duration = j.at("duration_s").get<double>();
      set.seed = j.at("seed").get<std::uint64_t>();
      set.timelines.assign(j.at("n_traps").get<std::size_t>(), OccupancyTimeline{set.duration, {}});
      header = true;
      continue;
    }
    if (!header) throw std::runtime_error(source + ": first record must be the header");
    const auto trap = j.at("trap_id").get<std::size_t>();
    if (trap >= set.timelines.size())
      throw std::runtime_error(source + ":" + std::to_string(lineno) + ": trap_id out of range");
    set.timelines[trap].intervals.push_back({j.at("enter_s").get<double>(), j.at("exit_s").get<double>(),
                                             exit_cause_from_string(j.at("cause").get<std::string>())});
  }
  if (!header) throw std::runtime_error(source + ": missing header record");
  for (const auto& tl : set.timelines) tl.validate();
  return set;
}

inline TimelineSet read_timelines(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_timelines(in, path.string());
}

// Count model and traces

inline json to_json(const signal::CountModel& m) {
  return {{"background_rate", m.background_rate},
          {"single_atom_rate_ref", m.single_atom_rate_ref},
          {"reference_depth", m.reference_depth},
          {"linewidth", m.linewidth},
          {"detuning_at_zero_depth", m.detuning_at_zero_depth},
          {"stark_shift_per_kelvin", m.stark_shift_per_kelvin},
          {"bin_width", m.bin_width},
          {"excess_noise_factor", m.excess_noise_factor}};
}

inline void write_trace(const std::filesystem::path& csv_path, const signal::FluorescenceTrace& trace) {
  auto out = open_out(csv_path);
  out << "time_s,counts\n";
  for (std::size_t i = 0; i < trace.size(); ++i)
    out << format_number(trace.bin_start(i)) << ',' << format_number(trace.counts[i]) << '\n';
}

/// Sidecar lives next to the CSV as <name>.json.
inline std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  return p.replace_extension(".json");
}

inline void write_trace_sidecar(const std::filesystem::path& csv_path, const signal::FluorescenceTrace& trace,
                                std::uint64_t seed, const signal::CountModel& model, json extra = json::object()) {
  json j = {{"bin_width_s", trace.bin_width}, {"start_time_s", trace.start_time}, {"n_bins", trace.size()},
            {"seed", seed}, {"model", to_json(model)}};
  for (auto& [k, v] : extra.items()) j[k] = v;
  write_json(sidecar_path(csv_path), j);
}

/// Reads a trace CSV. The bin width comes from the sidecar if present,
/// otherwise from the spacing of the first two rows.
inline signal::FluorescenceTrace read_trace(const std::filesystem::path& csv_path) {
  auto in = open_in(csv_path);
  std::string line;
  std::vector<double> times;
  signal::FluorescenceTrace tr;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("time_s", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error(csv_path.string() + ":" + std::to_string(lineno) + ": expected time_s,counts");
    try {
      times.push_back(std::stod(line.substr(0, comma)));
      tr.counts.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw std::runtime_error(csv_path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  if (times.empty()) throw std::runtime_error(csv_path.string() + ": empty trace");
  tr.start_time = times.front();
  const auto side = sidecar_path(csv_path);
  if (std::filesystem::exists(side)) {
    tr.bin_width = read_json(side).at("bin_width_s").get<double>();
  } else if (times.size() > 1) {
    tr.bin_width = times[1] - times[0];
  } else {
    throw std::runtime_error(csv_path.string() + ": cannot infer bin width from one row without a sidecar");
  }
  return tr;
}

// Histograms, curves, eta maps

inline void write_histogram(const std::filesystem::path& path, const detect::Histogram& h) {
  auto out = open_out(path);
  out << "bin_center,frequency\n";
  for (std::size_t i = 0; i < h.centers.size(); ++i)
    out << format_number(h.centers[i]) << ',' << format_number(h.frequencies[i]) << '\n';
}

inline void write_curve(const std::filesystem::path& path, const detect::OccupancyCurve& c) {
  auto out = open_out(path);
  out << "t_rel_s,probability,ci_low,ci_high,n\n";
  for (const auto& p : c.points)
    out << format_number(p.t_rel) << ',' << format_number(p.probability) << ',' << format_number(p.ci_low) << ','
        << format_number(p.ci_high) << ',' << p.trials << '\n';
}

inline void write_ensemble(const std::filesystem::path& path, std::span<const detect::EnsemblePoint> pts) {
  auto out = open_out(path);
  out << "t_rel_s,mean,std,traps\n";
  for (const auto& p : pts)
    out << format_number(p.t_rel) << ',' << format_number(p.mean) << ',' << format_number(p.stddev) << ',' << p.traps
        << '\n';
}

inline void write_eta_map(const std::filesystem::path& path, const stats::EtaMap& m) {
  auto out = open_out(path);
  out << "holding_mW\\loading_mW";
  for (double p : m.loading_powers) out << ',' << format_fixed(to_mW(p), 4);
  out << '\n';
  for (std::size_t h = 0; h < m.holding_powers.size(); ++h) {
    out << format_fixed(to_mW(m.holding_powers[h]), 4);
    for (std::size_t l = 0; l < m.loading_powers.size(); ++l) out << ',' << format_fixed(m.eta[h][l], 4);
    out << '\n';
  }
}

inline json to_json(std::span<const stats::EtaMaximum> maxima) {
  json arr = json::array();
  for (const auto& m : maxima)
    arr.push_back({{"loading_mW", to_mW(m.loading_power)}, {"holding_mW", to_mW(m.holding_power)}, {"eta", m.eta},
                   {"loading_index", m.loading_index}, {"holding_index", m.holding_index}});
  return arr;
}

inline json to_json(const detect::BimodalFit& f) {
  return {{"mu0", f.mu0}, {"sigma0", f.sigma0}, {"mu1", f.mu1}, {"sigma1", f.sigma1}, {"weight0", f.weight0},
          {"weight_transition", f.weight_transition},
          {"log_likelihood", f.log_likelihood}, {"iterations", f.iterations}};
}

inline json to_json(const detect::DecayFit& f) {
  return {{"tau_s", f.tau}, {"std_error_s", f.std_error}, {"n_points", f.n_points}};
}

}  // namespace tweezer::io
