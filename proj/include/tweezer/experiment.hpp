#pragma once

// Config-driven experiment runner behind the `tweezer` command line tool.
// Configs are INI files; every key is checked against a fixed schema.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "tweezer/controller.hpp"
#include "tweezer/detect.hpp"
#include "tweezer/io.hpp"
#include "tweezer/kinetics.hpp"
#include "tweezer/physics.hpp"
#include "tweezer/power_table.hpp"
#include "tweezer/signal.hpp"
#include "tweezer/stats.hpp"

namespace tweezer::cli {

inline constexpr const char* version = "1.0.0";

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Bad or incomplete configuration (exit status 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Schema

inline const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s = {
      {"run", {"seed", "traps", "duration_s", "output_dir", "workers"}},
      {"atom", {"lines_file"}},
      {"beam",
       {"waist_um", "wavelength_nm", "depth_slope_mK_per_mW", "depth_method", "depth_powers_mW"}},
      {"counts",
       {"background_rate_hz", "single_atom_rate_hz", "reference_depth_mK", "linewidth_mhz", "detuning_gamma",
        "stark_shift_gamma_per_mK", "bin_width_s", "excess_noise_factor", "background_window", "histogram_bins",
        "debounce_bins"}},
      {"rates",
       {"mode", "dark_time_table", "lifetime_table", "lifetime_dark_table", "blockade", "capture_probability",
        "prompt_loss_rate", "low_power_mW", "low_tau_dark_s", "low_tau_s", "low_tau_mot_off_s", "high_power_mW",
        "high_tau_dark_s", "high_tau_s", "high_tau_mot_off_s"}},
      {"simulate", {"power_mW", "mot_on", "write_traces"}},
      {"analyze", {"input_dir", "survival_time_s", "confidence", "fit_method"}},
      {"survival", {"power_mW", "dark_intervals_s", "trials"}},
      {"etamap", {"min_mW", "max_mW", "points", "mot"}},
      {"modulation", {"period_s", "shallow_mW", "deep_mW", "jitter_sigma", "write_traces"}},
      {"feedback",
       {"loading_mW", "holding_mW", "latency_s", "mot_off_on_detect", "release_on_loss", "jitter_sigma", "detect"}},
  };
  return s;
}

inline const std::set<std::string>& subcommands() {
  static const std::set<std::string> s = {"depth",   "simulate", "analyze",       "survival",
                                          "etamap", "feedback", "replicate-fig5"};
  return s;
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> traps;
  std::optional<double> duration;
  std::optional<std::string> input;
};

/// Parsed INI plus the directory used to resolve relative paths.
class Config {
 public:
  Config(boost::property_tree::ptree tree, fs::path base_dir, std::string source)
      : tree_(std::move(tree)), base_(std::move(base_dir)), source_(std::move(source)) {
    check_schema();
  }

  static Config load(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    return parse(in, fs::absolute(path).parent_path(), path.string());
  }

  static Config parse(std::istream& in, fs::path base_dir, std::string source = "<config>") {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(source + ": parse error: " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    if (tree.empty()) throw ConfigError(source + ": parse error: configuration is empty");
    return Config(std::move(tree), std::move(base_dir), std::move(source));
  }

  const std::string& source() const { return source_; }
  const boost::property_tree::ptree& tree() const { return tree_; }

  bool has(const std::string& section, const std::string& key) const {
    auto sec = tree_.get_child_optional(section);
    return sec && sec->get_child_optional(key);
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    auto v = sec->get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return *v;
  }

  template <class T>
  T get(const std::string& section, const std::string& key, T fallback) const {
    auto v = raw(section, key);
    if (!v) return fallback;
    return convert<T>(section, key, *v);
  }

  template <class T>
  T require(const std::string& section, const std::string& key) const {
    auto v = raw(section, key);
    if (!v) throw ConfigError(source_ + ": missing required key " + section + "." + key);
    return convert<T>(section, key, *v);
  }

  std::vector<double> get_list(const std::string& section, const std::string& key, std::vector<double> fallback) const {
    auto v = raw(section, key);
    if (!v) return fallback;
    std::vector<double> out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.find_first_not_of(" \t") == std::string::npos) continue;
      out.push_back(convert<double>(section, key, item));
    }
    if (out.empty()) throw ConfigError(source_ + ": " + section + "." + key + " is an empty list");
    return out;
  }

  /// Path-valued key, resolved relative to the config file; must exist.
  std::optional<fs::path> existing_path(const std::string& section, const std::string& key) const {
    auto v = raw(section, key);
    if (!v) return std::nullopt;
    fs::path p = resolve(*v);
    if (!fs::exists(p))
      throw ConfigError(source_ + ": " + section + "." + key + " refers to a missing file: " + p.string());
    return p;
  }

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : (base_ / path).lexically_normal();
  }

  json to_json() const {
    json j = json::object();
    for (const auto& [section, child] : tree_) {
      json s = json::object();
      for (const auto& [key, value] : child) s[key] = value.data();
      j[section] = s;
    }
    return j;
  }

 private:
  template <class T>
  T convert(const std::string& section, const std::string& key, const std::string& text) const {
    std::string s = text;
    s.erase(0, s.find_first_not_of(" \t"));
    s.erase(s.find_last_not_of(" \t") + 1);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off") return false;
        throw std::invalid_argument("not a boolean");
      } else if constexpr (std::is_same_v<T, std::string>) {
        return s;
      } else if constexpr (std::is_floating_point_v<T>) {
        std::size_t used = 0;
        T v = static_cast<T>(std::stod(s, &used));
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
      } else {
        if (!s.empty() && s.front() == '-') throw std::invalid_argument("negative");
        std::size_t used = 0;
        auto v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return static_cast<T>(v);
      }
    } catch (const std::exception&) {
      throw ConfigError(source_ + ": bad value for " + section + "." + key + ": '" + text + "'");
    }
  }

  void check_schema() const {
    std::vector<std::string> unknown;
    for (const auto& [section, child] : tree_) {
      auto it = schema().find(section);
      if (it == schema().end()) {
        if (child.empty()) {
          unknown.push_back(section);
          continue;
        }
        for (const auto& kv : child) unknown.push_back(section + "." + kv.first);
        continue;
      }
      for (const auto& kv : child)
        if (!it->second.contains(kv.first)) unknown.push_back(section + "." + kv.first);
    }
    if (!unknown.empty()) {
      std::string msg = source_ + ": unknown configuration keys:";
      for (const auto& k : unknown) msg += " " + k;
      throw ConfigError(msg);
    }
  }

  boost::property_tree::ptree tree_;
  fs::path base_;
  std::string source_;
};

// Config -> model objects

using RateFunction = std::function<kinetics::RateSet(double)>;

struct RateModel {
  RateFunction mot_on;
  std::function<kinetics::RateSet(double)> mot_off;  // may throw if MOT-off data are missing
  std::optional<kinetics::Calibration> calibration;
};

inline signal::CountModel count_model(const Config& c) {
  signal::CountModel m;
  m.background_rate = c.get("counts", "background_rate_hz", m.background_rate);
  m.single_atom_rate_ref = c.get("counts", "single_atom_rate_hz", m.single_atom_rate_ref);
  m.reference_depth = mK(c.get("counts", "reference_depth_mK", to_mK(m.reference_depth)));
  m.linewidth = constants::two_pi * 1e6 * c.get("counts", "linewidth_mhz", m.linewidth / (constants::two_pi * 1e6));
  m.detuning_at_zero_depth = m.linewidth * c.get("counts", "detuning_gamma", -2.2);
  m.stark_shift_per_kelvin = m.linewidth * c.get("counts", "stark_shift_gamma_per_mK", 4.0) / 1e-3;
  m.bin_width = c.get("counts", "bin_width_s", m.bin_width);
  m.excess_noise_factor = c.get("counts", "excess_noise_factor", m.excess_noise_factor);
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(c.source() + ": " + e.what());
  }
  return m;
}

inline double depth_slope(const Config& c) {
  return c.get("beam", "depth_slope_mK_per_mW", physics::default_depth_slope);  // mK/mW == K/W
}

inline physics::AtomSpec atom_spec(const Config& c) {
  if (auto p = c.existing_path("atom", "lines_file")) return physics::load_atom_lines(p->string());
  return physics::rb87_d_lines();
}

inline RateModel rate_model(const Config& c) {
  const auto mode = c.get<std::string>("rates", "mode", "tables");
  RateModel m;
  if (mode == "tables") {
    auto dark = c.existing_path("rates", "dark_time_table");
    auto life = c.existing_path("rates", "lifetime_table");
    if (!dark || !life) throw ConfigError(c.source() + ": rates.mode = tables needs dark_time_table and lifetime_table");
    kinetics::Calibration cal;
    cal.dark_time = load_power_table(dark->string());
    cal.lifetime = load_power_table(life->string());
    if (auto d = c.existing_path("rates", "lifetime_dark_table")) cal.lifetime_dark = load_power_table(d->string());
    cal.blockade = c.get("rates", "blockade", true);
    cal.capture_probability = c.get("rates", "capture_probability", 1.0);
    cal.prompt_loss_rate = c.get("rates", "prompt_loss_rate", 0.0);
    m.calibration = cal;
    m.mot_on = [cal](double p) { return kinetics::build_rate_set(p, true, cal); };
    m.mot_off = [cal](double p) { return kinetics::build_rate_set(p, false, cal); };
  } else if (mode == "times") {
    const double inf = std::numeric_limits<double>::infinity();
    controller::RegimeRates rr;
    rr.low_power = mW(c.require<double>("rates", "low_power_mW"));
    rr.high_power = mW(c.get("rates", "high_power_mW", to_mW(rr.low_power)));
    rr.low = kinetics::rates_from_times(c.require<double>("rates", "low_tau_dark_s"),
                                        c.require<double>("rates", "low_tau_s"),
                                        c.get("rates", "low_tau_mot_off_s", inf));
    rr.high = c.has("rates", "high_tau_s")
                  ? kinetics::rates_from_times(c.require<double>("rates", "high_tau_dark_s"),
                                               c.require<double>("rates", "high_tau_s"),
                                               c.get("rates", "high_tau_mot_off_s", inf))
                  : rr.low;
    for (auto* r : {&rr.low, &rr.high}) r->blockade = c.get("rates", "blockade", true);
    m.mot_on = rr;
    m.mot_off = rr;
  } else {
    throw ConfigError(c.source() + ": rates.mode must be 'tables' or 'times', got '" + mode + "'");
  }
  return m;
}

// Execution

struct RunContext {
  const Config& config;
  std::string subcommand;
  std::uint64_t seed = 0;
  std::size_t traps = 1;
  double duration = 0.0;
  fs::path out;
  unsigned workers = 0;
  std::vector<std::string> outputs;
  json summary = json::object();

  fs::path file(const std::string& name) {
    outputs.push_back(name);
    return out / name;
  }
};

inline RunContext make_context(const Config& c, const std::string& sub, const Overrides& ov) {
  RunContext ctx{c, sub, 0, 1, 0.0, {}, 0, {}, json::object()};
  if (ov.seed) {
    ctx.seed = *ov.seed;
  } else if (c.has("run", "seed")) {
    ctx.seed = c.require<std::uint64_t>("run", "seed");
  } else {
    throw ConfigError("no seed given: pass --seed or set run.seed");
  }
  ctx.traps = ov.traps ? *ov.traps : c.get<std::size_t>("run", "traps", 8);
  ctx.duration = ov.duration ? *ov.duration : c.get("run", "duration_s", 7200.0);
  if (ctx.traps == 0) throw ConfigError("traps must be >= 1");
  if (!(ctx.duration > 0.0)) throw ConfigError("duration must be > 0");
  if (ov.out) {
    ctx.out = *ov.out;
  } else if (c.has("run", "output_dir")) {
    ctx.out = c.resolve(c.require<std::string>("run", "output_dir"));
  } else {
    throw ConfigError("no output directory: pass --out or set run.output_dir");
  }
  ctx.workers = c.get<unsigned>("run", "workers", 0);
  return ctx;
}

inline void write_manifest(RunContext& ctx) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  json m = {{"tool", "tweezer"},
            {"version", version},
            {"subcommand", ctx.subcommand},
            {"config_file", ctx.config.source()},
            {"config", ctx.config.to_json()},
            {"seed", ctx.seed},
            {"traps", ctx.traps},
            {"duration_s", ctx.duration},
            {"outputs", ctx.outputs},
            {"summary", ctx.summary},
            {"created_utc", stamp}};
  io::write_json(ctx.out / "manifest.json", m);
}

inline std::string trap_name(const std::string& stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%03zu.csv", i);
  return stem + buf;
}

inline void run_depth(RunContext& ctx) {
  const auto& c = ctx.config;
  const auto method = c.get<std::string>("beam", "depth_method", "ab_initio");
  const auto powers = c.get_list("beam", "depth_powers_mW", {1, 2, 5, 8, 10, 15, 21, 30, 41, 50, 70, 100});
  physics::BeamSpec beam;
  beam.waist_radius = c.get("beam", "waist_um", 1.1) * 1e-6;
  beam.wavelength = c.get("beam", "wavelength_nm", 1064.0) * 1e-9;
  const auto atom = atom_spec(c);
  const double alpha = physics::scalar_polarizability(atom, angular_frequency_from_wavelength(beam.wavelength));
  const double slope = depth_slope(c);
  if (method != "ab_initio" && method != "calibrated")
    throw ConfigError(c.source() + ": beam.depth_method must be 'ab_initio' or 'calibrated'");
  auto out = io::open_out(ctx.file("depth.csv"));
  out << "power_mW,depth_mK\n";
  for (double p : powers) {
    beam.power = mW(p);
    const double depth = method == "ab_initio" ? physics::trap_depth(beam, alpha)
                                               : physics::depth_from_power_calibrated(mW(p), slope);
    out << io::format_number(p) << ',' << io::format_fixed(to_mK(depth), 4) << '\n';
  }
  ctx.summary = {{"method", method},
                 {"alpha0_au", physics::polarizability_to_au(alpha)},
                 {"waist_um", beam.waist_radius * 1e6},
                 {"wavelength_nm", beam.wavelength * 1e9},
                 {"calibrated_slope_mK_per_mW", slope}};
}

inline void write_timelines(RunContext& ctx, const std::string& name, std::vector<OccupancyTimeline> tls) {
  io::write_timelines(ctx.file(name), io::TimelineSet{ctx.duration, ctx.seed, std::move(tls)});
}

inline void run_simulate(RunContext& ctx) {
  const auto& c = ctx.config;
  const auto rates = rate_model(c);
  const auto model = count_model(c);
  const double power = mW(c.require<double>("simulate", "power_mW"));
  const bool mot_on = c.get("simulate", "mot_on", true);
  const auto rs = mot_on ? rates.mot_on(power) : rates.mot_off(power);
  const auto sched = kinetics::RateSchedule::constant(rs, mot_on);
  const double depth = physics::depth_from_power_calibrated(power, depth_slope(c));
  std::vector<OccupancyTimeline> tls(ctx.traps);
  std::vector<signal::FluorescenceTrace> traces(ctx.traps), bgs(ctx.traps);
  parallel_for(
      ctx.traps,
      [&](std::size_t i) {
        tls[i] = kinetics::simulate_trap(sched, ctx.duration, ctx.seed, i);
        traces[i] = signal::synthesize_trace(tls[i], signal::constant_illumination(depth, mot_on), model, ctx.seed, i);
        bgs[i] = signal::synthesize_background(ctx.duration, model, ctx.seed, i);
      },
      ctx.workers);
  json per_trap = json::array();
  double mean = 0.0;
  for (std::size_t i = 0; i < ctx.traps; ++i) {
    mean += tls[i].occupancy();
    per_trap.push_back({{"trap_id", i}, {"occupancy", tls[i].occupancy()}, {"events", tls[i].intervals.size()}});
  }
  if (c.get("simulate", "write_traces", true)) {
    for (std::size_t i = 0; i < ctx.traps; ++i) {
      const auto tp = ctx.file("traces/" + trap_name("trace", i));
      io::write_trace(tp, traces[i]);
      io::write_trace_sidecar(tp, traces[i], ctx.seed, model, {{"trap_id", i}, {"depth_mK", to_mK(depth)}});
      const auto bp = ctx.file("traces/" + trap_name("background", i));
      io::write_trace(bp, bgs[i]);
      io::write_trace_sidecar(bp, bgs[i], ctx.seed, model, {{"trap_id", i}, {"background", true}});
    }
  }
  write_timelines(ctx, "timelines.jsonl", std::move(tls));
  ctx.summary = {{"power_mW", to_mW(power)},   {"depth_mK", to_mK(depth)},
                 {"mot_on", mot_on},           {"mean_occupancy", mean / static_cast<double>(ctx.traps)},
                 {"predicted_occupancy", kinetics::steady_state_occupancy(rs, mot_on)},
                 {"traps", per_trap}};
}

inline void run_analyze(RunContext& ctx, const Overrides& ov) {
  const auto& c = ctx.config;
  fs::path input;
  if (ov.input) {
    input = *ov.input;
  } else if (c.has("analyze", "input_dir")) {
    input = c.resolve(c.require<std::string>("analyze", "input_dir"));
  } else {
    throw ConfigError("analyze needs --input or analyze.input_dir");
  }
  if (!fs::is_directory(input)) throw ConfigError("analyze input directory not found: " + input.string());
  const fs::path traces_dir = fs::is_directory(input / "traces") ? input / "traces" : input;
  std::vector<fs::path> trace_files;
  for (const auto& e : fs::directory_iterator(traces_dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("trace_", 0) == 0 && e.path().extension() == ".csv") trace_files.push_back(e.path());
  }
  std::sort(trace_files.begin(), trace_files.end());
  if (trace_files.empty()) throw ConfigError("no trace_*.csv files in " + traces_dir.string());

  const auto bins = c.get<std::size_t>("counts", "histogram_bins", 200);
  const auto bg_window = c.get<std::size_t>("counts", "background_window", 1);
  const auto debounce = c.get<std::size_t>("counts", "debounce_bins", 1);
  const double t_surv = c.get("analyze", "survival_time_s", 1.0);
  const double conf = c.get("analyze", "confidence", 0.95);

  json per_trap = json::array();
  std::vector<stats::Observation> lifetimes, dark_times;
  std::vector<OccupancyTimeline> detected;
  std::size_t long_lived = 0, completed = 0;
  for (std::size_t i = 0; i < trace_files.size(); ++i) {
    const auto raw = io::read_trace(trace_files[i]);
    auto bg_path = trace_files[i].parent_path() /
                   ("background_" + trace_files[i].filename().string().substr(std::string("trace_").size()));
    signal::FluorescenceTrace sub = raw;
    if (fs::exists(bg_path)) sub = signal::background_subtract(raw, io::read_trace(bg_path), bg_window);
    const auto hist = detect::make_histogram(sub.counts, bins);
    io::write_histogram(ctx.file(trap_name("histogram", i)), hist);
    const auto fit = detect::fit_bimodal(hist);
    auto choice = detect::choose_threshold(fit);
    choice.policy.debounce_bins = debounce;
    auto tl = detect::binarize(sub, choice.policy);
    const auto iv = detect::extract_intervals(tl);
    for (const auto& o : iv.lifetimes) {
      lifetimes.push_back(o);
      if (!o.censored) {
        ++completed;
        if (o.duration > t_surv) ++long_lived;
      }
    }
    dark_times.insert(dark_times.end(), iv.dark_times.begin(), iv.dark_times.end());
    per_trap.push_back({{"file", trace_files[i].filename().string()},
                        {"background_subtracted", fs::exists(bg_path)},
                        {"fit", io::to_json(fit)},
                        {"threshold", choice.policy.threshold},
                        {"false_positive", choice.false_positive},
                        {"false_negative", choice.false_negative},
                        {"occupancy", tl.occupancy()}});
    detected.push_back(std::move(tl));
  }
  ctx.duration = detected.front().total_duration;
  write_timelines(ctx, "detected_timelines.jsonl", detected);

  const auto method_name = c.get<std::string>("analyze", "fit_method", "mle");
  stats::FitMethod method;
  if (method_name == "mle") method = stats::FitMethod::mle;
  else if (method_name == "censored_mle") method = stats::FitMethod::censored_mle;
  else if (method_name == "binned_lsq") method = stats::FitMethod::binned_lsq;
  else throw ConfigError("analyze.fit_method must be mle, censored_mle or binned_lsq");
  auto fit_json = [method](const std::vector<stats::Observation>& obs) -> json {
    std::size_t uncensored = 0;
    for (const auto& o : obs) uncensored += o.censored ? 0 : 1;
    if (uncensored < (method == stats::FitMethod::censored_mle ? 1u : 5u)) return nullptr;
    const auto f = stats::fit_exponential(obs, method);
    return {{"tau_s", f.tau}, {"std_error_s", f.std_error}, {"n", f.n_samples}};
  };
  json survival = nullptr;
  if (completed > 0) {
    const auto ci = stats::wilson_interval(long_lived, completed, conf);
    survival = {{"time_s", t_surv},     {"successes", long_lived}, {"trials", completed},
                {"probability", static_cast<double>(long_lived) / static_cast<double>(completed)},
                {"ci_low", ci.low},     {"ci_high", ci.high},     {"confidence", conf}};
  }
  ctx.summary = {{"traps", per_trap},
                 {"lifetime", fit_json(lifetimes)},
                 {"dark_time", fit_json(dark_times)},
                 {"survival_beyond", survival}};
  io::write_json(ctx.file("analysis.json"), ctx.summary);
}

inline void run_survival(RunContext& ctx) {
  const auto& c = ctx.config;
  const auto rates = rate_model(c);
  const double power = mW(c.require<double>("survival", "power_mW"));
  const auto intervals = c.get_list("survival", "dark_intervals_s", {0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0});
  const auto trials = c.get<std::size_t>("survival", "trials", 200);
  kinetics::RateSet rs;
  try {
    rs = rates.mot_off(power);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("survival: ") + e.what());
  }
  std::vector<kinetics::SurvivalEstimate> est(intervals.size());
  parallel_for(
      intervals.size(),
      [&](std::size_t i) { est[i] = kinetics::simulate_survival_experiment(rs, intervals[i], trials, ctx.seed, i); },
      ctx.workers);
  auto out = io::open_out(ctx.file("survival.csv"));
  out << "dark_interval_s,trials,successes,probability,ci_low,ci_high,analytic\n";
  for (const auto& e : est)
    out << io::format_number(e.dark_interval) << ',' << e.trials << ',' << e.successes << ','
        << io::format_number(e.probability) << ',' << io::format_number(e.ci_low) << ','
        << io::format_number(e.ci_high) << ',' << io::format_number(kinetics::analytic_survival(rs, e.dark_interval))
        << '\n';
  ctx.summary = {{"power_mW", to_mW(power)}, {"gamma_dark_per_s", rs.one_body_loss_dark}, {"trials", trials}};
}

inline void run_etamap(RunContext& ctx) {
  const auto& c = ctx.config;
  const auto rates = rate_model(c);
  if (!rates.calibration) throw ConfigError("etamap needs rates.mode = tables");
  const auto& cal = *rates.calibration;
  const double lo = mW(c.get("etamap", "min_mW", to_mW(cal.dark_time.min_power())));
  const double hi = mW(c.get("etamap", "max_mW", to_mW(cal.dark_time.max_power())));
  const auto grid = stats::log_spaced(lo, hi, c.get<std::size_t>("etamap", "points", 49));
  const auto mot = c.get<std::string>("etamap", "mot", "both");
  if (mot != "on" && mot != "off" && mot != "both") throw ConfigError("etamap.mot must be on, off or both");
  json summary = json::object();
  auto emit = [&](const std::string& tag, const PowerTable& life) {
    const auto map = stats::eta_map(cal.dark_time, life, grid, grid);
    io::write_eta_map(ctx.file("eta_map_mot_" + tag + ".csv"), map);
    const auto maxima = io::to_json(std::span<const stats::EtaMaximum>(map.maxima));
    io::write_json(ctx.file("maxima_mot_" + tag + ".json"), maxima);
    summary["mot_" + tag] = maxima;
  };
  if (mot != "off") emit("on", cal.lifetime);
  if (mot != "on") {
    if (!cal.lifetime_dark) throw ConfigError("etamap with MOT off needs rates.lifetime_dark_table");
    emit("off", *cal.lifetime_dark);
  }
  ctx.summary = summary;
}

inline controller::ArrayOptions array_options(const Config& c, RunContext& ctx, const std::string& section) {
  controller::ArrayOptions opt;
  opt.rate_jitter_sigma = c.get(section, "jitter_sigma", 0.1);
  opt.depth_slope = depth_slope(c);
  opt.background_window = c.get<std::size_t>("counts", "background_window", 1);
  opt.histogram_bins = c.get<std::size_t>("counts", "histogram_bins", 200);
  opt.workers = ctx.workers;
  return opt;
}

inline void run_fig5(RunContext& ctx) {
  const auto& c = ctx.config;
  const auto rates = rate_model(c);
  controller::ModulationSchedule sched;
  sched.period = c.get("modulation", "period_s", sched.period);
  sched.shallow_power = mW(c.get("modulation", "shallow_mW", to_mW(sched.shallow_power)));
  sched.deep_power = mW(c.get("modulation", "deep_mW", to_mW(sched.deep_power)));
  sched.total_duration = ctx.duration;
  try {
    sched.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto opt = array_options(c, ctx, "modulation");
  opt.count_model = count_model(c);
  const auto run = controller::run_periodic_modulation(ctx.traps, sched, rates.mot_on, ctx.seed, opt);
  controller::AnalysisOptions aopt;
  aopt.background_window = opt.background_window;
  aopt.histogram_bins = opt.histogram_bins;
  aopt.debounce_bins = c.get<std::size_t>("counts", "debounce_bins", 1);
  const auto a = controller::analyze_modulation(run, sched, aopt);

  std::vector<OccupancyTimeline> truth;
  for (const auto& t : run.result.traps) truth.push_back(t.timeline);
  detect::ConditionalOptions copt;
  copt.window = 2.0 * sched.period;
  copt.resolution = opt.count_model->bin_width;
  const auto truth_curve = detect::conditional_occupancy(truth, run.switch_times, copt);

  io::write_curve(ctx.file("conditional_occupancy.csv"), a.pooled);
  io::write_curve(ctx.file("conditional_occupancy_truth.csv"), truth_curve);
  io::write_ensemble(ctx.file("conditional_occupancy_ensemble.csv"), a.ensemble);
  write_timelines(ctx, "timelines.jsonl", truth);
  write_timelines(ctx, "detected_timelines.jsonl", a.detected);
  if (c.get("modulation", "write_traces", false)) {
    for (std::size_t i = 0; i < run.traces.size(); ++i) {
      const auto tp = ctx.file("traces/" + trap_name("trace", i));
      io::write_trace(tp, run.traces[i]);
      io::write_trace_sidecar(tp, run.traces[i], ctx.seed, *opt.count_model, {{"trap_id", i}});
      const auto bp = ctx.file("traces/" + trap_name("background", i));
      io::write_trace(bp, run.backgrounds[i]);
      io::write_trace_sidecar(bp, run.backgrounds[i], ctx.seed, *opt.count_model, {{"trap_id", i}, {"background", true}});
    }
  }
  json fits = json::array();
  for (std::size_t i = 0; i < a.shallow_fits.size(); ++i)
    fits.push_back({{"trap_id", i}, {"shallow", io::to_json(a.shallow_fits[i])}, {"deep", io::to_json(a.deep_fits[i])}});
  json report = {
      {"period_s", sched.period},
      {"shallow_mW", to_mW(sched.shallow_power)},
      {"deep_mW", to_mW(sched.deep_power)},
      {"switches", run.switch_times.size()},
      {"qualifying_windows", a.pooled.qualifying_windows},
      {"tau1", io::to_json(a.tau_shallow)},
      {"tau2", io::to_json(a.tau_deep)},
      {"ensemble_tau1", io::to_json(a.ensemble_tau_shallow)},
      {"ensemble_tau2", io::to_json(a.ensemble_tau_deep)},
      {"truth_tau1", io::to_json(detect::fit_decay(truth_curve, -sched.period, 0.0))},
      {"truth_tau2", io::to_json(detect::fit_decay(truth_curve, 0.0, sched.period))},
      {"shallow_filling_detected", a.shallow_filling_detected},
      {"shallow_filling_truth", a.shallow_filling_truth},
      {"mean_filling_truth", run.result.mean_filling},
      {"histogram_fits", fits}};
  io::write_json(ctx.file("fig5_report.json"), report);
  ctx.summary = {{"tau1_s", a.tau_shallow.tau},
                 {"tau2_s", a.tau_deep.tau},
                 {"shallow_filling_detected", a.shallow_filling_detected}};
}

inline void run_feedback(RunContext& ctx) {
  const auto& c = ctx.config;
  const auto rates = rate_model(c);
  controller::FeedbackPolicy pol;
  pol.loading_power = mW(c.get("feedback", "loading_mW", to_mW(pol.loading_power)));
  pol.holding_power = mW(c.get("feedback", "holding_mW", to_mW(pol.holding_power)));
  pol.detection_latency = c.get("feedback", "latency_s", pol.detection_latency);
  pol.mot_off_on_detect = c.get("feedback", "mot_off_on_detect", false);
  pol.release_on_loss = c.get("feedback", "release_on_loss", true);
  try {
    pol.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto opt = array_options(c, ctx, "feedback");
  if (c.get("feedback", "detect", true)) opt.count_model = count_model(c);
  // With the cooling light off after capture, the holding rates are the dark ones.
  controller::RegimeRates src;
  src.low_power = pol.loading_power;
  src.low = rates.mot_on(pol.loading_power);
  src.high_power = pol.holding_power;
  src.high = rates.mot_on(pol.holding_power);
  if (pol.mot_off_on_detect) {
    try {
      src.high.one_body_loss_dark = rates.mot_off(pol.holding_power).one_body_loss_dark;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("feedback: ") + e.what());
    }
  }
  auto source = [src](double p) { return p == src.low_power ? src.low : src.high; };
  const auto res = controller::run_feedback(ctx.traps, pol, source, ctx.duration, ctx.seed, opt);
  const double predicted = controller::predicted_filling(pol, source);

  auto out = io::open_out(ctx.file("feedback_traps.csv"));
  out << "trap_id,filling,detected_filling,events,loading_jitter,loss_jitter\n";
  for (std::size_t i = 0; i < res.traps.size(); ++i) {
    const auto& t = res.traps[i];
    out << i << ',' << io::format_number(t.filling) << ','
        << (t.detected_filling ? io::format_number(*t.detected_filling) : std::string("nan")) << ',' << t.arrivals << ','
        << io::format_number(t.loading_jitter) << ',' << io::format_number(t.loss_jitter) << '\n';
  }
  std::vector<OccupancyTimeline> tls;
  for (const auto& t : res.traps) tls.push_back(t.timeline);
  write_timelines(ctx, "timelines.jsonl", std::move(tls));
  json causes = json::object();
  for (std::size_t k = 0; k < res.exits.size(); ++k) causes[std::string(to_string(static_cast<ExitCause>(k)))] = res.exits[k];
  json report = {{"loading_mW", to_mW(pol.loading_power)},
                 {"holding_mW", to_mW(pol.holding_power)},
                 {"latency_s", pol.detection_latency},
                 {"mot_off_on_detect", pol.mot_off_on_detect},
                 {"release_on_loss", pol.release_on_loss},
                 {"mean_filling", res.mean_filling},
                 {"std_filling", res.std_filling},
                 {"mean_detected_filling", res.mean_detected_filling ? json(*res.mean_detected_filling) : json(nullptr)},
                 {"predicted_filling", predicted},
                 {"exits_by_cause", causes},
                 {"arrivals", res.arrivals}};
  io::write_json(ctx.file("feedback_report.json"), report);
  ctx.summary = report;
}

/// Runs one subcommand. Returns the process exit status: 0 on success,
/// 2 for configuration problems, 1 for analysis or runtime failures.
inline int execute(const Config& config, const std::string& subcommand, const Overrides& ov, std::ostream& log,
                   std::ostream& err) {
  try {
    if (!subcommands().contains(subcommand)) throw ConfigError("unknown subcommand: " + subcommand);
    auto ctx = make_context(config, subcommand, ov);
    fs::create_directories(ctx.out);
    if (subcommand == "depth") run_depth(ctx);
    else if (subcommand == "simulate") run_simulate(ctx);
    else if (subcommand == "analyze") run_analyze(ctx, ov);
    else if (subcommand == "survival") run_survival(ctx);
    else if (subcommand == "etamap") run_etamap(ctx);
    else if (subcommand == "replicate-fig5") run_fig5(ctx);
    else if (subcommand == "feedback") run_feedback(ctx);
    write_manifest(ctx);
    log << ctx.summary.dump(2) << '\n';
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << subcommand << " failed: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace tweezer::cli
