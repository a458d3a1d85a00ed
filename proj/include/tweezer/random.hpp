#pragma once

// Seed streams. Every trap / trial / trace gets its own engine keyed by
// (master seed, stream tags), so results never depend on execution order or
// on how work is split across workers.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace tweezer {

using Engine = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream purposes, so that e.g. trap 3's kinetics and trap 3's camera noise
/// never share a stream.
enum class StreamTag : std::uint64_t {
  kinetics = 1,
  signal = 2,
  background = 3,
  survival = 4,
  jitter = 5,
  generic = 6,
};

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(master);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

inline Engine make_engine(std::uint64_t master, StreamTag tag, std::uint64_t index = 0) {
  std::uint64_t s = derive_seed(master, {static_cast<std::uint64_t>(tag), index});
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
  return Engine(seq);
}

/// Uniform in the open interval (0, 1).
inline double uniform_open(Engine& eng) {
  constexpr double scale = 1.0 / 9007199254740992.0;  // 2^-53
  return (static_cast<double>(eng() >> 11) + 0.5) * scale;
}

/// Exponential waiting time for `rate`; +inf for a zero rate.
inline double draw_exponential(Engine& eng, double rate) {
  if (rate <= 0.0) return std::numeric_limits<double>::infinity();
  return -std::log(uniform_open(eng)) / rate;
}

}  // namespace tweezer
