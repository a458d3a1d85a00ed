#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tweezer {

//
// Physical constants (CODATA 2018, SI)
//
namespace constants {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * pi;
inline constexpr double hbar = 1.054571817e-34;        // J s
inline constexpr double speed_of_light = 299792458.0;  // m/s
inline constexpr double epsilon0 = 8.8541878128e-12;   // F/m
inline constexpr double boltzmann = 1.380649e-23;      // J/K

// atomic units
inline constexpr double bohr_radius = 5.29177210903e-11;       // m
inline constexpr double elementary_charge = 1.602176634e-19;  // C
inline constexpr double dipole_au = elementary_charge * bohr_radius;  // C m
inline constexpr double polarizability_au = 1.64877727436e-41;       // C^2 m^2 / J

}  // namespace constants

inline double angular_frequency_from_wavelength(double wavelength_m) {
  return constants::two_pi * constants::speed_of_light / wavelength_m;
}

inline constexpr double mW(double v) { return v * 1e-3; }
inline constexpr double mK(double v) { return v * 1e-3; }
inline constexpr double to_mW(double watts) { return watts * 1e3; }
inline constexpr double to_mK(double kelvin) { return kelvin * 1e3; }

/// Angular momentum quantum number stored as twice its value, so 1/2 and 3/2 stay exact.
struct HalfInt {
  int twice = 0;

  static constexpr HalfInt from_double(double v) {
    return HalfInt{static_cast<int>(v * 2.0 + (v >= 0 ? 0.5 : -0.5))};
  }
  constexpr double value() const { return 0.5 * twice; }
  constexpr bool operator==(const HalfInt&) const = default;
};

inline constexpr HalfInt half(int twice) { return HalfInt{twice}; }

}  // namespace tweezer
