#pragma once

// Light shifts, polarisabilities and the power -> trap-depth conversion.
//
// All quantities are SI. Atomic units only appear at the line-data boundary
// (reduced matrix elements in e*a0, polarisabilities reported in a.u.).

#include <cmath>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tweezer/units.hpp"

namespace tweezer::physics {

struct TransitionLine {
  double angular_frequency = 0.0;       // rad/s
  double reduced_matrix_element = 0.0;  // C m
  HalfInt upper_J{};

  void validate() const {
    if (!(angular_frequency > 0.0))
      throw std::invalid_argument("transition line: angular_frequency must be > 0");
    if (!(reduced_matrix_element >= 0.0))
      throw std::invalid_argument("transition line: reduced_matrix_element must be >= 0");
  }
};

struct AtomSpec {
  HalfInt ground_J = half(1);
  double ground_energy = 0.0;  // J
  std::vector<TransitionLine> lines;
};

enum class Polarization { linear };

struct FieldSpec {
  double angular_frequency = 0.0;  // rad/s
  double amplitude = 0.0;          // V/m
  Polarization polarization = Polarization::linear;
};

struct BeamSpec {
  double power = 0.0;             // W
  double waist_radius = 1.1e-6;   // m, half the 1/e^2 diameter
  double wavelength = 1064e-9;    // m

  void validate() const {
    if (!(power >= 0.0)) throw std::invalid_argument("beam: power must be >= 0");
    if (!(waist_radius > 0.0)) throw std::invalid_argument("beam: waist_radius must be > 0");
    if (!(wavelength > 0.0)) throw std::invalid_argument("beam: wavelength must be > 0");
  }
};

struct Polarizability {
  double scalar = 0.0;  // C^2 m^2 / J
  double tensor = 0.0;

  static Polarizability from_au(double scalar_au, double tensor_au = 0.0) {
    return {scalar_au * constants::polarizability_au, tensor_au * constants::polarizability_au};
  }
};

inline double polarizability_to_au(double si) { return si / constants::polarizability_au; }

struct Coupling {
  double matrix_element = 0.0;      // J, <target|H_I|k>
  double intermediate_energy = 0.0; // J
};

/// Dressed-state ground-level shift hbar |Omega|^2 / (4 Delta) of a two-level atom.
inline double two_level_shift(double rabi_frequency, double detuning) {
  if (detuning == 0.0)
    throw std::domain_error("two_level_shift: zero detuning (resonant drive)");
  return constants::hbar * rabi_frequency * rabi_frequency / (4.0 * detuning);
}

/// Second-order perturbative shift: sum over intermediate states of |V|^2 / (E - E').
inline double second_order_shift(double target_energy, std::span<const Coupling> couplings) {
  double shift = 0.0;
  for (const auto& c : couplings) {
    const double gap = target_energy - c.intermediate_energy;
    if (gap == 0.0)
      throw std::domain_error("second_order_shift: degenerate intermediate state");
    shift += c.matrix_element * c.matrix_element / gap;
  }
  return shift;
}

/// Far-detuned scalar polarisability summed over the listed J -> J' lines.
inline double scalar_polarizability(const AtomSpec& atom, double omega) {
  if (!(omega >= 0.0)) throw std::domain_error("scalar_polarizability: omega must be >= 0");
  if (atom.lines.empty()) throw std::invalid_argument("scalar_polarizability: atom has no lines");
  double sum = 0.0;
  for (const auto& line : atom.lines) {
    line.validate();
    const double w0 = line.angular_frequency;
    const double denom = w0 * w0 - omega * omega;
    if (denom == 0.0) throw std::domain_error("scalar_polarizability: omega on a line resonance");
    const double d = line.reduced_matrix_element;
    sum += w0 * d * d / denom;
  }
  return 2.0 * sum / (3.0 * constants::hbar);
}

/// Angular factor multiplying the tensor polarisability. Zero for J < 1, where
/// the tensor part of the ground-state shift vanishes.
inline double tensor_factor(HalfInt J, HalfInt mJ) {
  const double j = J.value();
  const double m = mJ.value();
  if (J.twice < 2) return 0.0;
  return (3.0 * m * m - j * (j + 1.0)) / (j * (2.0 * j - 1.0));
}

inline double stark_shift(HalfInt J, HalfInt mJ, const Polarizability& pol, const FieldSpec& field) {
  if (J.twice < 0 || std::abs(mJ.twice) > J.twice || (J.twice - mJ.twice) % 2 != 0)
    throw std::domain_error("stark_shift: invalid (J, mJ)");
  if (!(field.amplitude >= 0.0)) throw std::invalid_argument("stark_shift: amplitude must be >= 0");
  if (J.twice < 2 && pol.tensor != 0.0)
    throw std::domain_error("stark_shift: tensor polarisability given for J < 1");
  const double alpha = pol.scalar + pol.tensor * tensor_factor(J, mJ);
  return -0.25 * alpha * field.amplitude * field.amplitude;
}

inline double peak_intensity(const BeamSpec& beam) {
  return 2.0 * beam.power / (constants::pi * beam.waist_radius * beam.waist_radius);
}

/// Trap depth U/k_B in kelvin for a Gaussian focus, U = alpha0 I / (2 eps0 c).
inline double trap_depth(const BeamSpec& beam, double alpha0) {
  beam.validate();
  if (!(alpha0 > 0.0)) throw std::domain_error("repulsive potential, no trap depth");
  const double u = alpha0 * peak_intensity(beam) / (2.0 * constants::epsilon0 * constants::speed_of_light);
  return u / constants::boltzmann;
}

inline double trap_depth(const BeamSpec& beam, const AtomSpec& atom) {
  return trap_depth(beam, scalar_polarizability(atom, angular_frequency_from_wavelength(beam.wavelength)));
}

/// Empirical mW -> mK calibration slope of the tweezer array (0.083 mK/mW).
inline constexpr double default_depth_slope = 0.083;  // K/W

inline double depth_from_power_calibrated(double power, double slope = default_depth_slope) {
  if (!(power >= 0.0)) throw std::domain_error("depth_from_power_calibrated: negative power");
  return slope * power;
}

// Line data

inline TransitionLine line_from_au(double wavelength_nm, double reduced_matrix_element_au, HalfInt upper_J) {
  TransitionLine l;
  l.angular_frequency = angular_frequency_from_wavelength(wavelength_nm * 1e-9);
  l.reduced_matrix_element = reduced_matrix_element_au * constants::dipole_au;
  l.upper_J = upper_J;
  l.validate();
  return l;
}

/// Rb-87 D1 (5S1/2 -> 5P1/2) and D2 (5S1/2 -> 5P3/2). Matrix elements in the
/// convention where summing |<J m|d|J' m'>|^2 over m' gives |<J||d||J'>|^2.
inline AtomSpec rb87_d_lines() {
  AtomSpec atom;
  atom.ground_J = half(1);
  atom.lines.push_back(line_from_au(794.978851, 2.992, half(1)));
  atom.lines.push_back(line_from_au(780.241209, 4.227, half(3)));
  return atom;
}

/// Parses `wavelength_nm,reduced_matrix_element_au,upper_J` records. A header
/// row and '#' comments are allowed.
inline AtomSpec parse_atom_lines(std::istream& in, const std::string& source = "<stream>") {
  AtomSpec atom;
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (raw.find("wavelength_nm") != std::string::npos) continue;
    std::stringstream ss(raw);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
      throw std::runtime_error(source + ":" + std::to_string(lineno) + ": expected 3 fields");
    try {
      atom.lines.push_back(line_from_au(std::stod(a), std::stod(b), HalfInt::from_double(std::stod(c))));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (atom.lines.empty()) throw std::runtime_error(source + ": no transition lines");
  return atom;
}

inline AtomSpec load_atom_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open line-data file: " + path);
  return parse_atom_lines(in, path);
}

}  // namespace tweezer::physics
