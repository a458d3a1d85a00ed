// Trap depth from the Rb D-line polarizability against the empirical calibration.
#include <cstdio>

#include "tweezer/physics.hpp"

int main() {
  using namespace tweezer;
  const auto atom = physics::rb87_d_lines();
  physics::BeamSpec beam;
  const double alpha = physics::scalar_polarizability(atom, angular_frequency_from_wavelength(beam.wavelength));
  std::printf("alpha0(1064 nm) = %.1f a.u.\n", physics::polarizability_to_au(alpha));
  std::printf("power_mW  depth_mK  calibrated_mK\n");
  for (double p : {1.0, 10.0, 21.0, 41.0, 100.0}) {
    beam.power = mW(p);
    std::printf("%8.1f  %8.3f  %13.3f\n", p, to_mK(physics::trap_depth(beam, alpha)),
                to_mK(physics::depth_from_power_calibrated(mW(p))));
  }
}
