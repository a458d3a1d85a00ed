// Collisional blockade caps a continuously loaded trap at half filling.
#include <cstdio>

#include "tweezer/kinetics.hpp"

int main() {
  using namespace tweezer;
  for (double gamma : {0.0, 0.1, 0.5, 2.0}) {
    kinetics::RateSet r;
    r.loading_rate = 0.5;
    r.one_body_loss_light = gamma;
    const auto tl = kinetics::simulate_trap(kinetics::RateSchedule::constant(r), 1e5, 42);
    std::printf("gamma = %.2f /s  simulated %.4f  steady state %.4f  (%zu loads)\n", gamma, tl.occupancy(),
                kinetics::steady_state_occupancy(r), tl.intervals.size());
  }
}
