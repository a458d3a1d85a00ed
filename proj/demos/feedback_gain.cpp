// Deepening the trap on arrival lifts the filling fraction above 0.5.
#include <cstdio>

#include "tweezer/controller.hpp"

int main() {
  using namespace tweezer;
  controller::RegimeRates rates{mW(10), kinetics::rates_from_times(2.07, 1.99), mW(21),
                                kinetics::rates_from_times(12.0, 7.92)};
  controller::ArrayOptions opt;
  opt.rate_jitter_sigma = 0.0;
  for (double latency : {0.0, 0.25, 1.0}) {
    controller::FeedbackPolicy p;
    p.detection_latency = latency;
    const auto res = controller::run_feedback(8, p, rates, 1e4, 7, opt);
    std::printf("latency %.2f s  filling %.3f +- %.3f  predicted %.3f\n", latency, res.mean_filling, res.std_filling,
                controller::predicted_filling(p, rates));
  }
  controller::FeedbackPolicy same;
  same.holding_power = same.loading_power;
  std::printf("no switching  predicted %.3f\n", controller::predicted_filling(same, rates));
}
