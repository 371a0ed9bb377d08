#pragma once

#include <cstdint>

namespace budgetformer {

// Annealing constants for the exploration -> exploitation transition, plus
// the step horizon they are measured against.
struct ScheduleConfig {
  double sigma_max = 0.5;  // initial gating-noise std
  double tau_min = 0.1;    // gating softmax temperature floor
  double tau_max = 2.0;    // initial gating softmax temperature
  double gamma = 5.0;      // temperature decay rate
  double beta_max = 0.05;  // entropy coefficient magnitude at t in {0, T}
  std::int64_t total_steps = 1;

  void validate() const;  // throws ParameterError
};

// All three decay over the global optimizer step t in [0, T]. Steps past T
// (a resumed run) clamp to the t = T value; noise_scale also warns, since
// training past the horizon means T was computed wrong somewhere.
double noise_scale(std::int64_t t, const ScheduleConfig& cfg);
double temperature(std::int64_t t, const ScheduleConfig& cfg);
double entropy_coefficient(std::int64_t t, const ScheduleConfig& cfg);

}  // namespace budgetformer
