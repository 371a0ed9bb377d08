#include "budgetformer/schedules.hpp"

#include <cmath>
#include <iostream>
#include <string>

#include "budgetformer/errors.hpp"

namespace budgetformer {

void ScheduleConfig::validate() const {
  if (!(tau_min > 0.0) || !(tau_max > tau_min)) {
    throw ParameterError("ScheduleConfig: need tau_max > tau_min > 0, got tau_min=" +
                         std::to_string(tau_min) + " tau_max=" + std::to_string(tau_max));
  }
  if (sigma_max < 0.0) throw ParameterError("ScheduleConfig: sigma_max must be >= 0");
  if (gamma < 0.0) throw ParameterError("ScheduleConfig: gamma must be >= 0");
  if (beta_max < 0.0) throw ParameterError("ScheduleConfig: beta_max must be >= 0");
  if (total_steps < 1) throw ParameterError("ScheduleConfig: total_steps must be >= 1");
}

double noise_scale(std::int64_t t, const ScheduleConfig& cfg) {
  if (t > cfg.total_steps) {
    std::cerr << "[schedules] step " << t << " past horizon " << cfg.total_steps
              << "; noise clamped to 0\n";
    return 0.0;
  }
  double frac = static_cast<double>(t) / static_cast<double>(cfg.total_steps);
  return cfg.sigma_max * (1.0 - frac);
}

double temperature(std::int64_t t, const ScheduleConfig& cfg) {
  if (t > cfg.total_steps) t = cfg.total_steps;
  double frac = static_cast<double>(t) / static_cast<double>(cfg.total_steps);
  return cfg.tau_min + (cfg.tau_max - cfg.tau_min) * std::exp(-cfg.gamma * frac);
}

double entropy_coefficient(std::int64_t t, const ScheduleConfig& cfg) {
  if (t > cfg.total_steps) t = cfg.total_steps;
  double frac = static_cast<double>(t) / static_cast<double>(cfg.total_steps);
  return cfg.beta_max * (2.0 * frac - 1.0);
}

}  // namespace budgetformer
