#include "freqdiff/schedule.hpp"

#include <cmath>

namespace freqdiff {

const char* schedule_kind_name(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::linear_beta: return "linear_beta";
    case ScheduleKind::cosine: return "cosine";
  }
  throw internal_error("unknown schedule kind");
}

ScheduleKind schedule_kind_from_name(const std::string& name) {
  if (name == "linear_beta") return ScheduleKind::linear_beta;
  if (name == "cosine") return ScheduleKind::cosine;
  throw invalid_input("unknown schedule kind: '" + name +
                      "' (expected linear_beta|cosine)");
}

double NoiseSchedule::alpha(int i) const {
  require(i >= 0 && i < num_train_steps, "timestep index out of range");
  return std::sqrt(alpha_bar[i]);
}

double NoiseSchedule::sigma(int i) const {
  require(i >= 0 && i < num_train_steps, "timestep index out of range");
  return std::sqrt(1.0 - alpha_bar[i]);
}

double NoiseSchedule::alpha_bar_continuous(double t) const {
  require(t >= 0.0 && t <= 1.0, "continuous time must be in [0,1]");
  if (kind == ScheduleKind::cosine) {
    double c = std::cos(M_PI * t / 2.0);
    return c * c;
  }
  if (t == 0.0) return 1.0;
  double pos = t * num_train_steps;  // anchors at t_i = (i+1)/steps
  int hi = static_cast<int>(std::ceil(pos)) - 1;
  if (hi >= num_train_steps) hi = num_train_steps - 1;
  double log_lo = hi == 0 ? 0.0 : std::log(alpha_bar[hi - 1]);
  double log_hi = std::log(alpha_bar[hi]);
  double frac = pos - hi;  // in (0,1]
  return std::exp(log_lo + frac * (log_hi - log_lo));
}

NoiseSchedule make_linear(double beta_min, double beta_max, int steps) {
  require(steps >= 1, "steps must be >= 1");
  require(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0,
          "need 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.kind = ScheduleKind::linear_beta;
  s.num_train_steps = steps;
  s.betas.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    double beta = steps == 1 ? beta_min
                             : beta_min + (beta_max - beta_min) * i / (steps - 1);
    s.betas[i] = beta;
    prod *= 1.0 - beta;
    s.alpha_bar[i] = prod;
  }
  return s;
}

NoiseSchedule make_cosine(int steps) {
  require(steps >= 1, "steps must be >= 1");
  NoiseSchedule s;
  s.kind = ScheduleKind::cosine;
  s.num_train_steps = steps;
  s.alpha_bar.resize(steps);
  for (int i = 0; i < steps; ++i) {
    // Same expression as alpha_bar_continuous so grid levels match the
    // continuous form bitwise. cos(pi/2) in floating point is ~6e-17, so the
    // last level stays positive.
    double t = static_cast<double>(i + 1) / steps;
    double c = std::cos(M_PI * t / 2.0);
    s.alpha_bar[i] = c * c;
  }
  return s;
}

double snr_ratio(const NoiseSchedule& s, int t_index) {
  require(t_index >= 0 && t_index < s.num_train_steps,
          "timestep index out of range");
  double ab = s.alpha_bar[t_index];
  return (1.0 - ab) / ab;
}

double snr_ratio_continuous(const NoiseSchedule& s, double t) {
  double ab = s.alpha_bar_continuous(t);
  return (1.0 - ab) / ab;
}

StepGrid make_grid(const NoiseSchedule& s, int K) {
  require(K >= 1 && K <= s.num_train_steps, "K out of range");
  StepGrid g;
  int last = s.num_train_steps - 1;
  for (int j = 0; j < K; ++j) {
    int idx = static_cast<int>(
        std::floor(static_cast<double>(last) * (1.0 - static_cast<double>(j) / K)));
    if (g.timesteps.empty() || idx < g.timesteps.back()) g.timesteps.push_back(idx);
  }
  return g;
}

}  // namespace freqdiff
