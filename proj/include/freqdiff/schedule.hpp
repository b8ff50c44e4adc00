#pragma once

#include <vector>

#include "freqdiff/common.hpp"

namespace freqdiff {

enum class ScheduleKind { linear_beta, cosine };

const char* schedule_kind_name(ScheduleKind kind);
ScheduleKind schedule_kind_from_name(const std::string& name);

// Variance-preserving forward process: x_t = alpha_t x0 + sigma_t eps with
// alpha_t^2 + sigma_t^2 = 1. Discrete levels index the training grid; the
// continuous form backs the K-step bound evaluated at t = 1/K.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::linear_beta;
  int num_train_steps = 0;
  std::vector<double> betas;      // linear-beta only
  std::vector<double> alpha_bar;  // strictly decreasing, in (0,1]

  double alpha(int i) const;  // sqrt(alpha_bar[i])
  double sigma(int i) const;  // sqrt(1 - alpha_bar[i])

  // alpha_bar as a function of t in [0,1]. Cosine uses the closed form
  // cos^2(pi t / 2). Linear-beta interpolates log(alpha_bar) piecewise-
  // linearly over the anchors t_i = (i+1)/steps with alpha_bar(0) = 1, so the
  // continuous value coincides with the discrete level wherever t lands on
  // the grid.
  double alpha_bar_continuous(double t) const;
};

struct StepGrid {
  std::vector<int> timesteps;  // strictly decreasing, first = highest noise
  int steps() const { return static_cast<int>(timesteps.size()); }
};

NoiseSchedule make_linear(double beta_min, double beta_max, int steps);
NoiseSchedule make_cosine(int steps);

double snr_ratio(const NoiseSchedule& s, int t_index);        // sigma^2/alpha^2
double snr_ratio_continuous(const NoiseSchedule& s, double t);

// K evenly spaced indices over [0, steps-1], descending, via
// floor((steps-1) * (1 - j/K)), deduplicated. Always includes steps-1.
StepGrid make_grid(const NoiseSchedule& s, int K);

}  // namespace freqdiff
