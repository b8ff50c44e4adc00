#pragma once

#include <cmath>
#include <cstddef>

// Shared scalar bodies: the scalar dispatch table uses these directly and the
// SIMD tables fall back to them for remainder lanes and cold ops.

namespace freqdiff::kernels::detail {

inline double sigmoid1(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double silu1(double x) { return x * sigmoid1(x); }

inline double silu_grad1(double x) {
  double s = sigmoid1(x);
  return s * (1.0 + x * (1.0 - s));
}

inline double gelu1(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476));
}

inline double gelu_grad1(double x) {
  // d/dx [x Phi(x)] = Phi(x) + x phi(x)
  double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
  double pdf = 0.3989422804014327 * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

inline void adam_step_scalar(double* p, const double* g, double* m, double* v,
                             std::size_t n, double lr, double beta1,
                             double beta2, double eps, double decay,
                             long step) {
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    double mh = m[i] / bc1;
    double vh = v[i] / bc2;
    p[i] -= lr * (mh / (std::sqrt(vh) + eps) + decay * p[i]);
  }
}

}  // namespace freqdiff::kernels::detail
