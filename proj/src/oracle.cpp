#include "freqdiff/oracle.hpp"

#include <cmath>

#include "freqdiff/rng.hpp"

namespace freqdiff {

namespace {

// Cyclic Jacobi for symmetric matrices; n <= 64 in every caller so the
// O(n^3)-per-sweep cost is irrelevant. `vecs` accumulates rotations and ends
// with eigenvector k in column k.
void jacobi_eigen(int n, std::vector<double> a, std::vector<double>& vals,
                  std::vector<double>& vecs) {
  vecs.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) vecs[static_cast<size_t>(i) * n + i] = 1.0;
  auto at = [&](std::vector<double>& m, int r, int c) -> double& {
    return m[static_cast<size_t>(r) * n + c];
  };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        (i == j ? diag : off) += a[static_cast<size_t>(i) * n + j] *
                                 a[static_cast<size_t>(i) * n + j];
    if (off <= 1e-26 * (diag + 1e-300)) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = at(a, p, q);
        if (apq == 0.0) continue;
        double app = at(a, p, p), aqq = at(a, q, q);
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = at(a, k, p), akq = at(a, k, q);
          at(a, k, p) = c * akp - s * akq;
          at(a, k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = at(a, p, k), aqk = at(a, q, k);
          at(a, p, k) = c * apk - s * aqk;
          at(a, q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = at(vecs, k, p), vkq = at(vecs, k, q);
          at(vecs, k, p) = c * vkp - s * vkq;
          at(vecs, k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  vals.resize(n);
  for (int i = 0; i < n; ++i) vals[i] = a[static_cast<size_t>(i) * n + i];
}

inline double posterior_gain(double nu, double alpha, double sigma) {
  if (sigma == 0.0) return 1.0 / alpha;
  return alpha * nu / (alpha * alpha * nu + sigma * sigma);
}

void check_level(double alpha, double sigma) {
  require(alpha >= 0.0 && sigma >= 0.0, "alpha/sigma must be nonnegative");
  require(alpha > 0.0 || sigma > 0.0, "alpha = sigma = 0 is degenerate");
}

}  // namespace

GaussianFreqModel GaussianFreqModel::diagonal(std::vector<double> nu) {
  require(!nu.empty(), "empty eigenvalue list");
  for (double v : nu) require(v >= 0.0, "eigenvalues must be >= 0");
  GaussianFreqModel m;
  m.n = static_cast<int>(nu.size());
  m.sigma_diag = std::move(nu);
  return m;
}

GaussianFreqModel GaussianFreqModel::full_cov(int n, std::vector<double> sigma) {
  require(n >= 1 && static_cast<int>(sigma.size()) == n * n,
          "full covariance must be n x n");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      require(std::abs(sigma[static_cast<size_t>(i) * n + j] -
                       sigma[static_cast<size_t>(j) * n + i]) <= 1e-10,
              "covariance not symmetric");
  GaussianFreqModel m;
  m.n = n;
  m.has_full = true;
  m.full = sigma;
  jacobi_eigen(n, sigma, m.eig_vals, m.eig_vecs);
  m.sigma_diag.resize(n);
  for (int i = 0; i < n; ++i) {
    require(m.eig_vals[i] >= -1e-10, "covariance not PSD");
    if (m.eig_vals[i] < 0.0) m.eig_vals[i] = 0.0;
    m.sigma_diag[i] = sigma[static_cast<size_t>(i) * n + i];  // diag entries
  }
  return m;
}

double GaussianFreqModel::trace() const {
  double t = 0.0;
  for (double v : sigma_diag) t += v;
  return t;
}

double eta_of(const GaussianFreqModel& model, const BandMask& mask) {
  require(mask.n == model.n, "mask size mismatch");
  double tr = model.trace();
  require(tr > 0.0, "eta undefined for zero trace");
  double high = 0.0;
  for (int k = 0; k < model.n; ++k)
    if (mask.is_low[k] == 0) high += model.sigma_diag[k];
  return high / tr;
}

std::vector<double> posterior_mean(const GaussianFreqModel& model,
                                   const std::vector<double>& y_t, double alpha,
                                   double sigma) {
  require(static_cast<int>(y_t.size()) == model.n, "observation length != n");
  check_level(alpha, sigma);
  if (sigma == 0.0) {
    std::vector<double> out(y_t);
    for (double& v : out) v /= alpha;
    return out;
  }
  std::vector<double> out(static_cast<size_t>(model.n), 0.0);
  if (!model.has_full) {
    for (int k = 0; k < model.n; ++k)
      out[k] = posterior_gain(model.sigma_diag[k], alpha, sigma) * y_t[k];
    return out;
  }
  // Q f(nu) Q^T y with f the scalar posterior gain
  int n = model.n;
  std::vector<double> proj(static_cast<size_t>(n), 0.0);
  for (int k = 0; k < n; ++k) {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      s += model.eig_vecs[static_cast<size_t>(i) * n + k] * y_t[i];
    proj[k] = posterior_gain(model.eig_vals[k], alpha, sigma) * s;
  }
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int k = 0; k < n; ++k)
      s += model.eig_vecs[static_cast<size_t>(i) * n + k] * proj[k];
    out[i] = s;
  }
  return out;
}

double posterior_variance_trace(const GaussianFreqModel& model, double alpha,
                                double sigma) {
  check_level(alpha, sigma);
  if (sigma == 0.0) return 0.0;
  const std::vector<double>& nu = model.has_full ? model.eig_vals : model.sigma_diag;
  double s2 = sigma * sigma, a2 = alpha * alpha, tr = 0.0;
  for (double v : nu) tr += s2 * v / (a2 * v + s2);
  return tr;
}

ErrorBoundReport theorem1_bounds(const GaussianFreqModel& model,
                                 const BandMask& mask, double alpha,
                                 double sigma) {
  require(alpha > 0.0, "low-band bound diverges at alpha = 0");
  double tr = model.trace();
  require(tr > 0.0, "bounds undefined for zero trace");
  ErrorBoundReport r;
  r.n = model.n;
  r.m = mask.m();
  r.eta = eta_of(model, mask);
  r.snr = sigma * sigma / (alpha * alpha);
  r.e_L_bound = static_cast<double>(r.m) / r.n * r.snr;
  r.e_H_bound = r.eta / r.n * tr;
  r.e_total_bound = r.e_L_bound + r.e_H_bound;
  r.e_hat_bound = r.e_total_bound / tr;
  return r;
}

double corollary_bound(const GaussianFreqModel& model, const BandMask& mask,
                       const NoiseSchedule& s, int K) {
  require(K >= 1, "K must be >= 1");
  double ab = s.alpha_bar_continuous(1.0 / K);
  double alpha = std::sqrt(ab), sigma = std::sqrt(1.0 - ab);
  return theorem1_bounds(model, mask, alpha, sigma).e_hat_bound;
}

McReport mc_verify(const GaussianFreqModel& model, const BandMask& mask,
                   double alpha, double sigma, long n_samples,
                   std::uint64_t seed) {
  require(n_samples >= 100, "need at least 100 samples");
  require(mask.n == model.n, "mask size mismatch");
  check_level(alpha, sigma);
  int n = model.n;
  const std::vector<double>& nu = model.has_full ? model.eig_vals : model.sigma_diag;
  std::vector<double> sq(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) sq[k] = std::sqrt(nu[k]);

  double sl = 0.0, sh = 0.0, se = 0.0;  // sums of per-sample means
  double ql = 0.0, qh = 0.0, qe = 0.0;  // sums of squares
  std::vector<double> y0(static_cast<size_t>(n)), yt(static_cast<size_t>(n));
  std::vector<double> raw(static_cast<size_t>(n));
  constexpr long kChunk = 4096;
  for (long base = 0; base < n_samples; base += kChunk) {
    long count = std::min(kChunk, n_samples - base);
    Rng rng(derive_seed(seed, stream_tag("mc_verify"),
                        static_cast<std::uint64_t>(base / kChunk)));
    for (long s_i = 0; s_i < count; ++s_i) {
      if (!model.has_full) {
        for (int k = 0; k < n; ++k) y0[k] = sq[k] * rng.next_gaussian();
      } else {
        for (int k = 0; k < n; ++k) raw[k] = sq[k] * rng.next_gaussian();
        for (int i = 0; i < n; ++i) {
          double acc = 0.0;
          for (int k = 0; k < n; ++k)
            acc += model.eig_vecs[static_cast<size_t>(i) * n + k] * raw[k];
          y0[i] = acc;
        }
      }
      for (int k = 0; k < n; ++k)
        yt[k] = alpha * y0[k] + sigma * rng.next_gaussian();
      std::vector<double> est = posterior_mean(model, yt, alpha, sigma);
      double l = 0.0, h = 0.0;
      for (int k = 0; k < n; ++k) {
        double e = est[k] - y0[k];
        (mask.is_low[k] ? l : h) += e * e;
      }
      l /= n;
      h /= n;
      double e = l + h;
      sl += l; sh += h; se += e;
      ql += l * l; qh += h * h; qe += e * e;
    }
  }
  McReport rep;
  rep.n_samples = n_samples;
  double ns = static_cast<double>(n_samples);
  rep.empirical_e_L = sl / ns;
  rep.empirical_e_H = sh / ns;
  // defined as the band sum so the Pythagorean split is an identity
  rep.empirical_mse = rep.empirical_e_L + rep.empirical_e_H;
  auto stderr_of = [&](double s, double q, double mean) {
    double var = q / ns - mean * mean;
    if (var < 0.0) var = 0.0;
    (void)s;
    return std::sqrt(var / ns);
  };
  rep.se_e_L = stderr_of(sl, ql, rep.empirical_e_L);
  rep.se_e_H = stderr_of(sh, qh, rep.empirical_e_H);
  rep.se_mse = stderr_of(se, qe, se / ns);
  rep.analytic_mse = posterior_variance_trace(model, alpha, sigma) / n;
  rep.bounds = theorem1_bounds(model, mask, alpha, sigma);
  return rep;
}

}  // namespace freqdiff
