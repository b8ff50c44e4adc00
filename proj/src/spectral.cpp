#include "freqdiff/spectral.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <mutex>

#include "freqdiff/kernels.hpp"

namespace freqdiff {

DctBasis::DctBasis(int n) : n_(n), u_(static_cast<size_t>(n) * n) {
  require(n >= 1, "dct basis needs n >= 1");
  const double a0 = std::sqrt(1.0 / n);
  const double ak = std::sqrt(2.0 / n);
  for (int k = 0; k < n; ++k) {
    double amp = k == 0 ? a0 : ak;
    for (int t = 0; t < n; ++t)
      u_[static_cast<size_t>(k) * n + t] =
          amp * std::cos(M_PI * (t + 0.5) * k / n);
  }
}

const DctBasis& dct_basis(int n) {
  static std::mutex mu;
  static std::map<int, DctBasis> cache;
  std::lock_guard<std::mutex> lk(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, DctBasis(n)).first;
  return it->second;
}

int BandMask::m() const {
  int c = 0;
  for (auto b : is_low) c += b != 0;
  return c;
}

BandMask BandMask::prefix(int n, int m) {
  require(n >= 1 && m >= 0 && m <= n, "bad band prefix");
  BandMask b;
  b.n = n;
  b.is_low.assign(static_cast<size_t>(n), 0);
  for (int k = 0; k < m; ++k) b.is_low[k] = 1;
  return b;
}

BandMask BandMask::suffix_high(int n, int count) {
  require(n >= 1 && count >= 0 && count <= n, "bad band suffix");
  return prefix(n, n - count);
}

std::vector<double> column_means(const Trajectory& x) {
  std::vector<double> mean(x.d, 0.0);
  for (int t = 0; t < x.n; ++t)
    for (int a = 0; a < x.d; ++a) mean[a] += x.at(t, a);
  for (auto& v : mean) v /= x.n;
  return mean;
}

namespace {

void fill_energies(Spectrum& s) {
  s.mode_energy.assign(static_cast<size_t>(s.n), 0.0);
  for (int k = 0; k < s.n; ++k)
    s.mode_energy[k] =
        kernels::ops().sumsq(s.coeffs.data() + static_cast<size_t>(k) * s.d,
                             static_cast<size_t>(s.d));
  s.total_energy = kernels::ops().sum(s.mode_energy.data(), s.mode_energy.size());
  s.energy_share.assign(static_cast<size_t>(s.n), 0.0);
  s.zero_energy = s.total_energy <= 0.0;
  if (!s.zero_energy)
    for (int k = 0; k < s.n; ++k)
      s.energy_share[k] = s.mode_energy[k] / s.total_energy;
}

Spectrum transform(const Trajectory& x, bool remove_mean) {
  require(x.n >= 1 && x.d >= 1, "empty trajectory");
  require(x.finite(), "non-finite trajectory");
  Trajectory centered = x;
  if (remove_mean) {
    auto mean = column_means(x);
    for (int t = 0; t < x.n; ++t)
      for (int a = 0; a < x.d; ++a) centered.at(t, a) -= mean[a];
  }
  Spectrum s;
  s.n = x.n;
  s.d = x.d;
  s.coeffs.assign(static_cast<size_t>(x.n) * x.d, 0.0);
  const DctBasis& basis = dct_basis(x.n);
  kernels::ops().gemm(false, false, x.n, x.d, x.n, 1.0, basis.matrix(), x.n,
                      centered.data.data(), x.d, 0.0, s.coeffs.data(), x.d);
  fill_energies(s);
  return s;
}

}  // namespace

Spectrum dct_forward(const Trajectory& x) { return transform(x, true); }
Spectrum dct_raw_forward(const Trajectory& x) { return transform(x, false); }

Trajectory dct_inverse(const Spectrum& s, const std::vector<double>& mean) {
  require(s.n >= 1 && s.d >= 1, "empty spectrum");
  require(static_cast<int>(s.coeffs.size()) == s.n * s.d,
          "spectrum coefficient shape mismatch");
  require(static_cast<int>(mean.size()) == s.d, "mean length != d");
  Trajectory x(s.n, s.d);
  const DctBasis& basis = dct_basis(s.n);
  kernels::ops().gemm(true, false, s.n, s.d, s.n, 1.0, basis.matrix(), s.n,
                      s.coeffs.data(), s.d, 0.0, x.data.data(), s.d);
  for (int t = 0; t < s.n; ++t)
    for (int a = 0; a < s.d; ++a) x.at(t, a) += mean[a];
  return x;
}

Trajectory dct_inverse(const Spectrum& s) {
  return dct_inverse(s, std::vector<double>(static_cast<size_t>(s.d), 0.0));
}

BandMask cutoff_low_to_high(const Spectrum& s, double fraction) {
  require(fraction > 0.0 && fraction <= 1.0, "fraction must be in (0,1]");
  require(!s.zero_energy, "cutoff undefined for zero-energy spectrum");
  double cum = 0.0;
  for (int k = 0; k < s.n; ++k) {
    cum += s.energy_share[k];
    if (cum >= fraction) return BandMask::prefix(s.n, k + 1);
  }
  return BandMask::prefix(s.n, s.n);  // fraction == 1 with rounding slack
}

BandMask cutoff_high_to_low(const Spectrum& s, double fraction) {
  require(fraction > 0.0 && fraction <= 1.0, "fraction must be in (0,1]");
  require(!s.zero_energy, "cutoff undefined for zero-energy spectrum");
  double cum = 0.0;
  for (int k = s.n - 1; k >= 0; --k) {
    cum += s.energy_share[k];
    if (cum >= fraction) return BandMask::suffix_high(s.n, s.n - k);
  }
  return BandMask::suffix_high(s.n, s.n);
}

Spectrum band_project(const Spectrum& s, const BandMask& mask, Band which) {
  require(mask.n == s.n, "mask size mismatch");
  Spectrum out = s;
  for (int k = 0; k < s.n; ++k) {
    bool keep = which == Band::low ? mask.is_low[k] != 0 : mask.is_low[k] == 0;
    if (!keep)
      for (int a = 0; a < s.d; ++a)
        out.coeffs[static_cast<size_t>(k) * s.d + a] = 0.0;
  }
  fill_energies(out);
  return out;
}

Spectrum dataset_spectrum(const std::vector<Trajectory>& trajs) {
  require(!trajs.empty(), "dataset_spectrum over empty list");
  int n = trajs[0].n, d = trajs[0].d;
  Spectrum agg;
  agg.n = n;
  agg.d = d;
  agg.coeffs.assign(static_cast<size_t>(n) * d, 0.0);
  agg.mode_energy.assign(static_cast<size_t>(n), 0.0);
  for (const Trajectory& x : trajs) {
    require(x.n == n && x.d == d, "mixed shapes in dataset");
    Spectrum s = dct_forward(x);
    for (int k = 0; k < n; ++k) agg.mode_energy[k] += s.mode_energy[k];
  }
  agg.total_energy = kernels::ops().sum(agg.mode_energy.data(), agg.mode_energy.size());
  agg.energy_share.assign(static_cast<size_t>(n), 0.0);
  agg.zero_energy = agg.total_energy <= 0.0;
  if (!agg.zero_energy)
    for (int k = 0; k < n; ++k)
      agg.energy_share[k] = agg.mode_energy[k] / agg.total_energy;
  return agg;
}

Spectrum spectrum_from_energies(const std::vector<double>& energy) {
  require(!energy.empty(), "spectrum needs at least one mode");
  for (double e : energy) require(e >= 0.0, "mode energies must be >= 0");
  Spectrum s;
  s.n = static_cast<int>(energy.size());
  s.d = 0;
  s.mode_energy = energy;
  s.total_energy = kernels::ops().sum(energy.data(), energy.size());
  s.energy_share.assign(energy.size(), 0.0);
  s.zero_energy = s.total_energy <= 0.0;
  if (!s.zero_energy)
    for (int k = 0; k < s.n; ++k)
      s.energy_share[k] = s.mode_energy[k] / s.total_energy;
  return s;
}

std::vector<Trajectory> segment_episode(const Trajectory& episode, int window) {
  require(window >= 1, "window must be >= 1");
  std::vector<Trajectory> out;
  int count = episode.n / window;
  for (int s = 0; s < count; ++s) {
    Trajectory seg(window, episode.d);
    for (int t = 0; t < window; ++t)
      for (int a = 0; a < episode.d; ++a)
        seg.at(t, a) = episode.at(s * window + t, a);
    out.push_back(std::move(seg));
  }
  return out;
}

void write_spectrum_csv(const std::string& path, const Spectrum& s) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open for write: " + path);
  f << "mode,energy,share,cumulative_share\n";
  double cum = 0.0;
  for (int k = 0; k < s.n; ++k) {
    cum += s.energy_share[k];
    f << k << ',' << format_double(s.mode_energy[k]) << ','
      << format_double(s.energy_share[k]) << ',' << format_double(cum) << '\n';
  }
  require(f.good(), "write failed: " + path);
}

}  // namespace freqdiff
