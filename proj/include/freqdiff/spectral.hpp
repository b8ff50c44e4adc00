#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freqdiff/trajectory.hpp"

namespace freqdiff {

// Orthonormal DCT-II basis for length n: row k is the mode-k basis vector
// u_k[t] = a_k cos(pi (t + 1/2) k / n), a_0 = sqrt(1/n), a_k = sqrt(2/n).
// Transforms are explicit matrix products; n <= 64 everywhere in the paper
// setup so O(n^2) is exact and fast enough.
class DctBasis {
 public:
  explicit DctBasis(int n);
  int n() const { return n_; }
  const double* matrix() const { return u_.data(); }  // n x n row-major

 private:
  int n_;
  std::vector<double> u_;
};

const DctBasis& dct_basis(int n);  // process-wide cache

struct Spectrum {
  int n = 0;
  int d = 0;
  std::vector<double> coeffs;       // n x d (zero for aggregated spectra)
  std::vector<double> mode_energy;  // length n, E_k = sum_d C_{k,d}^2
  std::vector<double> energy_share; // length n; all-zero when zero_energy
  double total_energy = 0.0;
  bool zero_energy = false;
};

struct BandMask {
  int n = 0;
  std::vector<std::uint8_t> is_low;  // length n

  int m() const;  // |low_modes|
  static BandMask prefix(int n, int m);        // low = {0..m-1}
  static BandMask suffix_high(int n, int count);  // high = last `count` modes
};

enum class Band { low, high };

std::vector<double> column_means(const Trajectory& x);

// Mean removal per dimension, then orthonormal DCT-II along time.
Spectrum dct_forward(const Trajectory& x);
// Raw variant without mean handling; the synthesis path samples coefficients
// directly and inverts, and error decompositions must keep the DC mode.
Spectrum dct_raw_forward(const Trajectory& x);

// Exact inverse of dct_forward given the removed means (pass zeros to invert
// the raw transform).
Trajectory dct_inverse(const Spectrum& s, const std::vector<double>& mean);
Trajectory dct_inverse(const Spectrum& s);

// Smallest prefix {0..m-1} whose cumulative energy share reaches `fraction`.
BandMask cutoff_low_to_high(const Spectrum& s, double fraction);
// Smallest suffix reaching `fraction`; the suffix is the high band.
BandMask cutoff_high_to_low(const Spectrum& s, double fraction);

Spectrum band_project(const Spectrum& s, const BandMask& mask, Band which);

// Aggregate E_k over trajectories, then normalize by the grand total.
Spectrum dataset_spectrum(const std::vector<Trajectory>& trajs);

// Spectrum carrying aggregate per-mode energies only (no coefficients), so
// cutoff selection can run on analytic mode variances.
Spectrum spectrum_from_energies(const std::vector<double>& energy);

// Non-overlapping windows of length `window`; remainder frames are dropped.
std::vector<Trajectory> segment_episode(const Trajectory& episode, int window);

void write_spectrum_csv(const std::string& path, const Spectrum& s);

}  // namespace freqdiff
