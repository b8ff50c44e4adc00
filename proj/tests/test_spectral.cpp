#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "doctest.h"
#include "freqdiff/spectral.hpp"

using namespace freqdiff;

namespace {

Trajectory random_traj(std::mt19937_64& rng, int n, int d) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Trajectory x(n, d);
  for (auto& v : x.data) v = u(rng);
  return x;
}

}  // namespace

TEST_CASE("basis is orthonormal for n in {8, 32, 64}") {
  for (int n : {8, 32, 64}) {
    const DctBasis& b = dct_basis(n);
    const double* u = b.matrix();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double dot = 0.0;
        for (int t = 0; t < n; ++t)
          dot += u[(size_t)i * n + t] * u[(size_t)j * n + t];
        CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-10);
      }
  }
}

TEST_CASE("constant trajectory transforms to zero energy with flag") {
  Trajectory x(16, 3);
  for (int t = 0; t < 16; ++t)
    for (int a = 0; a < 3; ++a) x.at(t, a) = 4.5 - a;
  Spectrum s = dct_forward(x);
  CHECK(s.zero_energy);
  CHECK(s.total_energy == doctest::Approx(0.0).epsilon(1e-15));
  for (double p : s.energy_share) CHECK(p == 0.0);
  for (double c : s.coeffs) CHECK(std::abs(c) < 1e-12);
}

TEST_CASE("pure cosine mode concentrates all share on that mode") {
  int n = 32;
  Trajectory x(n, 1);
  for (int t = 0; t < n; ++t) x.at(t, 0) = std::cos(M_PI * (t + 0.5) * 3 / n);
  Spectrum s = dct_forward(x);
  CHECK(std::abs(s.energy_share[3] - 1.0) <= 1e-12);
  for (int k = 0; k < n; ++k)
    if (k != 3) CHECK(s.energy_share[k] <= 1e-12);
}

TEST_CASE("Parseval: total energy equals mean-removed squared Frobenius norm") {
  std::mt19937_64 rng(5);
  Trajectory x = random_traj(rng, 64, 4);
  Spectrum s = dct_forward(x);
  auto mean = column_means(x);
  double frob = 0.0;
  for (int t = 0; t < x.n; ++t)
    for (int a = 0; a < x.d; ++a) {
      double v = x.at(t, a) - mean[a];
      frob += v * v;
    }
  CHECK(std::abs(s.total_energy - frob) <= 1e-9 * frob);
  double share_sum = 0.0;
  for (double p : s.energy_share) share_sum += p;
  CHECK(std::abs(share_sum - 1.0) <= 1e-12);
}

TEST_CASE("round trip reconstructs the trajectory") {
  std::mt19937_64 rng(6);
  for (int n : {8, 33, 64}) {
    Trajectory x = random_traj(rng, n, 4);
    Trajectory back = dct_inverse(dct_forward(x), column_means(x));
    for (size_t i = 0; i < x.data.size(); ++i)
      CHECK(std::abs(back.data[i] - x.data[i]) < 1e-10);
    // raw variant keeps the DC content
    Trajectory raw = dct_inverse(dct_raw_forward(x));
    for (size_t i = 0; i < x.data.size(); ++i)
      CHECK(std::abs(raw.data[i] - x.data[i]) < 1e-10);
  }
}

TEST_CASE("inverse of unit mode-1 coefficient matches direct DCT-III sum") {
  int n = 16;
  Spectrum s;
  s.n = n;
  s.d = 1;
  s.coeffs.assign(n, 0.0);
  s.coeffs[1] = 1.0;
  Trajectory x = dct_inverse(s, {0.0});
  for (int t = 0; t < n; ++t) {
    double want = std::sqrt(2.0 / n) * std::cos(M_PI * (t + 0.5) * 1 / n);
    CHECK(std::abs(x.at(t, 0) - want) < 1e-12);
  }
  // zero spectrum + mean -> constant at mean
  Spectrum z = s;
  z.coeffs.assign(n, 0.0);
  Trajectory c = dct_inverse(z, {2.5});
  for (int t = 0; t < n; ++t) CHECK(c.at(t, 0) == doctest::Approx(2.5));
}

TEST_CASE("cutoffs: single mode, uniform, delta, monotonicity") {
  auto make_spec = [](std::vector<double> energy) {
    Spectrum s;
    s.n = static_cast<int>(energy.size());
    s.d = 1;
    s.coeffs.assign(energy.size(), 0.0);
    s.mode_energy = energy;
    s.total_energy = 0.0;
    for (double e : energy) s.total_energy += e;
    s.zero_energy = s.total_energy <= 0.0;
    s.energy_share.assign(energy.size(), 0.0);
    if (!s.zero_energy)
      for (size_t k = 0; k < energy.size(); ++k)
        s.energy_share[k] = energy[k] / s.total_energy;
    return s;
  };

  std::vector<double> single(10, 0.0);
  single[4] = 3.0;
  CHECK(cutoff_low_to_high(make_spec(single), 0.5).m() == 5);
  CHECK(cutoff_low_to_high(make_spec(single), 1.0).m() == 5);

  std::vector<double> uniform(64, 1.0);
  BandMask lo = cutoff_low_to_high(make_spec(uniform), 0.95);
  CHECK(lo.m() == 61);
  BandMask hi = cutoff_high_to_low(make_spec(uniform), 0.95);
  CHECK(hi.n - hi.m() == 61);

  std::vector<double> last(8, 0.0);
  last[7] = 1.0;
  BandMask dl = cutoff_high_to_low(make_spec(last), 0.7);
  CHECK(dl.n - dl.m() == 1);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> e(32);
    for (auto& v : e) v = u(rng) + 1e-6;
    Spectrum s = make_spec(e);
    int prev = 0;
    for (double f : {0.1, 0.3, 0.5, 0.7, 0.9, 0.9999, 1.0}) {
      int m = cutoff_low_to_high(s, f).m();
      CHECK(m >= prev);
      prev = m;
    }
  }

  CHECK_THROWS_AS(cutoff_low_to_high(make_spec(std::vector<double>(4, 0.0)), 0.5),
                  invalid_input);
  CHECK_THROWS_AS(cutoff_low_to_high(make_spec(uniform), 0.0), invalid_input);
  CHECK_THROWS_AS(cutoff_low_to_high(make_spec(uniform), 1.5), invalid_input);
}

TEST_CASE("band projection splits energy orthogonally and idempotently") {
  std::mt19937_64 rng(10);
  Trajectory x = random_traj(rng, 64, 4);
  Spectrum s = dct_forward(x);
  BandMask mask = BandMask::prefix(64, 6);
  Spectrum lo = band_project(s, mask, Band::low);
  Spectrum hi = band_project(s, mask, Band::high);
  for (size_t i = 0; i < s.coeffs.size(); ++i)
    CHECK(lo.coeffs[i] + hi.coeffs[i] == doctest::Approx(s.coeffs[i]).epsilon(1e-14));
  CHECK(lo.total_energy + hi.total_energy ==
        doctest::Approx(s.total_energy).epsilon(1e-12));
  double cross = 0.0;
  for (size_t i = 0; i < s.coeffs.size(); ++i) cross += lo.coeffs[i] * hi.coeffs[i];
  CHECK(cross == 0.0);
  Spectrum lo2 = band_project(lo, mask, Band::low);
  CHECK(lo2.coeffs == lo.coeffs);
  // pure mode-1 signal: kept modes are copied bitwise, dropped modes carried
  // only mean-removal rounding dust
  Trajectory pure(64, 1);
  for (int t = 0; t < 64; ++t) pure.at(t, 0) = std::cos(M_PI * (t + 0.5) / 64);
  Spectrum ps = dct_forward(pure);
  Spectrum plo = band_project(ps, mask, Band::low);
  for (int k = 0; k < 64; ++k) {
    if (k < 6) {
      CHECK(plo.coeffs[k] == ps.coeffs[k]);
    } else {
      CHECK(plo.coeffs[k] == 0.0);
      CHECK(std::abs(ps.coeffs[k]) < 1e-12);
    }
  }
}

TEST_CASE("dataset spectrum aggregates raw energies") {
  std::mt19937_64 rng(11);
  Trajectory x = random_traj(rng, 32, 2);
  Spectrum one = dct_forward(x);
  Spectrum agg1 = dataset_spectrum({x});
  Spectrum agg2 = dataset_spectrum({x, x});
  for (int k = 0; k < 32; ++k) {
    CHECK(agg1.energy_share[k] == doctest::Approx(one.energy_share[k]).epsilon(1e-12));
    CHECK(agg2.energy_share[k] == doctest::Approx(one.energy_share[k]).epsilon(1e-12));
    CHECK(agg2.mode_energy[k] == doctest::Approx(2.0 * one.mode_energy[k]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(dataset_spectrum({}), invalid_input);
}

TEST_CASE("episode segmentation drops the remainder") {
  std::mt19937_64 rng(12);
  Trajectory ep = random_traj(rng, 70, 3);
  CHECK(segment_episode(ep, 32).size() == 2);
  CHECK(segment_episode(random_traj(rng, 31, 1), 32).empty());
  auto segs = segment_episode(random_traj(rng, 64, 2), 8);
  CHECK(segs.size() == 8);
  Trajectory src = random_traj(rng, 64, 2);
  segs = segment_episode(src, 8);
  for (int si = 0; si < 8; ++si)
    for (int t = 0; t < 8; ++t)
      for (int a = 0; a < 2; ++a)
        CHECK(segs[si].at(t, a) == src.at(si * 8 + t, a));
}

TEST_CASE("trajectory CSV round-trips bitwise, multi-trajectory files work") {
  std::mt19937_64 rng(13);
  std::vector<Trajectory> trajs{random_traj(rng, 16, 3), random_traj(rng, 16, 3)};
  trajs[0].at(0, 0) = 0.1;  // not exactly representable; exercises shortest form
  trajs[1].at(3, 2) = -1e-17;
  std::string path = "spectral_csv_roundtrip.csv";
  write_trajectories_csv(path, trajs);
  auto back = read_trajectories_csv(path);
  REQUIRE(back.size() == 2);
  for (size_t i = 0; i < 2; ++i) CHECK(back[i].data == trajs[i].data);
  std::remove(path.c_str());
}

TEST_CASE("spectrum CSV carries shares and cumulative shares") {
  Trajectory x(8, 1);
  for (int t = 0; t < 8; ++t) x.at(t, 0) = std::cos(M_PI * (t + 0.5) * 2 / 8);
  std::string path = "spectral_spectrum_out.csv";
  write_spectrum_csv(path, dct_forward(x));
  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  CHECK(header == "mode,energy,share,cumulative_share");
  int rows = 0;
  std::string line;
  while (std::getline(f, line)) {
    int mode;
    double energy, share, cum;
    REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &mode, &energy, &share,
                        &cum) == 4);
    CHECK(mode == rows);
    if (mode == 2) {
      CHECK(energy == doctest::Approx(4.0).epsilon(1e-12));  // ||x||^2 = n/2
      CHECK(share == doctest::Approx(1.0).epsilon(1e-12));
    } else {
      CHECK(share <= 1e-12);
    }
    CHECK(cum == doctest::Approx(mode >= 2 ? 1.0 : 0.0).epsilon(1e-12));
    ++rows;
  }
  CHECK(rows == 8);
  std::remove(path.c_str());
}

TEST_CASE("non-finite input is rejected") {
  Trajectory x(4, 1);
  x.at(2, 0) = std::nan("");
  CHECK_THROWS_AS(dct_forward(x), invalid_input);
}
