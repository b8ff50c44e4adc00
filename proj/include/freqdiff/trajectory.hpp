#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freqdiff/common.hpp"

namespace freqdiff {

// An action trajectory: n time frames by d action dimensions, row-major.
struct Trajectory {
  int n = 0;
  int d = 0;
  std::vector<double> data;  // n*d, frame-major

  Trajectory() = default;
  Trajectory(int n_, int d_) : n(n_), d(d_), data(static_cast<size_t>(n_) * d_, 0.0) {
    require(n_ >= 1 && d_ >= 1, "trajectory dims must be >= 1");
  }

  double& at(int t, int dim) { return data[static_cast<size_t>(t) * d + dim]; }
  double at(int t, int dim) const { return data[static_cast<size_t>(t) * d + dim]; }

  bool finite() const;
};

// CSV: header `t,a0,a1,...`, one row per frame; multiple trajectories in one
// file are separated by blank lines. Doubles are written shortest-round-trip
// (std::to_chars), so read(write(x)) == x bitwise.
void write_trajectories_csv(const std::string& path, const std::vector<Trajectory>& trajs);
std::vector<Trajectory> read_trajectories_csv(const std::string& path);

std::string format_double(double v);
double parse_double(const std::string& s);

// FNV-1a over each trajectory's dims and the raw bytes of its values; equal
// hashes on the same platform mean bitwise-equal content.
std::uint64_t trajectories_hash(const std::vector<Trajectory>& trajs);

}  // namespace freqdiff
