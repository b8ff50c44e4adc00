#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "freqdiff/trajectory.hpp"

namespace freqdiff {

enum class GeneratorKind { lowfreq, broadband, highfreq };

const char* generator_kind_name(GeneratorKind kind);
GeneratorKind generator_kind_from_name(const std::string& name);

// Controlled spectral concentration: six designated modes carry a fixed
// energy fraction, the rest decays exponentially. `seed` is the master seed;
// per-trajectory and per-split streams are derived from it, never consumed
// directly.
struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::lowfreq;
  int n = 64;
  int d = 4;
  std::vector<double> head_values{0.25, 1.00, 0.90, 0.65, 0.35, 0.20};
  double tail_energy_fraction = 0.01;
  double tail_decay = 0.25;
  std::uint64_t seed = 0;
};

// Per-dimension affine map x -> (x - mean) / std fitted on a training split.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stdev;

  Trajectory apply(const Trajectory& x) const;
  Trajectory invert(const Trajectory& x) const;
};

enum class Split { train, test };

struct Dataset {
  std::vector<Trajectory> trajs;
  Normalization normalization;  // empty until normalize()
  GeneratorSpec spec;
  Split split = Split::train;
  bool normalized = false;
};

// Per-mode coefficient variances lambda_k. lowfreq: head_values on modes
// 0..5 plus an exponential tail A exp(-gamma (k-6)) sized so the tail totals
// tail_energy_fraction of the whole spectrum; broadband: all ones; highfreq:
// the lowfreq spectrum reversed.
std::vector<double> lambda_spectrum(const GeneratorSpec& spec);

// lambda rescaled so the prior's mean per-element variance is 1 (trace = n),
// the scale that time-domain standardization imposes in expectation. Bound
// evaluations use this so their Sigma lives in the same standardized space as
// every reported MSE.
std::vector<double> standardized_lambda(const GeneratorSpec& spec);

// Independent Gaussian DCT coefficients z_{k,a} ~ N(0, lambda_k), inverted
// through the raw orthonormal DCT. Trajectory i draws from the stream
// derive_seed(seed, split tag, i), so generation order is irrelevant and the
// two splits never share draws.
Dataset generate(const GeneratorSpec& spec, long count, Split split = Split::train);

// Fit z-score statistics over all frames and samples of a training split.
Normalization fit_normalization(const Dataset& train);

// Apply stats (from the training split) to any split.
Dataset normalize(const Dataset& ds, const Normalization& stats);
// Convenience for the training split itself: fit then apply.
Dataset normalize(const Dataset& ds);
Dataset denormalize(const Dataset& ds);

// The paper's split sizes: 10000 train / 256 test, normalized with
// training-split statistics.
std::pair<Dataset, Dataset> paper_splits(const GeneratorSpec& spec);

// Directory layout: meta.json + train.csv + test.csv.
void save_dataset_dir(const std::string& dir, const Dataset& train,
                      const Dataset& test);
std::pair<Dataset, Dataset> load_dataset_dir(const std::string& dir);

}  // namespace freqdiff
