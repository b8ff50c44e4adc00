#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freqdiff/sampler.hpp"
#include "freqdiff/schedule.hpp"
#include "freqdiff/spectral.hpp"
#include "freqdiff/trajectory.hpp"

namespace freqdiff {

// Linear, DC-gain-1 low-pass stand-in for a downstream trajectory-tracking
// controller. first_order is the one-pole smoother y[0] = x[0],
// y[t] = y[t-1] + kappa (x[t] - y[t-1]); dct_lowpass keeps the first
// `cutoff` DCT modes and zeroes the rest. Both run per action dimension.
struct ExecFilter {
  enum class Kind { first_order, dct_lowpass };
  Kind kind = Kind::first_order;
  double kappa = 0.5;  // first_order: gain in (0,1]
  int cutoff = 6;      // dct_lowpass: retained leading modes, >= 1
};

Trajectory exec_apply(const Trajectory& x, const ExecFilter& filter);

// Power gain of the filter on each unit DCT basis mode, measured by actually
// filtering the basis rows. gains[0] == 1 exactly (DC); the smoother's gains
// decrease strictly with mode index.
std::vector<double> filter_mode_gains(const ExecFilter& filter, int n);

// One evaluation row: decoded-vs-pseudo-truth error split into orthogonal
// DCT bands, in raw action space and after the execution filter. The split
// keeps the DC mode in the low band, so low + high == action to 1e-9.
struct ErrorBreakdown {
  std::string dataset;
  int K = 0;
  double action_mse = 0.0;
  double low_band_mse = 0.0;
  double high_band_mse = 0.0;
  double exec_mse = 0.0;
  double exec_low_mse = 0.0;
  double exec_high_mse = 0.0;
};

ErrorBreakdown error_breakdown(const Trajectory& decoded,
                               const Trajectory& pseudo_truth,
                               const BandMask& mask, const ExecFilter& filter);

// Averages error_breakdown across all test indices for every decoded step
// count, against each run's own decode at K = grid size (the pseudo-truth,
// which must be among the ks). Rows come back sorted by K ascending; the
// pseudo-truth row is exactly zero. Per-index work may fan out over threads;
// aggregation order is fixed by index, so results are thread-invariant.
std::vector<ErrorBreakdown> evaluate_runs(const std::vector<SampleRun>& runs,
                                          const BandMask& mask,
                                          const ExecFilter& filter,
                                          const std::string& dataset,
                                          int threads = 1);

// The step-count curve: per K, mean MSE of the decode against the run's
// pseudo-truth and against the clean test trajectory paired by index. The
// pseudo-truth column falls to zero at full steps; the clean column flattens
// once decoding converges, which is the saturation diagnostic.
struct NfePoint {
  std::string dataset;
  int K = 0;
  double vs_pseudo_truth = 0.0;
  double vs_clean = 0.0;
};

std::vector<NfePoint> mse_vs_nfe(const std::vector<SampleRun>& runs,
                                 const std::vector<Trajectory>& clean_test,
                                 const std::string& dataset);

// Corollary bound against the measured optimal-denoiser error. Per K the
// empirical column corrupts fresh prior draws at the last grid level and
// applies the analytic posterior mean once through the sampler's own step;
// its expectation is the posterior variance trace, which the bound dominates.
// Values are relative: per-frame MSE divided by Tr(Sigma)/n. Pass lambda in
// the standardized scale (trace = n) to match reported MSEs.
struct BoundRow {
  std::string dataset;
  int K = 0;
  double corollary_bound = 0.0;
  double empirical_relative_mse = 0.0;
  double empirical_se = 0.0;
};

std::vector<BoundRow> bound_comparison(const std::vector<double>& lambda,
                                       const NoiseSchedule& schedule,
                                       const std::vector<int>& ks, long trials,
                                       std::uint64_t seed,
                                       const std::string& dataset);

void write_table6_csv(const std::string& path,
                      const std::vector<ErrorBreakdown>& rows);
void write_mse_vs_nfe_csv(const std::string& path,
                          const std::vector<NfePoint>& rows);
void write_bound_comparison_csv(const std::string& path,
                                const std::vector<BoundRow>& rows);

// One randomized check of the per-band denoiser error bounds: a random
// diagonal prior, a random point on the alpha^2 + sigma^2 = 1 circle, and a
// random low-band size, verified by Monte Carlo against the analytic
// posterior-variance MSE and the band bounds. A trial that trips a 3-sigma
// check is retested twice on fresh, larger sample sets and counts as a
// violation only if the same check fails in both retests; with ~4 checks per
// trial this keeps the false-violation rate negligible over thousands of
// trials while a genuinely broken bound still fails every retest.
struct TheoryTrial {
  double alpha = 0.0;
  double sigma = 0.0;
  int m = 0;
  double eta = 0.0;
  double e_L_emp = 0.0;
  double e_L_bound = 0.0;
  double e_H_emp = 0.0;
  double e_H_bound = 0.0;
  double e_emp = 0.0;
  double e_bound = 0.0;
  double ratio = 0.0;   // e_emp / e_bound
  double z_mse = 0.0;   // (empirical - analytic) / se
  bool violation = false;
};

struct TheorySuiteReport {
  std::vector<TheoryTrial> trials;
  long violations = 0;
  double max_abs_z = 0.0;
};

TheorySuiteReport run_theory_suite(int n, long trials, long samples,
                                   std::uint64_t seed);
void write_theory_suite_csv(const std::string& path,
                            const std::vector<TheoryTrial>& rows);

// A decoded-run directory: one trajectory CSV per (test index, step count)
// named trajIIII_KKKK.csv, plus manifest.json recording dataset, model,
// schedule, seeds, per-index terminal-noise hashes, and a content hash of
// every file. Loading re-derives each terminal noise from the stored seed and
// refuses manifests whose hashes no longer match the bytes on disk.
struct RunMeta {
  std::string dataset_kind;
  std::string dataset_dir;
  int n = 0;
  int d = 0;
  long count = 0;
  std::string model_path;
  std::string arch;
  std::string parameterization;  // "epsilon" | "x0"
  std::string schedule_kind;
  int num_train_steps = 0;
  double beta_min = 0.0;  // linear_beta only; 0 for cosine
  double beta_max = 0.0;
  std::vector<int> ks;
  std::uint64_t seed = 0;
  std::string cond_mode;
};

struct LoadedRun {
  std::vector<SampleRun> runs;
  RunMeta meta;
};

void save_run_dir(const std::string& dir, const std::vector<SampleRun>& runs,
                  const RunMeta& meta);
LoadedRun load_run_dir(const std::string& dir);

std::uint64_t hash_file(const std::string& path);

}  // namespace freqdiff
