#pragma once

#include <cstdint>
#include <vector>

#include "freqdiff/models.hpp"
#include "freqdiff/oracle.hpp"
#include "freqdiff/schedule.hpp"
#include "freqdiff/trajectory.hpp"

namespace freqdiff {

// x_t = alpha_t x0 + sigma_t noise, with the schedule's discrete levels.
Trajectory forward_corrupt(const Trajectory& x0, const NoiseSchedule& schedule,
                           int t_index, const Trajectory& noise);

// One deterministic reverse transition. The prediction is first converted to
// x_hat_0 (directly, or (x_t - sigma eps_hat)/alpha for a noise prediction);
// t_to = -1 is the terminal sentinel returning x_hat_0, otherwise
// x_to = alpha_to x_hat_0 + sigma_to (x_t - alpha_t x_hat_0) / sigma_t.
Trajectory ddim_step(const Trajectory& x_t, int t_from, int t_to,
                     const Trajectory& model_output,
                     Denoiser::Output parameterization,
                     const NoiseSchedule& schedule);

// K deterministic reverse updates along make_grid(schedule, K), from the
// highest-noise state down to the clean output. K = num_train_steps with a
// fixed terminal noise defines the pseudo-truth reference.
Trajectory sample(Denoiser& model, const NoiseSchedule& schedule, int K,
                  const Trajectory& terminal_noise,
                  const std::vector<double>* cond = nullptr);

// One chain per trajectory, evaluated batch-wise per grid level. Work splits
// at fixed 32-chain groups, so any thread count produces identical bits.
std::vector<Trajectory> sample_batch(
    Denoiser& model, const NoiseSchedule& schedule, int K,
    const std::vector<Trajectory>& terminal_noise,
    const std::vector<std::vector<double>>* cond = nullptr, int threads = 1);

// Ancestral sampling with fresh per-step noise; the final transition has
// posterior variance zero and adds none. Chain i draws from its own stream
// derived from (seed, i), so results are independent of count and batching.
Trajectory ddpm_sample(Denoiser& model, const NoiseSchedule& schedule, int n,
                       std::uint64_t seed,
                       const std::vector<double>* cond = nullptr);
std::vector<Trajectory> ddpm_sample_batch(
    Denoiser& model, const NoiseSchedule& schedule, int n, long count,
    std::uint64_t seed, const std::vector<std::vector<double>>* cond = nullptr,
    int threads = 1);

// The step-count ablation record for one test trajectory: every K decodes
// from the same stored terminal noise.
struct SampleRun {
  Trajectory terminal_noise;
  StepGrid grid;  // reference grid at K = num_train_steps
  Denoiser::Output parameterization = Denoiser::Output::epsilon;
  std::vector<int> ks;
  std::vector<Trajectory> outputs;  // outputs[i] decoded with ks[i] steps
  std::uint64_t noise_hash = 0;
};

// The terminal noise assigned to test index i; exposed so independent runs
// (and tests) can confirm the harness reuses one draw across all K.
Trajectory ablation_terminal_noise(std::uint64_t seed, long index, int n,
                                   int d);

struct AblationConfig {
  std::vector<int> ks;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Decodes every test trajectory at every requested K, sharing the per-index
// terminal noise across K. Conditioning rows are built from the clean test
// trajectories when the mode asks for them and the model consumes them.
std::vector<SampleRun> run_step_ablation(Denoiser& model,
                                         const NoiseSchedule& schedule,
                                         const std::vector<Trajectory>& test_set,
                                         CondMode cond_mode,
                                         const AblationConfig& cfg);

// Analytic MMSE denoiser: transports each action dimension to the DCT
// domain, applies the Gaussian posterior mean, and transports back. Plugging
// it into the sampler ties the error theory to the sampling code path.
class OracleDenoiser : public Denoiser {
 public:
  OracleDenoiser(GaussianFreqModel prior, const NoiseSchedule& schedule,
                 int action_dim);

  Output output_kind() const override { return Output::x0; }
  int action_dim() const override { return d_; }
  int cond_dim() const override { return 0; }
  std::vector<Trajectory> predict_batch(
      const std::vector<Trajectory>& x_t, const std::vector<int>& ts,
      const std::vector<std::vector<double>>* cond) override;

 private:
  GaussianFreqModel prior_;
  NoiseSchedule schedule_;
  int d_;
};

}  // namespace freqdiff
