#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "freqdiff/autodiff.hpp"
#include "freqdiff/schedule.hpp"
#include "freqdiff/synthdata.hpp"
#include "freqdiff/trajectory.hpp"

namespace freqdiff {

// sin/cos timestep features, length dim (even, >= 4), base 10000
std::vector<double> sinusoidal_embedding(double t, int dim);

// Synthetic data has no observation stream; conditioning is either absent
// (zero vector) or the clean trajectory's first frame zero-padded to
// cond_dim, which exercises the modulation path nontrivially.
enum class CondMode { none, first_frame };
const char* cond_mode_name(CondMode m);
CondMode cond_mode_from_name(const std::string& name);
std::vector<double> make_cond(CondMode mode, const Trajectory& x0, int cond_dim);

// What a reverse sampler needs from a trained (or analytic) denoiser.
class Denoiser {
 public:
  enum class Output { epsilon, x0 };

  virtual ~Denoiser() = default;
  virtual Output output_kind() const = 0;
  virtual int action_dim() const = 0;
  // width of the conditioning rows this model consumes; 0 means it ignores
  // conditioning entirely
  virtual int cond_dim() const = 0;
  // cond rows may be null (interpreted as zeros); ts has one entry per batch
  // element. Weights are read-only here, so callers may fan batches out over
  // threads.
  virtual std::vector<Trajectory> predict_batch(
      const std::vector<Trajectory>& x_t, const std::vector<int>& ts,
      const std::vector<std::vector<double>>* cond) = 0;
};

// Dilated residual 1d CNN predicting the added noise. Data layout inside the
// graph is channel-major [d, B, n].
struct CnnDenoiserConfig {
  int action_dim = 4;
  int hidden = 64;
  int blocks = 8;
  std::vector<int> dilations = {1, 2, 4, 8};  // cycled across blocks
  int time_embed_dim = 128;
  int kernel = 3;
};

class CnnDenoiser : public Denoiser {
 public:
  CnnDenoiser(const CnnDenoiserConfig& cfg, std::uint64_t init_seed);

  Output output_kind() const override { return Output::epsilon; }
  int action_dim() const override { return cfg_.action_dim; }
  int cond_dim() const override { return 0; }
  const CnnDenoiserConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // x: [d, B, n] with one timestep index per sample; bind_params makes the
  // graph differentiate into this model's parameters.
  Var forward(Graph& g, Var x, const std::vector<int>& ts, bool bind_params);
  Trajectory predict(const Trajectory& x_t, int t_index);
  std::vector<Trajectory> predict_batch(
      const std::vector<Trajectory>& x_t, const std::vector<int>& ts,
      const std::vector<std::vector<double>>* cond) override;

  nlohmann::json hyper() const;
  void save(const std::string& path) const;
  static CnnDenoiser load(const std::string& path);

 private:
  CnnDenoiserConfig cfg_;
  ParamSet params_;
};

// Token mixer predicting the clean trajectory. Layout is frame-major
// [B, n, token]; each block mixes over time, then channels, then applies a
// gated, condition-driven modulation whose output head starts at zero so the
// block begins as identity-plus-mixing.
struct DimDecoderConfig {
  int horizon = 64;
  int action_dim = 4;
  int token_dim = 128;
  int depth = 6;
  int mlp_ratio = 4;
  int cond_dim = 64;
  int time_embed_dim = 64;
};

class DimDecoder : public Denoiser {
 public:
  DimDecoder(const DimDecoderConfig& cfg, std::uint64_t init_seed);

  Output output_kind() const override { return Output::x0; }
  int action_dim() const override { return cfg_.action_dim; }
  int cond_dim() const override { return cfg_.cond_dim; }
  const DimDecoderConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // x: [B, n, d]; cond: [B, cond_dim]; one timestep index per sample
  Var forward(Graph& g, Var x, const std::vector<int>& ts, Var cond,
              bool bind_params);
  Trajectory predict(const Trajectory& x_t, int t_index,
                     const std::vector<double>* cond);
  std::vector<Trajectory> predict_batch(
      const std::vector<Trajectory>& x_t, const std::vector<int>& ts,
      const std::vector<std::vector<double>>* cond) override;

  nlohmann::json hyper() const;
  void save(const std::string& path) const;
  static DimDecoder load(const std::string& path);

 private:
  DimDecoderConfig cfg_;
  ParamSet params_;
};

// Draws one uniform timestep per sample and fresh unit noise per element,
// corrupts, and returns the mean squared prediction error (against the noise
// for the CNN, against the clean trajectory for the mixer). Pure evaluation;
// gradients are not touched.
double training_loss(CnnDenoiser& model, const std::vector<Trajectory>& batch,
                     const NoiseSchedule& schedule, std::uint64_t seed);
double training_loss(DimDecoder& model, const std::vector<Trajectory>& batch,
                     const NoiseSchedule& schedule, std::uint64_t seed,
                     CondMode cond_mode);

struct TrainConfig {
  int epochs = 60;
  int batch_size = 256;
  int chunk_size = 16;  // per-graph micro-batch; fixed so results don't
                        // depend on the thread count
  int threads = 1;
  AdamConfig adam;
  std::uint64_t seed = 0;
  CondMode cond_mode = CondMode::none;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean training loss per epoch
  double final_loss = 0.0;
};

// Minibatch training with chunked data-parallel gradients merged in chunk
// order, so any --threads value yields bitwise-identical parameters.
TrainReport train_model(CnnDenoiser& model, const Dataset& data,
                        const NoiseSchedule& schedule, const TrainConfig& cfg);
TrainReport train_model(DimDecoder& model, const Dataset& data,
                        const NoiseSchedule& schedule, const TrainConfig& cfg);

// Reads the sidecar's arch tag and loads the matching model.
enum class ArchKind { cnn, dim };
const char* arch_name(ArchKind k);
ArchKind arch_from_name(const std::string& name);
std::unique_ptr<Denoiser> load_denoiser(const std::string& path);

}  // namespace freqdiff
