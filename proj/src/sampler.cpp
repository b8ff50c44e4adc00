#include "freqdiff/sampler.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "freqdiff/rng.hpp"
#include "freqdiff/spectral.hpp"

namespace freqdiff {

namespace {

constexpr int kChainGroup = 32;

void check_traj_shapes(const Trajectory& a, const Trajectory& b,
                       const char* what) {
  require(a.n == b.n && a.d == b.d, std::string(what) + ": shape mismatch");
}

// runs fn(group_index) over ceil(count/kChainGroup) fixed groups; group
// composition never depends on the thread count
template <typename Fn>
void over_groups(std::size_t count, int threads, Fn fn) {
  std::size_t n_groups = (count + kChainGroup - 1) / kChainGroup;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t g = next.fetch_add(1);
      if (g >= n_groups) return;
      fn(g);
    }
  };
  int use = std::min<int>(std::max(threads, 1),
                          static_cast<int>(n_groups));
  if (use <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(use));
  for (int t = 0; t < use; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

std::vector<std::vector<double>> slice_cond(
    const std::vector<std::vector<double>>* cond, std::size_t lo,
    std::size_t hi) {
  if (!cond) return {};
  return {cond->begin() + static_cast<std::ptrdiff_t>(lo),
          cond->begin() + static_cast<std::ptrdiff_t>(hi)};
}

}  // namespace

Trajectory forward_corrupt(const Trajectory& x0, const NoiseSchedule& schedule,
                           int t_index, const Trajectory& noise) {
  check_traj_shapes(x0, noise, "forward_corrupt");
  require(t_index >= 0 && t_index < schedule.num_train_steps,
          "forward_corrupt: timestep out of range");
  double a = schedule.alpha(t_index), s = schedule.sigma(t_index);
  Trajectory out(x0.n, x0.d);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a * x0.data[i] + s * noise.data[i];
  return out;
}

Trajectory ddim_step(const Trajectory& x_t, int t_from, int t_to,
                     const Trajectory& model_output,
                     Denoiser::Output parameterization,
                     const NoiseSchedule& schedule) {
  check_traj_shapes(x_t, model_output, "ddim_step");
  require(t_from > t_to && t_to >= -1, "ddim_step: need t_from > t_to >= -1");
  require(t_from < schedule.num_train_steps,
          "ddim_step: t_from out of range");

  double a_from = schedule.alpha(t_from), s_from = schedule.sigma(t_from);
  Trajectory x0hat(x_t.n, x_t.d);
  if (parameterization == Denoiser::Output::epsilon) {
    for (std::size_t i = 0; i < x0hat.data.size(); ++i)
      x0hat.data[i] = (x_t.data[i] - s_from * model_output.data[i]) / a_from;
  } else {
    x0hat.data = model_output.data;
  }
  if (t_to == -1) return x0hat;

  require(s_from > 0.0,
          "ddim_step: sigma is zero at a non-terminal step; the implied "
          "noise direction divides by it");
  double a_to = schedule.alpha(t_to), s_to = schedule.sigma(t_to);
  Trajectory out(x_t.n, x_t.d);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    double dir = (x_t.data[i] - a_from * x0hat.data[i]) / s_from;
    out.data[i] = a_to * x0hat.data[i] + s_to * dir;
  }
  return out;
}

std::vector<Trajectory> sample_batch(
    Denoiser& model, const NoiseSchedule& schedule, int K,
    const std::vector<Trajectory>& terminal_noise,
    const std::vector<std::vector<double>>* cond, int threads) {
  require(K >= 1, "sample: K must be >= 1");
  require(!terminal_noise.empty(), "sample: no chains");
  for (const auto& w : terminal_noise)
    check_traj_shapes(w, terminal_noise[0], "sample");
  require(terminal_noise[0].d == model.action_dim(),
          "sample: action dim mismatch");
  require(!cond || cond->size() == terminal_noise.size(),
          "sample: one cond row per chain required");

  StepGrid grid = make_grid(schedule, K);
  std::vector<Trajectory> out(terminal_noise.size());
  over_groups(terminal_noise.size(), threads, [&](std::size_t g) {
    std::size_t lo = g * kChainGroup;
    std::size_t hi = std::min(terminal_noise.size(), lo + kChainGroup);
    std::vector<Trajectory> states(
        terminal_noise.begin() + static_cast<std::ptrdiff_t>(lo),
        terminal_noise.begin() + static_cast<std::ptrdiff_t>(hi));
    auto group_cond = slice_cond(cond, lo, hi);
    for (int j = 0; j < grid.steps(); ++j) {
      int t_from = grid.timesteps[static_cast<std::size_t>(j)];
      int t_to = j + 1 < grid.steps()
                     ? grid.timesteps[static_cast<std::size_t>(j) + 1]
                     : -1;
      std::vector<int> ts(states.size(), t_from);
      auto preds = model.predict_batch(states, ts,
                                       cond ? &group_cond : nullptr);
      for (std::size_t i = 0; i < states.size(); ++i)
        states[i] = ddim_step(states[i], t_from, t_to, preds[i],
                              model.output_kind(), schedule);
    }
    for (std::size_t i = 0; i < states.size(); ++i)
      out[lo + i] = std::move(states[i]);
  });
  return out;
}

Trajectory sample(Denoiser& model, const NoiseSchedule& schedule, int K,
                  const Trajectory& terminal_noise,
                  const std::vector<double>* cond) {
  std::vector<Trajectory> one{terminal_noise};
  if (cond) {
    std::vector<std::vector<double>> rows{*cond};
    return sample_batch(model, schedule, K, one, &rows, 1)[0];
  }
  return sample_batch(model, schedule, K, one, nullptr, 1)[0];
}

std::vector<Trajectory> ddpm_sample_batch(
    Denoiser& model, const NoiseSchedule& schedule, int n, long count,
    std::uint64_t seed, const std::vector<std::vector<double>>* cond,
    int threads) {
  require(n >= 1 && count >= 1, "ddpm: need positive horizon and count");
  require(schedule.num_train_steps >= 1, "ddpm: empty schedule");
  require(!cond || cond->size() == static_cast<std::size_t>(count),
          "ddpm: one cond row per chain required");
  int d = model.action_dim();

  std::vector<Trajectory> out(static_cast<std::size_t>(count));
  over_groups(static_cast<std::size_t>(count), threads, [&](std::size_t g) {
    std::size_t lo = g * kChainGroup;
    std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(count),
                                           lo + kChainGroup);
    std::size_t b_n = hi - lo;
    auto group_cond = slice_cond(cond, lo, hi);

    // every chain owns a stream; draw order is terminal noise, then one
    // fresh draw per level in descending order
    std::vector<Rng> rngs;
    rngs.reserve(b_n);
    std::vector<Trajectory> states;
    states.reserve(b_n);
    for (std::size_t i = 0; i < b_n; ++i) {
      rngs.emplace_back(derive_seed(seed, stream_tag("ddpm-chain"),
                                    static_cast<std::uint64_t>(lo + i)));
      Trajectory w(n, d);
      for (auto& v : w.data) v = rngs.back().next_gaussian();
      states.push_back(std::move(w));
    }

    for (int t = schedule.num_train_steps - 1; t >= 0; --t) {
      std::vector<int> ts(b_n, t);
      auto preds = model.predict_batch(states, ts,
                                       cond ? &group_cond : nullptr);
      double abar = schedule.alpha_bar[static_cast<std::size_t>(t)];
      double abar_prev =
          t > 0 ? schedule.alpha_bar[static_cast<std::size_t>(t) - 1] : 1.0;
      require(abar < 1.0, "ddpm: degenerate level with alpha_bar = 1");
      double alpha_t = abar / abar_prev;
      double beta_t = 1.0 - alpha_t;
      double c0 = std::sqrt(abar_prev) * beta_t / (1.0 - abar);
      double ct = std::sqrt(alpha_t) * (1.0 - abar_prev) / (1.0 - abar);
      double sd =
          t > 0 ? std::sqrt(beta_t * (1.0 - abar_prev) / (1.0 - abar)) : 0.0;

      double a = schedule.alpha(t), s = schedule.sigma(t);
      for (std::size_t i = 0; i < b_n; ++i) {
        Trajectory& x = states[i];
        const Trajectory& p = preds[i];
        for (std::size_t e = 0; e < x.data.size(); ++e) {
          double x0hat = model.output_kind() == Denoiser::Output::epsilon
                             ? (x.data[e] - s * p.data[e]) / a
                             : p.data[e];
          double mean = c0 * x0hat + ct * x.data[e];
          x.data[e] = t > 0 ? mean + sd * rngs[i].next_gaussian() : mean;
        }
      }
    }
    for (std::size_t i = 0; i < b_n; ++i) out[lo + i] = std::move(states[i]);
  });
  return out;
}

Trajectory ddpm_sample(Denoiser& model, const NoiseSchedule& schedule, int n,
                       std::uint64_t seed, const std::vector<double>* cond) {
  if (cond) {
    std::vector<std::vector<double>> rows{*cond};
    return ddpm_sample_batch(model, schedule, n, 1, seed, &rows, 1)[0];
  }
  return ddpm_sample_batch(model, schedule, n, 1, seed, nullptr, 1)[0];
}

Trajectory ablation_terminal_noise(std::uint64_t seed, long index, int n,
                                   int d) {
  Rng rng(derive_seed(seed, stream_tag("ablation-noise"),
                      static_cast<std::uint64_t>(index)));
  Trajectory w(n, d);
  for (auto& v : w.data) v = rng.next_gaussian();
  return w;
}

std::vector<SampleRun> run_step_ablation(Denoiser& model,
                                         const NoiseSchedule& schedule,
                                         const std::vector<Trajectory>& test_set,
                                         CondMode cond_mode,
                                         const AblationConfig& cfg) {
  require(!test_set.empty(), "ablation: empty test set");
  require(!cfg.ks.empty(), "ablation: no step counts requested");
  for (int k : cfg.ks) require(k >= 1, "ablation: K must be >= 1");
  int n = test_set[0].n, d = test_set[0].d;
  for (const auto& tr : test_set)
    check_traj_shapes(tr, test_set[0], "ablation");

  std::vector<Trajectory> noises;
  noises.reserve(test_set.size());
  for (std::size_t i = 0; i < test_set.size(); ++i)
    noises.push_back(
        ablation_terminal_noise(cfg.seed, static_cast<long>(i), n, d));

  std::vector<std::vector<double>> cond_rows;
  bool use_cond = cond_mode == CondMode::first_frame && model.cond_dim() > 0;
  if (use_cond)
    for (const auto& tr : test_set)
      cond_rows.push_back(make_cond(cond_mode, tr, model.cond_dim()));

  std::vector<SampleRun> runs(test_set.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    runs[i].terminal_noise = noises[i];
    runs[i].grid = make_grid(schedule, schedule.num_train_steps);
    runs[i].parameterization = model.output_kind();
    runs[i].ks = cfg.ks;
    runs[i].outputs.reserve(cfg.ks.size());
    runs[i].noise_hash = trajectories_hash({noises[i]});
  }
  for (int k : cfg.ks) {
    auto decoded = sample_batch(model, schedule, k, noises,
                                use_cond ? &cond_rows : nullptr, cfg.threads);
    for (std::size_t i = 0; i < runs.size(); ++i)
      runs[i].outputs.push_back(std::move(decoded[i]));
  }
  return runs;
}

OracleDenoiser::OracleDenoiser(GaussianFreqModel prior,
                               const NoiseSchedule& schedule, int action_dim)
    : prior_(std::move(prior)), schedule_(schedule), d_(action_dim) {
  require(prior_.n >= 1, "oracle: empty prior");
  require(d_ >= 1, "oracle: action dim must be positive");
}

std::vector<Trajectory> OracleDenoiser::predict_batch(
    const std::vector<Trajectory>& x_t, const std::vector<int>& ts,
    const std::vector<std::vector<double>>*) {
  require(!x_t.empty(), "oracle: empty batch");
  require(ts.size() == x_t.size(), "oracle: one timestep per trajectory");
  std::vector<Trajectory> out;
  out.reserve(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const Trajectory& x = x_t[i];
    require(x.n == prior_.n && x.d == d_, "oracle: trajectory shape mismatch");
    int t = ts[i];
    require(t >= 0 && t < schedule_.num_train_steps,
            "oracle: timestep out of range");
    double a = schedule_.alpha(t), s = schedule_.sigma(t);

    Spectrum y = dct_raw_forward(x);
    std::vector<double> col(static_cast<std::size_t>(x.n));
    for (int dim = 0; dim < x.d; ++dim) {
      for (int k = 0; k < x.n; ++k)
        col[static_cast<std::size_t>(k)] =
            y.coeffs[static_cast<std::size_t>(k) * x.d + dim];
      std::vector<double> m = posterior_mean(prior_, col, a, s);
      for (int k = 0; k < x.n; ++k)
        y.coeffs[static_cast<std::size_t>(k) * x.d + dim] =
            m[static_cast<std::size_t>(k)];
    }
    out.push_back(dct_inverse(y));
  }
  return out;
}

}  // namespace freqdiff
