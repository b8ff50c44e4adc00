#include "freqdiff/models.hpp"

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <mutex>
#include <thread>

#include "freqdiff/rng.hpp"

namespace freqdiff {

std::vector<double> sinusoidal_embedding(double t, int dim) {
  require(dim >= 4 && dim % 2 == 0, "embedding dim must be even and >= 4");
  int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  double step = std::log(10000.0) / (half - 1);
  for (int i = 0; i < half; ++i) {
    double angle = t * std::exp(-step * i);
    out[static_cast<std::size_t>(i)] = std::sin(angle);
    out[static_cast<std::size_t>(half + i)] = std::cos(angle);
  }
  return out;
}

const char* cond_mode_name(CondMode m) {
  return m == CondMode::none ? "none" : "first_frame";
}

CondMode cond_mode_from_name(const std::string& name) {
  if (name == "none") return CondMode::none;
  if (name == "first_frame") return CondMode::first_frame;
  throw invalid_input("unknown conditioning mode: " + name);
}

std::vector<double> make_cond(CondMode mode, const Trajectory& x0,
                              int cond_dim) {
  require(cond_dim >= 1, "cond_dim must be positive");
  std::vector<double> c(static_cast<std::size_t>(cond_dim), 0.0);
  if (mode == CondMode::first_frame) {
    require(x0.d <= cond_dim,
            "action dim exceeds cond_dim; cannot embed first frame");
    require(x0.n >= 1, "empty trajectory");
    for (int a = 0; a < x0.d; ++a)
      c[static_cast<std::size_t>(a)] = x0.at(0, a);
  }
  return c;
}

namespace {

void init_uniform_fan_in(Tensor& t, int fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.val) v = bound * (2.0 * rng.next_double() - 1.0);
}

// one timestep-feature row per batch element
std::vector<double> embed_rows(const std::vector<int>& ts, int dim) {
  std::vector<double> rows(ts.size() * static_cast<std::size_t>(dim));
  for (std::size_t b = 0; b < ts.size(); ++b) {
    auto e = sinusoidal_embedding(static_cast<double>(ts[b]), dim);
    std::copy(e.begin(), e.end(),
              rows.begin() + static_cast<std::ptrdiff_t>(b * e.size()));
  }
  return rows;
}

void check_batch_shapes(const std::vector<Trajectory>& batch) {
  require(!batch.empty(), "batch must be non-empty");
  for (const auto& tr : batch) {
    require(tr.n == batch[0].n && tr.d == batch[0].d,
            "batch trajectories must share one shape");
    require(tr.finite(), "batch contains non-finite values");
  }
}

// [d, B, n] channel-major packing for the convolutional model
std::vector<double> pack_cbt(const std::vector<Trajectory>& batch) {
  int b_n = static_cast<int>(batch.size());
  int n = batch[0].n, d = batch[0].d;
  std::vector<double> buf(static_cast<std::size_t>(d) * b_n * n);
  for (int c = 0; c < d; ++c)
    for (int b = 0; b < b_n; ++b)
      for (int t = 0; t < n; ++t)
        buf[(static_cast<std::size_t>(c) * b_n + b) * n + t] =
            batch[static_cast<std::size_t>(b)].at(t, c);
  return buf;
}

Trajectory unpack_cbt(const std::vector<double>& buf, int b, int b_n, int n,
                      int d) {
  Trajectory tr(n, d);
  for (int c = 0; c < d; ++c)
    for (int t = 0; t < n; ++t)
      tr.data[static_cast<std::size_t>(t) * d + c] =
          buf[(static_cast<std::size_t>(c) * b_n + b) * n + t];
  return tr;
}

// [B, n, d] frame-major packing for the mixer
std::vector<double> pack_bnd(const std::vector<Trajectory>& batch) {
  int n = batch[0].n, d = batch[0].d;
  std::vector<double> buf;
  buf.reserve(batch.size() * static_cast<std::size_t>(n) * d);
  for (const auto& tr : batch)
    buf.insert(buf.end(), tr.data.begin(), tr.data.end());
  return buf;
}

Trajectory unpack_bnd(const std::vector<double>& buf, int b, int n, int d) {
  Trajectory tr(n, d);
  std::size_t off = static_cast<std::size_t>(b) * n * d;
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(off),
            buf.begin() + static_cast<std::ptrdiff_t>(off + tr.data.size()),
            tr.data.begin());
  return tr;
}

std::vector<double> pack_cond_rows(const std::vector<std::vector<double>>* cond,
                                   std::size_t b_n, int cond_dim) {
  std::vector<double> rows(b_n * static_cast<std::size_t>(cond_dim), 0.0);
  if (cond) {
    require(cond->size() == b_n, "cond rows must match batch size");
    for (std::size_t b = 0; b < b_n; ++b) {
      require((*cond)[b].size() == static_cast<std::size_t>(cond_dim),
              "cond row has wrong length");
      std::copy((*cond)[b].begin(), (*cond)[b].end(),
                rows.begin() + static_cast<std::ptrdiff_t>(
                                   b * static_cast<std::size_t>(cond_dim)));
    }
  }
  return rows;
}

constexpr int kInferenceChunk = 32;

}  // namespace

CnnDenoiser::CnnDenoiser(const CnnDenoiserConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg) {
  require(cfg.action_dim >= 1 && cfg.hidden >= 1 && cfg.blocks >= 1,
          "cnn config dims must be positive");
  require(cfg.kernel >= 1 && cfg.kernel % 2 == 1, "cnn kernel must be odd");
  require(cfg.time_embed_dim >= 4 && cfg.time_embed_dim % 2 == 0,
          "cnn time_embed_dim must be even and >= 4");
  require(!cfg.dilations.empty(), "cnn needs at least one dilation");
  for (int d : cfg.dilations) require(d >= 1, "dilations must be positive");

  params_.add("in.w", {cfg.hidden, cfg.action_dim, 1});
  params_.add("in.b", {cfg.hidden});
  for (int i = 0; i < cfg.blocks; ++i) {
    std::string p = "block" + std::to_string(i) + ".";
    params_.add(p + "conv1.w", {cfg.hidden, cfg.hidden, cfg.kernel});
    params_.add(p + "conv1.b", {cfg.hidden});
    params_.add(p + "temb.w", {cfg.time_embed_dim, cfg.hidden});
    params_.add(p + "temb.b", {cfg.hidden});
    params_.add(p + "conv2.w", {cfg.hidden, cfg.hidden, 1});
    params_.add(p + "conv2.b", {cfg.hidden});
  }
  params_.add("out.w", {cfg.action_dim, cfg.hidden, 1});
  params_.add("out.b", {cfg.action_dim});

  // fan-in of a conv tensor [Cout, Cin, k] is Cin*k; of a linear [In, Out]
  // it is In; a bias inherits the fan-in of the weight it follows
  Rng rng(derive_seed(init_seed, stream_tag("cnn-init")));
  int fan_in = 1;
  for (auto& [name, t] : params_.items) {
    if (t.shape.size() == 3)
      fan_in = t.shape[1] * t.shape[2];
    else if (t.shape.size() == 2)
      fan_in = t.shape[0];
    init_uniform_fan_in(t, fan_in, rng);
  }
}

Var CnnDenoiser::forward(Graph& g, Var x, const std::vector<int>& ts,
                         bool bind_params) {
  const auto& xs = g.shape(x);
  require(xs.size() == 3 && xs[0] == cfg_.action_dim,
          "cnn input must be [action_dim, batch, horizon], got " +
              shape_str(xs));
  require(static_cast<int>(ts.size()) == xs[1],
          "one timestep index per batch element required");

  auto p = [&](const std::string& name) -> Var {
    Tensor& t = params_.at(name);
    return bind_params ? g.param(t) : g.input(t);
  };

  std::vector<double> emb = embed_rows(ts, cfg_.time_embed_dim);
  Var temb = g.input({xs[1], cfg_.time_embed_dim}, emb.data());

  Var h = g.bias_add_first(g.conv1d(x, p("in.w"), 1), p("in.b"));
  for (int i = 0; i < cfg_.blocks; ++i) {
    std::string pre = "block" + std::to_string(i) + ".";
    int dil = cfg_.dilations[static_cast<std::size_t>(i) % cfg_.dilations.size()];
    Var h1 = g.bias_add_first(g.conv1d(h, p(pre + "conv1.w"), dil),
                              p(pre + "conv1.b"));
    Var tb = g.bias_add_last(g.matmul(temb, p(pre + "temb.w")),
                             p(pre + "temb.b"));     // [B, hidden]
    h1 = g.add_over_last(h1, g.transpose_last_two(tb));  // per (channel, sample)
    Var h2 = g.bias_add_first(g.conv1d(g.relu(h1), p(pre + "conv2.w"), 1),
                              p(pre + "conv2.b"));
    h = g.add(h, h2);
  }
  return g.bias_add_first(g.conv1d(h, p("out.w"), 1), p("out.b"));
}

Trajectory CnnDenoiser::predict(const Trajectory& x_t, int t_index) {
  std::vector<Trajectory> one{x_t};
  return predict_batch(one, {t_index}, nullptr)[0];
}

std::vector<Trajectory> CnnDenoiser::predict_batch(
    const std::vector<Trajectory>& x_t, const std::vector<int>& ts,
    const std::vector<std::vector<double>>*) {
  check_batch_shapes(x_t);
  require(x_t[0].d == cfg_.action_dim, "trajectory action dim mismatch");
  require(ts.size() == x_t.size(), "one timestep per trajectory required");
  int n = x_t[0].n;
  std::vector<Trajectory> out;
  out.reserve(x_t.size());
  for (std::size_t lo = 0; lo < x_t.size(); lo += kInferenceChunk) {
    std::size_t hi = std::min(x_t.size(), lo + kInferenceChunk);
    std::vector<Trajectory> chunk(x_t.begin() + static_cast<std::ptrdiff_t>(lo),
                                  x_t.begin() + static_cast<std::ptrdiff_t>(hi));
    std::vector<int> cts(ts.begin() + static_cast<std::ptrdiff_t>(lo),
                         ts.begin() + static_cast<std::ptrdiff_t>(hi));
    std::vector<double> buf = pack_cbt(chunk);
    Graph g;
    Var x = g.input({cfg_.action_dim, static_cast<int>(chunk.size()), n},
                    buf.data());
    Var y = forward(g, x, cts, false);
    const auto& yv = g.val(y);
    for (std::size_t b = 0; b < chunk.size(); ++b)
      out.push_back(unpack_cbt(yv, static_cast<int>(b),
                               static_cast<int>(chunk.size()), n,
                               cfg_.action_dim));
  }
  return out;
}

nlohmann::json CnnDenoiser::hyper() const {
  return {{"arch", "cnn"},
          {"action_dim", cfg_.action_dim},
          {"hidden", cfg_.hidden},
          {"blocks", cfg_.blocks},
          {"dilations", cfg_.dilations},
          {"time_embed_dim", cfg_.time_embed_dim},
          {"kernel", cfg_.kernel}};
}

void CnnDenoiser::save(const std::string& path) const {
  save_params(path, params_, hyper());
}

namespace {

template <typename T>
T json_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key))
    throw invalid_input(std::string("weights sidecar missing field: ") + key);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw invalid_input(std::string("weights sidecar field ") + key + ": " +
                        e.what());
  }
}

// moves loaded values into a freshly constructed model so the canonical
// parameter order and shapes are enforced by construction
void adopt_params(ParamSet& canonical, ParamSet&& loaded,
                  const std::string& path) {
  require(canonical.items.size() == loaded.items.size(),
          "weights file has wrong parameter count: " + path);
  for (auto& [name, t] : canonical.items) {
    Tensor& src = loaded.at(name);
    require(src.shape == t.shape, "parameter " + name + " has shape " +
                                      shape_str(src.shape) + ", expected " +
                                      shape_str(t.shape) + ": " + path);
    t.val = std::move(src.val);
  }
}

CnnDenoiserConfig cnn_config_from(const nlohmann::json& h) {
  CnnDenoiserConfig cfg;
  cfg.action_dim = json_field<int>(h, "action_dim");
  cfg.hidden = json_field<int>(h, "hidden");
  cfg.blocks = json_field<int>(h, "blocks");
  cfg.dilations = json_field<std::vector<int>>(h, "dilations");
  cfg.time_embed_dim = json_field<int>(h, "time_embed_dim");
  cfg.kernel = json_field<int>(h, "kernel");
  return cfg;
}

DimDecoderConfig dim_config_from(const nlohmann::json& h) {
  DimDecoderConfig cfg;
  cfg.horizon = json_field<int>(h, "horizon");
  cfg.action_dim = json_field<int>(h, "action_dim");
  cfg.token_dim = json_field<int>(h, "token_dim");
  cfg.depth = json_field<int>(h, "depth");
  cfg.mlp_ratio = json_field<int>(h, "mlp_ratio");
  cfg.cond_dim = json_field<int>(h, "cond_dim");
  cfg.time_embed_dim = json_field<int>(h, "time_embed_dim");
  return cfg;
}

}  // namespace

CnnDenoiser CnnDenoiser::load(const std::string& path) {
  ParamSet loaded;
  nlohmann::json h = load_params(path, loaded);
  if (json_field<std::string>(h, "arch") != "cnn")
    throw invalid_input("weights file is not a cnn checkpoint: " + path);
  CnnDenoiser model(cnn_config_from(h), 0);
  adopt_params(model.params_, std::move(loaded), path);
  return model;
}

DimDecoder::DimDecoder(const DimDecoderConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg) {
  require(cfg.horizon >= 1 && cfg.action_dim >= 1 && cfg.token_dim >= 1 &&
              cfg.depth >= 1 && cfg.mlp_ratio >= 1 && cfg.cond_dim >= 1,
          "mixer config dims must be positive");
  require(cfg.time_embed_dim >= 4 && cfg.time_embed_dim % 2 == 0,
          "mixer time_embed_dim must be even and >= 4");

  int n = cfg.horizon, tk = cfg.token_dim;
  int tn = cfg.mlp_ratio * n, tc = cfg.mlp_ratio * tk;
  params_.add("in.w", {cfg.action_dim, tk});
  params_.add("in.b", {tk});
  params_.add("time.w", {cfg.time_embed_dim, cfg.cond_dim});
  params_.add("time.b", {cfg.cond_dim});
  for (int i = 0; i < cfg.depth; ++i) {
    std::string p = "block" + std::to_string(i) + ".";
    params_.add(p + "t1.w", {n, tn});
    params_.add(p + "t1.b", {tn});
    params_.add(p + "t2.w", {tn, n});
    params_.add(p + "t2.b", {n});
    params_.add(p + "c1.w", {tk, tc});
    params_.add(p + "c1.b", {tc});
    params_.add(p + "c2.w", {tc, tk});
    params_.add(p + "c2.b", {tk});
    params_.add(p + "alpha.w", {cfg.cond_dim, tk});
    params_.add(p + "alpha.b", {tk});
    params_.add(p + "beta.w", {cfg.cond_dim, tk});
    params_.add(p + "beta.b", {tk});
    params_.add(p + "gate.w", {cfg.cond_dim, tk});
    params_.add(p + "gate.b", {tk});
  }
  params_.add("out.w", {tk, cfg.action_dim});
  params_.add("out.b", {cfg.action_dim});

  // modulation heads stay at zero so each block starts as exact identity in
  // its conditioning branch; everything else gets uniform fan-in noise, with
  // each bias inheriting the fan-in of the weight it follows
  Rng rng(derive_seed(init_seed, stream_tag("dim-init")));
  int fan_in = 1;
  for (auto& [name, t] : params_.items) {
    if (t.shape.size() == 2) fan_in = t.shape[0];
    if (name.find("alpha.") != std::string::npos ||
        name.find("beta.") != std::string::npos ||
        name.find("gate.") != std::string::npos)
      continue;
    init_uniform_fan_in(t, fan_in, rng);
  }
}

Var DimDecoder::forward(Graph& g, Var x, const std::vector<int>& ts, Var cond,
                        bool bind_params) {
  const auto& xs = g.shape(x);
  require(xs.size() == 3 && xs[1] == cfg_.horizon && xs[2] == cfg_.action_dim,
          "mixer input must be [batch, horizon, action_dim], got " +
              shape_str(xs));
  const auto& cs = g.shape(cond);
  require(cs.size() == 2 && cs[0] == xs[0] && cs[1] == cfg_.cond_dim,
          "cond must be [batch, cond_dim], got " + shape_str(cs));
  require(static_cast<int>(ts.size()) == xs[0],
          "one timestep index per batch element required");

  auto p = [&](const std::string& name) -> Var {
    Tensor& t = params_.at(name);
    return bind_params ? g.param(t) : g.input(t);
  };

  std::vector<double> emb = embed_rows(ts, cfg_.time_embed_dim);
  Var temb = g.input({xs[0], cfg_.time_embed_dim}, emb.data());
  Var c = g.add(cond,
                g.bias_add_last(g.matmul(temb, p("time.w")), p("time.b")));

  Var h = g.bias_add_last(g.matmul(x, p("in.w")), p("in.b"));  // [B, n, tk]
  for (int i = 0; i < cfg_.depth; ++i) {
    std::string pre = "block" + std::to_string(i) + ".";

    // mix over the time axis on transposed tokens
    Var ht = g.transpose_last_two(h);  // [B, tk, n]
    Var m = g.silu(g.bias_add_last(g.matmul(ht, p(pre + "t1.w")),
                                   p(pre + "t1.b")));
    m = g.bias_add_last(g.matmul(m, p(pre + "t2.w")), p(pre + "t2.b"));
    h = g.add(h, g.transpose_last_two(m));

    // mix over channels
    Var m2 = g.silu(g.bias_add_last(g.matmul(h, p(pre + "c1.w")),
                                    p(pre + "c1.b")));
    m2 = g.bias_add_last(g.matmul(m2, p(pre + "c2.w")), p(pre + "c2.b"));
    h = g.add(h, m2);

    // gated modulation from the condition path, broadcast over tokens
    Var alpha = g.bias_add_last(g.matmul(c, p(pre + "alpha.w")),
                                p(pre + "alpha.b"));
    Var beta = g.bias_add_last(g.matmul(c, p(pre + "beta.w")),
                               p(pre + "beta.b"));
    Var gate = g.sigmoid(g.bias_add_last(g.matmul(c, p(pre + "gate.w")),
                                         p(pre + "gate.b")));
    Var mod = g.add_over_mid(g.mul_over_mid(h, alpha), beta);
    h = g.add(g.mul_over_mid(mod, gate), h);
  }
  return g.bias_add_last(g.matmul(h, p("out.w")), p("out.b"));
}

Trajectory DimDecoder::predict(const Trajectory& x_t, int t_index,
                               const std::vector<double>* cond) {
  std::vector<Trajectory> one{x_t};
  if (cond) {
    std::vector<std::vector<double>> rows{*cond};
    return predict_batch(one, {t_index}, &rows)[0];
  }
  return predict_batch(one, {t_index}, nullptr)[0];
}

std::vector<Trajectory> DimDecoder::predict_batch(
    const std::vector<Trajectory>& x_t, const std::vector<int>& ts,
    const std::vector<std::vector<double>>* cond) {
  check_batch_shapes(x_t);
  require(x_t[0].n == cfg_.horizon && x_t[0].d == cfg_.action_dim,
          "trajectory shape mismatch");
  require(ts.size() == x_t.size(), "one timestep per trajectory required");
  std::vector<double> cond_rows =
      pack_cond_rows(cond, x_t.size(), cfg_.cond_dim);

  std::vector<Trajectory> out;
  out.reserve(x_t.size());
  for (std::size_t lo = 0; lo < x_t.size(); lo += kInferenceChunk) {
    std::size_t hi = std::min(x_t.size(), lo + kInferenceChunk);
    int bn = static_cast<int>(hi - lo);
    std::vector<Trajectory> chunk(x_t.begin() + static_cast<std::ptrdiff_t>(lo),
                                  x_t.begin() + static_cast<std::ptrdiff_t>(hi));
    std::vector<int> cts(ts.begin() + static_cast<std::ptrdiff_t>(lo),
                         ts.begin() + static_cast<std::ptrdiff_t>(hi));
    std::vector<double> buf = pack_bnd(chunk);
    Graph g;
    Var x = g.input({bn, cfg_.horizon, cfg_.action_dim}, buf.data());
    Var cv = g.input({bn, cfg_.cond_dim},
                     cond_rows.data() + lo * static_cast<std::size_t>(
                                                 cfg_.cond_dim));
    Var y = forward(g, x, cts, cv, false);
    const auto& yv = g.val(y);
    for (int b = 0; b < bn; ++b)
      out.push_back(unpack_bnd(yv, b, cfg_.horizon, cfg_.action_dim));
  }
  return out;
}

nlohmann::json DimDecoder::hyper() const {
  return {{"arch", "dim"},
          {"horizon", cfg_.horizon},
          {"action_dim", cfg_.action_dim},
          {"token_dim", cfg_.token_dim},
          {"depth", cfg_.depth},
          {"mlp_ratio", cfg_.mlp_ratio},
          {"cond_dim", cfg_.cond_dim},
          {"time_embed_dim", cfg_.time_embed_dim}};
}

void DimDecoder::save(const std::string& path) const {
  save_params(path, params_, hyper());
}

DimDecoder DimDecoder::load(const std::string& path) {
  ParamSet loaded;
  nlohmann::json h = load_params(path, loaded);
  if (json_field<std::string>(h, "arch") != "dim")
    throw invalid_input("weights file is not a mixer checkpoint: " + path);
  DimDecoder model(dim_config_from(h), 0);
  adopt_params(model.params_, std::move(loaded), path);
  return model;
}

const char* arch_name(ArchKind k) { return k == ArchKind::cnn ? "cnn" : "dim"; }

ArchKind arch_from_name(const std::string& name) {
  if (name == "cnn") return ArchKind::cnn;
  if (name == "dim") return ArchKind::dim;
  throw invalid_input("unknown arch: " + name);
}

std::unique_ptr<Denoiser> load_denoiser(const std::string& path) {
  ParamSet loaded;
  nlohmann::json h = load_params(path, loaded);
  ArchKind kind = arch_from_name(json_field<std::string>(h, "arch"));
  if (kind == ArchKind::cnn) {
    auto model = std::make_unique<CnnDenoiser>(cnn_config_from(h), 0);
    adopt_params(model->params(), std::move(loaded), path);
    return model;
  }
  auto model = std::make_unique<DimDecoder>(dim_config_from(h), 0);
  adopt_params(model->params(), std::move(loaded), path);
  return model;
}

namespace {

// Draws one uniform timestep per sample and elementwise unit noise in a
// canonical order (sample-major, then frame-major) shared by all layouts.
struct CorruptedBatch {
  std::vector<int> ts;
  std::vector<Trajectory> x_t;
  std::vector<Trajectory> noise;
};

CorruptedBatch corrupt_batch(const std::vector<Trajectory>& batch,
                             const NoiseSchedule& schedule, Rng& rng) {
  CorruptedBatch out;
  out.ts.reserve(batch.size());
  out.x_t.reserve(batch.size());
  out.noise.reserve(batch.size());
  for (const auto& tr : batch) {
    int t =
        static_cast<int>(rng.next_below(static_cast<std::uint64_t>(
            schedule.num_train_steps)));
    double a = schedule.alpha(t), s = schedule.sigma(t);
    Trajectory eps(tr.n, tr.d), xt(tr.n, tr.d);
    for (std::size_t i = 0; i < tr.data.size(); ++i) {
      eps.data[i] = rng.next_gaussian();
      xt.data[i] = a * tr.data[i] + s * eps.data[i];
    }
    out.ts.push_back(t);
    out.x_t.push_back(std::move(xt));
    out.noise.push_back(std::move(eps));
  }
  return out;
}

std::vector<std::vector<double>> cond_rows_for(
    CondMode mode, const std::vector<Trajectory>& clean, int cond_dim) {
  std::vector<std::vector<double>> rows;
  rows.reserve(clean.size());
  for (const auto& tr : clean) rows.push_back(make_cond(mode, tr, cond_dim));
  return rows;
}

}  // namespace

double training_loss(CnnDenoiser& model, const std::vector<Trajectory>& batch,
                     const NoiseSchedule& schedule, std::uint64_t seed) {
  check_batch_shapes(batch);
  Rng rng(derive_seed(seed, stream_tag("train-loss")));
  CorruptedBatch cb = corrupt_batch(batch, schedule, rng);
  std::vector<double> xbuf = pack_cbt(cb.x_t);
  std::vector<double> tbuf = pack_cbt(cb.noise);
  int bn = static_cast<int>(batch.size());
  Graph g;
  Var x = g.input({batch[0].d, bn, batch[0].n}, xbuf.data());
  Var target = g.input({batch[0].d, bn, batch[0].n}, tbuf.data());
  return g.scalar_value(g.mse_loss(model.forward(g, x, cb.ts, false), target));
}

double training_loss(DimDecoder& model, const std::vector<Trajectory>& batch,
                     const NoiseSchedule& schedule, std::uint64_t seed,
                     CondMode cond_mode) {
  check_batch_shapes(batch);
  Rng rng(derive_seed(seed, stream_tag("train-loss")));
  CorruptedBatch cb = corrupt_batch(batch, schedule, rng);
  auto rows = cond_rows_for(cond_mode, batch, model.config().cond_dim);
  std::vector<double> xbuf = pack_bnd(cb.x_t);
  std::vector<double> tbuf = pack_bnd(batch);
  std::vector<double> crow =
      pack_cond_rows(&rows, batch.size(), model.config().cond_dim);
  int bn = static_cast<int>(batch.size());
  Graph g;
  Var x = g.input({bn, batch[0].n, batch[0].d}, xbuf.data());
  Var target = g.input({bn, batch[0].n, batch[0].d}, tbuf.data());
  Var cv = g.input({bn, model.config().cond_dim}, crow.data());
  return g.scalar_value(
      g.mse_loss(model.forward(g, x, cb.ts, cv, false), target));
}

namespace {

// Shared minibatch loop. build_chunk assembles one chunk's loss graph from
// sample indices and a chunk seed; gradients merge in chunk order under a
// turnstile so the thread count never changes the arithmetic.
template <typename BuildChunk>
TrainReport run_training(ParamSet& params, std::size_t n_samples,
                         const TrainConfig& cfg, BuildChunk build_chunk) {
  require(n_samples > 0, "training data must be non-empty");
  require(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.chunk_size >= 1,
          "training config counts must be positive");
  require(cfg.threads >= 1, "threads must be positive");

  Adam opt(params, cfg.adam);
  Rng shuffle_rng(derive_seed(cfg.seed, stream_tag("train-shuffle")));
  std::vector<int> order(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) order[i] = static_cast<int>(i);

  TrainReport report;
  long global_batch = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n_samples; i > 1; --i) {
      std::size_t j = shuffle_rng.next_below(i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_samples;
         start += static_cast<std::size_t>(cfg.batch_size), ++global_batch) {
      std::size_t stop =
          std::min(n_samples, start + static_cast<std::size_t>(cfg.batch_size));
      std::size_t batch_n = stop - start;

      struct Chunk {
        std::vector<int> indices;
        std::uint64_t seed;
        double weight;
      };
      std::vector<Chunk> chunks;
      for (std::size_t lo = start; lo < stop;
           lo += static_cast<std::size_t>(cfg.chunk_size)) {
        std::size_t hi =
            std::min(stop, lo + static_cast<std::size_t>(cfg.chunk_size));
        Chunk c;
        c.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(lo),
                         order.begin() + static_cast<std::ptrdiff_t>(hi));
        c.seed = derive_seed(cfg.seed, stream_tag("train-chunk"),
                             static_cast<std::uint64_t>(global_batch),
                             static_cast<std::uint64_t>(chunks.size()));
        c.weight = static_cast<double>(hi - lo) / static_cast<double>(batch_n);
        chunks.push_back(std::move(c));
      }

      params.zero_grad();
      double batch_loss = 0.0;
      std::atomic<std::size_t> next_claim{0};
      std::size_t next_merge = 0;
      std::mutex mu;
      std::condition_variable cv;
      std::exception_ptr failure;

      auto worker = [&] {
        while (true) {
          std::size_t c = next_claim.fetch_add(1);
          if (c >= chunks.size()) return;
          try {
            Graph g;
            Var loss = build_chunk(g, chunks[c].indices, chunks[c].seed);
            double lv = g.scalar_value(loss);
            g.backward(loss, {/*release_buffers=*/true, /*accumulate=*/false});
            std::unique_lock<std::mutex> lk(mu);
            cv.wait(lk, [&] { return next_merge == c || failure; });
            if (failure) return;
            g.accumulate_param_grads(chunks[c].weight);
            batch_loss += lv * chunks[c].weight;
            ++next_merge;
            cv.notify_all();
          } catch (...) {
            std::lock_guard<std::mutex> lk(mu);
            if (!failure) failure = std::current_exception();
            cv.notify_all();
            return;
          }
        }
      };

      int nthreads = std::min<int>(cfg.threads,
                                   static_cast<int>(chunks.size()));
      if (nthreads <= 1) {
        worker();
      } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(nthreads));
        for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
      }
      if (failure) std::rethrow_exception(failure);

      opt.step();
      epoch_loss += batch_loss * static_cast<double>(batch_n) /
                    static_cast<double>(n_samples);
    }
    report.epoch_loss.push_back(epoch_loss);
  }
  report.final_loss = report.epoch_loss.back();
  return report;
}

std::vector<Trajectory> gather(const std::vector<Trajectory>& all,
                               const std::vector<int>& idx) {
  std::vector<Trajectory> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(all[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

TrainReport train_model(CnnDenoiser& model, const Dataset& data,
                        const NoiseSchedule& schedule, const TrainConfig& cfg) {
  require(data.normalized, "training data must be normalized");
  check_batch_shapes(data.trajs);
  require(data.trajs[0].d == model.config().action_dim,
          "dataset action dim does not match model");
  return run_training(
      model.params(), data.trajs.size(), cfg,
      [&](Graph& g, const std::vector<int>& idx, std::uint64_t chunk_seed) {
        std::vector<Trajectory> batch = gather(data.trajs, idx);
        Rng rng(derive_seed(chunk_seed, stream_tag("corrupt")));
        CorruptedBatch cb = corrupt_batch(batch, schedule, rng);
        std::vector<double> xbuf = pack_cbt(cb.x_t);
        std::vector<double> tbuf = pack_cbt(cb.noise);
        int bn = static_cast<int>(batch.size());
        Var x = g.input({batch[0].d, bn, batch[0].n}, xbuf.data());
        Var target = g.input({batch[0].d, bn, batch[0].n}, tbuf.data());
        return g.mse_loss(model.forward(g, x, cb.ts, true), target);
      });
}

TrainReport train_model(DimDecoder& model, const Dataset& data,
                        const NoiseSchedule& schedule, const TrainConfig& cfg) {
  require(data.normalized, "training data must be normalized");
  check_batch_shapes(data.trajs);
  require(data.trajs[0].n == model.config().horizon &&
              data.trajs[0].d == model.config().action_dim,
          "dataset shape does not match model");
  return run_training(
      model.params(), data.trajs.size(), cfg,
      [&](Graph& g, const std::vector<int>& idx, std::uint64_t chunk_seed) {
        std::vector<Trajectory> batch = gather(data.trajs, idx);
        Rng rng(derive_seed(chunk_seed, stream_tag("corrupt")));
        CorruptedBatch cb = corrupt_batch(batch, schedule, rng);
        auto rows = cond_rows_for(cfg.cond_mode, batch,
                                  model.config().cond_dim);
        std::vector<double> xbuf = pack_bnd(cb.x_t);
        std::vector<double> tbuf = pack_bnd(batch);
        std::vector<double> crow =
            pack_cond_rows(&rows, batch.size(), model.config().cond_dim);
        int bn = static_cast<int>(batch.size());
        Var x = g.input({bn, batch[0].n, batch[0].d}, xbuf.data());
        Var target = g.input({bn, batch[0].n, batch[0].d}, tbuf.data());
        Var cv = g.input({bn, model.config().cond_dim}, crow.data());
        return g.mse_loss(model.forward(g, x, cb.ts, cv, true), target);
      });
}

}  // namespace freqdiff
