#include "freqdiff/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "freqdiff/rng.hpp"
#include "freqdiff/spectral.hpp"
#include "json.hpp"

namespace freqdiff {

const char* generator_kind_name(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::lowfreq: return "lowfreq";
    case GeneratorKind::broadband: return "broadband";
    case GeneratorKind::highfreq: return "highfreq";
  }
  throw internal_error("unknown generator kind");
}

GeneratorKind generator_kind_from_name(const std::string& name) {
  if (name == "lowfreq") return GeneratorKind::lowfreq;
  if (name == "broadband") return GeneratorKind::broadband;
  if (name == "highfreq") return GeneratorKind::highfreq;
  throw invalid_input("unknown generator kind: '" + name +
                      "' (expected lowfreq|broadband|highfreq)");
}

namespace {

void check_spec(const GeneratorSpec& spec) {
  require(spec.d >= 1, "d must be >= 1");
  if (spec.kind == GeneratorKind::broadband) {
    require(spec.n >= 1, "n must be >= 1");
    return;
  }
  int h = static_cast<int>(spec.head_values.size());
  require(h >= 1, "head_values must be non-empty");
  require(spec.n > h, "n must exceed the head length");
  for (double v : spec.head_values) require(v >= 0.0, "head values must be >= 0");
  require(spec.tail_energy_fraction >= 0.0 && spec.tail_energy_fraction < 1.0,
          "tail_energy_fraction must be in [0,1)");
  require(spec.tail_decay > 0.0, "tail_decay must be positive");
}

}  // namespace

std::vector<double> lambda_spectrum(const GeneratorSpec& spec) {
  check_spec(spec);
  if (spec.kind == GeneratorKind::broadband)
    return std::vector<double>(static_cast<size_t>(spec.n), 1.0);

  int h = static_cast<int>(spec.head_values.size());
  double head_total = 0.0;
  for (double v : spec.head_values) head_total += v;
  require(head_total > 0.0, "head energy must be positive");

  // tail/(head+tail) = f  <=>  tail = f/(1-f) * head
  double tail_total =
      spec.tail_energy_fraction / (1.0 - spec.tail_energy_fraction) * head_total;
  double g = std::exp(-spec.tail_decay);
  double shape = 0.0, p = 1.0;  // sum of g^j for j = 0..n-h-1
  for (int j = 0; j < spec.n - h; ++j) {
    shape += p;
    p *= g;
  }
  double amp = tail_total / shape;

  std::vector<double> lam(static_cast<size_t>(spec.n));
  for (int k = 0; k < h; ++k) lam[k] = spec.head_values[k];
  p = amp;
  for (int k = h; k < spec.n; ++k) {
    lam[k] = p;
    p *= g;
  }
  if (spec.kind == GeneratorKind::highfreq) std::reverse(lam.begin(), lam.end());
  return lam;
}

std::vector<double> standardized_lambda(const GeneratorSpec& spec) {
  std::vector<double> lam = lambda_spectrum(spec);
  double total = 0.0;
  for (double v : lam) total += v;
  double scale = spec.n / total;
  for (double& v : lam) v *= scale;
  return lam;
}

Dataset generate(const GeneratorSpec& spec, long count, Split split) {
  require(count >= 1, "count must be >= 1");
  std::vector<double> lam = lambda_spectrum(spec);
  std::vector<double> scale(lam.size());
  for (size_t k = 0; k < lam.size(); ++k) scale[k] = std::sqrt(lam[k]);

  std::uint64_t split_tag =
      split == Split::train ? stream_tag("train-traj") : stream_tag("test-traj");

  Dataset ds;
  ds.spec = spec;
  ds.split = split;
  ds.trajs.reserve(static_cast<size_t>(count));
  Spectrum s;
  s.n = spec.n;
  s.d = spec.d;
  s.coeffs.assign(static_cast<size_t>(spec.n) * spec.d, 0.0);
  for (long i = 0; i < count; ++i) {
    Rng rng(derive_seed(spec.seed, split_tag, static_cast<std::uint64_t>(i)));
    for (int k = 0; k < spec.n; ++k)
      for (int a = 0; a < spec.d; ++a)
        s.coeffs[static_cast<size_t>(k) * spec.d + a] =
            scale[k] * rng.next_gaussian();
    ds.trajs.push_back(dct_inverse(s));
  }
  return ds;
}

Trajectory Normalization::apply(const Trajectory& x) const {
  require(static_cast<int>(mean.size()) == x.d && stdev.size() == mean.size(),
          "normalization dimension mismatch");
  Trajectory out = x;
  for (int t = 0; t < x.n; ++t)
    for (int a = 0; a < x.d; ++a) out.at(t, a) = (x.at(t, a) - mean[a]) / stdev[a];
  return out;
}

Trajectory Normalization::invert(const Trajectory& x) const {
  require(static_cast<int>(mean.size()) == x.d && stdev.size() == mean.size(),
          "normalization dimension mismatch");
  Trajectory out = x;
  for (int t = 0; t < x.n; ++t)
    for (int a = 0; a < x.d; ++a) out.at(t, a) = x.at(t, a) * stdev[a] + mean[a];
  return out;
}

Normalization fit_normalization(const Dataset& train) {
  require(!train.trajs.empty(), "cannot fit statistics on an empty split");
  int d = train.trajs[0].d;
  Normalization st;
  st.mean.assign(static_cast<size_t>(d), 0.0);
  st.stdev.assign(static_cast<size_t>(d), 0.0);
  long frames = 0;
  for (const Trajectory& x : train.trajs) {
    require(x.d == d, "mixed dimensionality in split");
    frames += x.n;
    for (int t = 0; t < x.n; ++t)
      for (int a = 0; a < d; ++a) st.mean[a] += x.at(t, a);
  }
  for (int a = 0; a < d; ++a) st.mean[a] /= static_cast<double>(frames);
  for (const Trajectory& x : train.trajs)
    for (int t = 0; t < x.n; ++t)
      for (int a = 0; a < d; ++a) {
        double c = x.at(t, a) - st.mean[a];
        st.stdev[a] += c * c;
      }
  for (int a = 0; a < d; ++a) {
    // population convention: normalized second moment is exactly 1
    st.stdev[a] = std::sqrt(st.stdev[a] / static_cast<double>(frames));
    require(st.stdev[a] > 0.0, "zero variance in action dimension " +
                                   std::to_string(a));
  }
  return st;
}

Dataset normalize(const Dataset& ds, const Normalization& stats) {
  require(!ds.normalized, "dataset is already normalized");
  Dataset out = ds;
  out.normalization = stats;
  out.normalized = true;
  for (Trajectory& x : out.trajs) x = stats.apply(x);
  return out;
}

Dataset normalize(const Dataset& ds) { return normalize(ds, fit_normalization(ds)); }

Dataset denormalize(const Dataset& ds) {
  require(ds.normalized, "dataset is not normalized");
  Dataset out = ds;
  out.normalized = false;
  for (Trajectory& x : out.trajs) x = ds.normalization.invert(x);
  return out;
}

std::pair<Dataset, Dataset> paper_splits(const GeneratorSpec& spec) {
  Dataset train = generate(spec, 10000, Split::train);
  Dataset test = generate(spec, 256, Split::test);
  Normalization st = fit_normalization(train);
  return {normalize(train, st), normalize(test, st)};
}

namespace {

nlohmann::json spec_to_json(const GeneratorSpec& spec) {
  return nlohmann::json{{"kind", generator_kind_name(spec.kind)},
                        {"n", spec.n},
                        {"d", spec.d},
                        {"head_values", spec.head_values},
                        {"tail_energy_fraction", spec.tail_energy_fraction},
                        {"tail_decay", spec.tail_decay},
                        {"seed", spec.seed}};
}

GeneratorSpec spec_from_json(const nlohmann::json& j) {
  GeneratorSpec spec;
  spec.kind = generator_kind_from_name(j.at("kind").get<std::string>());
  spec.n = j.at("n").get<int>();
  spec.d = j.at("d").get<int>();
  spec.head_values = j.at("head_values").get<std::vector<double>>();
  spec.tail_energy_fraction = j.at("tail_energy_fraction").get<double>();
  spec.tail_decay = j.at("tail_decay").get<double>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  return spec;
}

}  // namespace

void save_dataset_dir(const std::string& dir, const Dataset& train,
                      const Dataset& test) {
  require(train.split == Split::train && test.split == Split::test,
          "splits passed in the wrong order");
  require(train.normalized == test.normalized,
          "splits disagree on normalization state");
  std::filesystem::create_directories(dir);
  nlohmann::json meta{
      {"format", "freqdiff-dataset"},
      {"version", 1},
      {"spec", spec_to_json(train.spec)},
      {"counts",
       {{"train", train.trajs.size()}, {"test", test.trajs.size()}}},
      {"normalized", train.normalized},
  };
  if (train.normalized)
    meta["normalization"] = {{"mean", train.normalization.mean},
                             {"std", train.normalization.stdev}};
  std::ofstream mf(dir + "/meta.json", std::ios::binary);
  require(mf.good(), "cannot open for write: " + dir + "/meta.json");
  mf << meta.dump(2) << "\n";
  require(mf.good(), "write failed: " + dir + "/meta.json");
  write_trajectories_csv(dir + "/train.csv", train.trajs);
  write_trajectories_csv(dir + "/test.csv", test.trajs);
}

std::pair<Dataset, Dataset> load_dataset_dir(const std::string& dir) {
  std::ifstream mf(dir + "/meta.json", std::ios::binary);
  require(mf.good(), "cannot open: " + dir + "/meta.json");
  nlohmann::json meta;
  try {
    mf >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw invalid_input("malformed meta.json in " + dir + ": " + e.what());
  }
  try {
    require(meta.at("format") == "freqdiff-dataset",
            "not a dataset directory: " + dir);
    Dataset train, test;
    train.spec = test.spec = spec_from_json(meta.at("spec"));
    train.split = Split::train;
    test.split = Split::test;
    train.normalized = test.normalized = meta.at("normalized").get<bool>();
    if (train.normalized) {
      Normalization st;
      st.mean = meta.at("normalization").at("mean").get<std::vector<double>>();
      st.stdev = meta.at("normalization").at("std").get<std::vector<double>>();
      require(st.mean.size() == st.stdev.size(), "corrupt normalization stats");
      train.normalization = test.normalization = st;
    }
    train.trajs = read_trajectories_csv(dir + "/train.csv");
    test.trajs = read_trajectories_csv(dir + "/test.csv");
    size_t want_train = meta.at("counts").at("train").get<size_t>();
    size_t want_test = meta.at("counts").at("test").get<size_t>();
    require(train.trajs.size() == want_train && test.trajs.size() == want_test,
            "trajectory counts disagree with meta.json in " + dir);
    return {std::move(train), std::move(test)};
  } catch (const nlohmann::json::exception& e) {
    throw invalid_input("malformed meta.json in " + dir + ": " + e.what());
  }
}

}  // namespace freqdiff
