#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "freqdiff/autodiff.hpp"
#include "freqdiff/rng.hpp"

using namespace freqdiff;

namespace {

void fill_gaussian(Tensor& t, Rng& rng, double scale = 0.6) {
  for (auto& v : t.val) v = scale * rng.next_gaussian();
}

// Keeps every element at least 0.35 away from the relu kink so central
// differences with h = 1e-5 never straddle it.
void fill_away_from_zero(Tensor& t, Rng& rng) {
  for (auto& v : t.val) {
    v = 0.6 * rng.next_gaussian();
    v += (v >= 0.0) ? 0.35 : -0.35;
  }
}

// Central finite differences (h = 1e-5) over every element of every
// parameter; build must construct the whole graph from ps each call.
template <typename Build>
void check_grads(ParamSet& ps, Build build, double tol = 1e-6) {
  const double h = 1e-5;
  ps.zero_grad();
  {
    Graph g;
    g.backward(build(g));
  }
  for (auto& [name, t] : ps.items) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      double keep = t.val[i];
      t.val[i] = keep + h;
      double lp;
      {
        Graph g;
        lp = g.scalar_value(build(g));
      }
      t.val[i] = keep - h;
      double lm;
      {
        Graph g;
        lm = g.scalar_value(build(g));
      }
      t.val[i] = keep;
      double fd = (lp - lm) / (2.0 * h);
      double got = t.grad[i];
      double denom = std::max({1e-2, std::abs(fd), std::abs(got)});
      INFO(name, "[", i, "]: analytic ", got, " vs finite difference ", fd);
      CHECK(std::abs(got - fd) <= tol * denom);
    }
  }
}

template <typename F>
std::string thrown_message(F f) {
  try {
    f();
  } catch (const invalid_input& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("tensor and param set basics") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.val.size() == 6);
  CHECK(t.grad.size() == 6);
  CHECK(numel({4, 5, 6}) == 120);
  CHECK(shape_str({2, 3, 4}) == "[2, 3, 4]");

  CHECK_THROWS_AS(Tensor({2, 0}), invalid_input);
  CHECK_THROWS_AS(Tensor(std::vector<int>{}), invalid_input);

  ParamSet ps;
  Tensor& w = ps.add("w", {2, 2});
  ps.add("b", {3});
  CHECK(ps.total_params() == 7);
  CHECK(ps.has("w"));
  CHECK(!ps.has("q"));
  CHECK(&ps.at("w") == &w);
  CHECK_THROWS_AS(ps.add("w", {1}), invalid_input);
  CHECK_THROWS_AS(ps.at("missing"), invalid_input);

  w.grad.assign(4, 2.5);
  ps.zero_grad();
  for (double g : ps.at("w").grad) CHECK(g == 0.0);
}

TEST_CASE("forward values: elementwise and reductions") {
  Graph g;
  std::vector<double> av = {1.0, -2.0, 3.0, 0.5};
  std::vector<double> bv = {0.5, 1.5, -1.0, 2.0};
  Var a = g.input({4}, av.data());
  Var b = g.input({4}, bv.data());

  Var s = g.add(a, b);
  CHECK(g.val(s) == std::vector<double>{1.5, -0.5, 2.0, 2.5});
  Var d = g.sub(a, b);
  CHECK(g.val(d) == std::vector<double>{0.5, -3.5, 4.0, -1.5});
  Var m = g.mul(a, b);
  CHECK(g.val(m) == std::vector<double>{0.5, -3.0, -3.0, 1.0});
  Var sc = g.scale(a, -2.0);
  CHECK(g.val(sc) == std::vector<double>{-2.0, 4.0, -6.0, -1.0});

  CHECK(g.scalar_value(g.sum(a)) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(g.scalar_value(g.mean(a)) == doctest::Approx(0.625).epsilon(1e-15));
  // mse of a vs b: mean of (0.5^2, 3.5^2, 4^2, 1.5^2) = 30.75 / 4
  CHECK(g.scalar_value(g.mse_loss(a, b)) ==
        doctest::Approx(7.6875).epsilon(1e-15));

  Var z = g.input({3}, std::vector<double>{-2.0, 0.0, 3.0}.data());
  CHECK(g.val(g.relu(z)) == std::vector<double>{0.0, 0.0, 3.0});
  CHECK(g.val(g.sigmoid(z))[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(g.val(g.tanh_(z))[1] == 0.0);
  CHECK(g.val(g.silu(z))[1] == 0.0);
  CHECK(g.val(g.gelu(z))[1] == 0.0);

  CHECK_THROWS_AS(g.scalar_value(a), invalid_input);
  CHECK_THROWS_AS(g.val(Var{999}), invalid_input);
  CHECK_THROWS_AS(g.scale(a, std::nan("")), invalid_input);
}

TEST_CASE("forward values: matmul, transpose, reshape") {
  Graph g;
  std::vector<double> av = {1, 2, 3, 4};
  std::vector<double> wv = {5, 6, 7, 8};
  Var a = g.input({2, 2}, av.data());
  Var w = g.input({2, 2}, wv.data());
  Var y = g.matmul(a, w);
  CHECK(g.shape(y) == std::vector<int>{2, 2});
  CHECK(g.val(y) == std::vector<double>{19, 22, 43, 50});

  // rank-1 times [K, C] gives rank-1 [C]
  std::vector<double> xv = {1, -1};
  Var x1 = g.input({2}, xv.data());
  Var y1 = g.matmul(x1, w);
  CHECK(g.shape(y1) == std::vector<int>{2});
  CHECK(g.val(y1) == std::vector<double>{-2, -2});

  std::vector<double> tv = {1, 2, 3, 4, 5, 6};
  Var t = g.input({2, 3}, tv.data());
  Var tt = g.transpose_last_two(t);
  CHECK(g.shape(tt) == std::vector<int>{3, 2});
  CHECK(g.val(tt) == std::vector<double>{1, 4, 2, 5, 3, 6});

  // batched transpose keeps each batch separate
  std::vector<double> bv = {1, 2, 3, 4, 5, 6, 7, 8};
  Var b = g.input({2, 2, 2}, bv.data());
  Var bt = g.transpose_last_two(b);
  CHECK(g.val(bt) == std::vector<double>{1, 3, 2, 4, 5, 7, 6, 8});

  Var r = g.reshape(t, {3, 2});
  CHECK(g.shape(r) == std::vector<int>{3, 2});
  CHECK(g.val(r) == tv);
}

TEST_CASE("forward values: broadcast additions") {
  Graph g;
  std::vector<double> av = {1, 2, 3, 4, 5, 6};
  std::vector<double> bias2 = {10, 20};
  std::vector<double> bias3 = {10, 20, 30};

  Var a = g.input({3, 2}, av.data());
  Var b2 = g.input({2}, bias2.data());
  Var last = g.bias_add_last(a, b2);
  CHECK(g.val(last) == std::vector<double>{11, 22, 13, 24, 15, 26});

  Var b3 = g.input({3}, bias3.data());
  Var first = g.bias_add_first(a, b3);
  CHECK(g.val(first) == std::vector<double>{11, 12, 23, 24, 35, 36});

  // [X=2, M=2, Y=2] with m [2, 2] broadcast over the middle axis
  std::vector<double> hv = {1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<double> mv = {10, 100, 1000, 10000};
  Var h = g.input({2, 2, 2}, hv.data());
  Var m = g.input({2, 2}, mv.data());
  Var am = g.add_over_mid(h, m);
  CHECK(g.val(am) ==
        std::vector<double>{11, 102, 13, 104, 1005, 10006, 1007, 10008});
  Var mm = g.mul_over_mid(h, m);
  CHECK(g.val(mm) ==
        std::vector<double>{10, 200, 30, 400, 5000, 60000, 7000, 80000});

  // [X=2, Y=2, T=2] with m [2, 2] broadcast along time
  Var al = g.add_over_last(h, m);
  CHECK(g.val(al) ==
        std::vector<double>{11, 12, 103, 104, 1005, 1006, 10007, 10008});
}

TEST_CASE("conv1d forward semantics") {
  // x: [C_in=1, B=2, T=4], two samples that must never mix
  std::vector<double> xv = {1, 2, 3, 4, 10, 20, 30, 40};

  SUBCASE("k=1 identity kernel") {
    Graph g;
    Var x = g.input({1, 2, 4}, xv.data());
    std::vector<double> wv = {1.0};
    Var w = g.input({1, 1, 1}, wv.data());
    Var y = g.conv1d(x, w, 1);
    CHECK(g.val(y) == xv);
  }
  SUBCASE("k=3 center tap is identity") {
    Graph g;
    Var x = g.input({1, 2, 4}, xv.data());
    std::vector<double> wv = {0.0, 1.0, 0.0};
    Var w = g.input({1, 1, 3}, wv.data());
    CHECK(g.val(g.conv1d(x, w, 1)) == xv);
  }
  SUBCASE("k=3 left tap delays by one with zero padding per sample") {
    Graph g;
    Var x = g.input({1, 2, 4}, xv.data());
    std::vector<double> wv = {1.0, 0.0, 0.0};
    Var w = g.input({1, 1, 3}, wv.data());
    CHECK(g.val(g.conv1d(x, w, 1)) ==
          std::vector<double>{0, 1, 2, 3, 0, 10, 20, 30});
  }
  SUBCASE("k=3 right tap with dilation 2 looks two ahead") {
    Graph g;
    Var x = g.input({1, 2, 4}, xv.data());
    std::vector<double> wv = {0.0, 0.0, 1.0};
    Var w = g.input({1, 1, 3}, wv.data());
    CHECK(g.val(g.conv1d(x, w, 2)) ==
          std::vector<double>{3, 4, 0, 0, 30, 40, 0, 0});
  }
  SUBCASE("channel mixing sums over input channels") {
    Graph g;
    std::vector<double> x2 = {1, 2, 3, 4, 10, 20, 30, 40};  // [2, 1, 4]
    Var x = g.input({2, 1, 4}, x2.data());
    std::vector<double> wv = {0.0, 1.0, 0.0, 0.0, 1.0, 0.0};  // [1, 2, 3]
    Var w = g.input({1, 2, 3}, wv.data());
    CHECK(g.val(g.conv1d(x, w, 1)) == std::vector<double>{11, 22, 33, 44});
  }
  SUBCASE("argument validation") {
    Graph g;
    Var x = g.input({1, 2, 4}, xv.data());
    std::vector<double> wv(6, 0.0);
    Var w_even = g.input({1, 1, 2}, std::vector<double>{1, 1}.data());
    CHECK_THROWS_AS(g.conv1d(x, w_even, 1), invalid_input);
    Var w_bad = g.input({1, 3, 2}, wv.data());
    CHECK_THROWS_AS(g.conv1d(x, w_bad, 1), invalid_input);
    Var w_ok = g.input({1, 1, 3}, std::vector<double>{1, 1, 1}.data());
    CHECK_THROWS_AS(g.conv1d(x, w_ok, 0), invalid_input);
  }
}

TEST_CASE("finite differences: elementwise primitives") {
  Rng rng(derive_seed(42, stream_tag("fd-elementwise")));
  ParamSet ps;
  Tensor& a = ps.add("a", {2, 3});
  Tensor& b = ps.add("b", {2, 3});
  fill_gaussian(a, rng);
  fill_gaussian(b, rng);
  Tensor weights({2, 3});
  fill_gaussian(weights, rng, 1.0);

  auto weighted = [&](Graph& g, Var v) {
    return g.sum(g.mul(v, g.input(weights)));
  };

  check_grads(ps, [&](Graph& g) {
    return weighted(g, g.add(g.param(a), g.param(b)));
  });
  check_grads(ps, [&](Graph& g) {
    return weighted(g, g.sub(g.param(a), g.param(b)));
  });
  check_grads(ps, [&](Graph& g) {
    return weighted(g, g.mul(g.param(a), g.param(b)));
  });
  check_grads(ps, [&](Graph& g) {
    return weighted(g, g.scale(g.param(a), -1.7));
  });
  check_grads(ps, [&](Graph& g) {
    return g.mse_loss(g.param(a), g.param(b));
  });
  check_grads(ps, [&](Graph& g) { return g.mean(g.mul(g.param(a), g.param(b))); });

  ParamSet act;
  Tensor& x = act.add("x", {3, 4});
  fill_away_from_zero(x, rng);
  Tensor w2({3, 4});
  fill_gaussian(w2, rng, 1.0);
  auto wsum = [&](Graph& g, Var v) { return g.sum(g.mul(v, g.input(w2))); };

  check_grads(act, [&](Graph& g) { return wsum(g, g.relu(g.param(x))); });
  check_grads(act, [&](Graph& g) { return wsum(g, g.silu(g.param(x))); });
  check_grads(act, [&](Graph& g) { return wsum(g, g.gelu(g.param(x))); });
  check_grads(act, [&](Graph& g) { return wsum(g, g.tanh_(g.param(x))); });
  check_grads(act, [&](Graph& g) { return wsum(g, g.sigmoid(g.param(x))); });
}

TEST_CASE("finite differences: matmul, transpose, reshape") {
  Rng rng(derive_seed(42, stream_tag("fd-matmul")));

  ParamSet ps;
  Tensor& a = ps.add("a", {3, 4});
  Tensor& w = ps.add("w", {4, 5});
  fill_gaussian(a, rng);
  fill_gaussian(w, rng);
  Tensor target({3, 5});
  fill_gaussian(target, rng, 1.0);
  check_grads(ps, [&](Graph& g) {
    return g.mse_loss(g.matmul(g.param(a), g.param(w)), g.input(target));
  });

  ParamSet ps3;
  Tensor& a3 = ps3.add("a3", {2, 3, 4});
  Tensor& w3 = ps3.add("w3", {4, 2});
  fill_gaussian(a3, rng);
  fill_gaussian(w3, rng);
  Tensor t3({2, 3, 2});
  fill_gaussian(t3, rng, 1.0);
  check_grads(ps3, [&](Graph& g) {
    return g.mse_loss(g.matmul(g.param(a3), g.param(w3)), g.input(t3));
  });

  ParamSet ps1;
  Tensor& a1 = ps1.add("a1", {4});
  fill_gaussian(a1, rng);
  Tensor w1({4, 3});
  Rng rng2(derive_seed(42, stream_tag("fd-matmul"), 1));
  fill_gaussian(w1, rng2);
  Tensor t1({3});
  fill_gaussian(t1, rng2, 1.0);
  check_grads(ps1, [&](Graph& g) {
    return g.mse_loss(g.matmul(g.param(a1), g.input(w1)), g.input(t1));
  });

  ParamSet pst;
  Tensor& at = pst.add("at", {2, 3, 4});
  fill_gaussian(at, rng);
  Tensor wt({2, 4, 3});
  fill_gaussian(wt, rng, 1.0);
  check_grads(pst, [&](Graph& g) {
    return g.sum(g.mul(g.transpose_last_two(g.param(at)), g.input(wt)));
  });

  ParamSet psr;
  Tensor& ar = psr.add("ar", {2, 6});
  fill_gaussian(ar, rng);
  Tensor wr({3, 4});
  fill_gaussian(wr, rng, 1.0);
  check_grads(psr, [&](Graph& g) {
    return g.sum(g.mul(g.reshape(g.param(ar), {3, 4}), g.input(wr)));
  });
}

TEST_CASE("finite differences: broadcast primitives") {
  Rng rng(derive_seed(42, stream_tag("fd-broadcast")));

  ParamSet ps;
  Tensor& a = ps.add("a", {2, 3, 4});
  Tensor& bias_last = ps.add("bias_last", {4});
  Tensor& bias_first = ps.add("bias_first", {2});
  Tensor& mid = ps.add("mid", {2, 4});
  Tensor& last = ps.add("last", {2, 3});
  for (Tensor* t : {&a, &bias_last, &bias_first, &mid, &last})
    fill_gaussian(*t, rng);
  Tensor w({2, 3, 4});
  fill_gaussian(w, rng, 1.0);
  auto wsum = [&](Graph& g, Var v) { return g.sum(g.mul(v, g.input(w))); };

  check_grads(ps, [&](Graph& g) {
    return wsum(g, g.bias_add_last(g.param(a), g.param(bias_last)));
  });
  check_grads(ps, [&](Graph& g) {
    return wsum(g, g.bias_add_first(g.param(a), g.param(bias_first)));
  });
  check_grads(ps, [&](Graph& g) {
    return wsum(g, g.add_over_mid(g.param(a), g.param(mid)));
  });
  check_grads(ps, [&](Graph& g) {
    return wsum(g, g.mul_over_mid(g.param(a), g.param(mid)));
  });
  check_grads(ps, [&](Graph& g) {
    return wsum(g, g.add_over_last(g.param(a), g.param(last)));
  });
}

TEST_CASE("finite differences: conv1d") {
  Rng rng(derive_seed(42, stream_tag("fd-conv")));

  ParamSet ps;
  Tensor& x = ps.add("x", {2, 2, 7});
  Tensor& w = ps.add("w", {3, 2, 3});
  fill_gaussian(x, rng);
  fill_gaussian(w, rng);
  Tensor target({3, 2, 7});
  fill_gaussian(target, rng, 1.0);

  check_grads(ps, [&](Graph& g) {
    return g.mse_loss(g.conv1d(g.param(x), g.param(w), 1), g.input(target));
  });
  check_grads(ps, [&](Graph& g) {
    return g.mse_loss(g.conv1d(g.param(x), g.param(w), 2), g.input(target));
  });

  ParamSet ps1;
  Tensor& w1 = ps1.add("w1", {3, 2, 1});
  fill_gaussian(w1, rng);
  check_grads(ps1, [&](Graph& g) {
    return g.mse_loss(g.conv1d(g.input(x), g.param(w1), 1), g.input(target));
  });
}

TEST_CASE("finite differences: tiny convolutional model") {
  Rng rng(derive_seed(42, stream_tag("fd-tiny-cnn")));

  ParamSet ps;
  Tensor& w1 = ps.add("w1", {4, 2, 3});
  Tensor& b1 = ps.add("b1", {4});
  Tensor& tb = ps.add("tb", {4, 3});
  Tensor& w2 = ps.add("w2", {2, 4, 3});
  for (Tensor* t : {&w1, &b1, &tb, &w2}) fill_gaussian(*t, rng, 0.4);
  CHECK(ps.total_params() == 64);

  Tensor x({2, 3, 6});
  Tensor target({2, 3, 6});
  fill_gaussian(x, rng);
  fill_gaussian(target, rng);

  // conv -> channel bias -> per-(channel, sample) shift -> silu -> conv
  auto build = [&](Graph& g) {
    Var h = g.conv1d(g.input(x), g.param(w1), 1);
    h = g.bias_add_first(h, g.param(b1));
    h = g.add_over_last(h, g.param(tb));
    h = g.silu(h);
    Var y = g.conv1d(h, g.param(w2), 2);
    return g.mse_loss(y, g.input(target));
  };
  check_grads(ps, build, 1e-4);
}

TEST_CASE("finite differences: tiny mixer block") {
  Rng rng(derive_seed(42, stream_tag("fd-tiny-mixer")));

  ParamSet ps;
  Tensor& w_in = ps.add("w_in", {2, 4});
  Tensor& w_t = ps.add("w_t", {3, 3});
  Tensor& w_c1 = ps.add("w_c1", {4, 8});
  Tensor& w_c2 = ps.add("w_c2", {8, 4});
  Tensor& w_alpha = ps.add("w_alpha", {5, 4});
  Tensor& w_beta = ps.add("w_beta", {5, 4});
  Tensor& w_gate = ps.add("w_gate", {5, 4});
  Tensor& w_out = ps.add("w_out", {4, 2});
  for (auto& [name, t] : ps.items) fill_gaussian(t, rng, 0.4);
  CHECK(ps.total_params() == 149);

  Tensor x({2, 3, 2});
  Tensor cond({2, 5});
  Tensor target({2, 3, 2});
  fill_gaussian(x, rng);
  fill_gaussian(cond, rng);
  fill_gaussian(target, rng);

  // token lift -> temporal mix -> channel mlp -> gated modulation -> readout
  auto build = [&](Graph& g) {
    Var h = g.matmul(g.input(x), g.param(w_in));  // [2, 3, 4]
    Var ht = g.transpose_last_two(h);             // [2, 4, 3]
    ht = g.silu(g.matmul(ht, g.param(w_t)));
    h = g.add(h, g.transpose_last_two(ht));
    h = g.add(h, g.matmul(g.silu(g.matmul(h, g.param(w_c1))), g.param(w_c2)));
    Var c = g.input(cond);
    Var alpha = g.matmul(c, g.param(w_alpha));  // [2, 4]
    Var beta = g.matmul(c, g.param(w_beta));
    Var gate = g.sigmoid(g.matmul(c, g.param(w_gate)));
    Var mod = g.add_over_mid(g.mul_over_mid(h, alpha), beta);
    h = g.add(g.mul_over_mid(mod, gate), h);
    Var y = g.matmul(h, g.param(w_out));
    return g.mse_loss(y, g.input(target));
  };
  check_grads(ps, build, 1e-4);
}

TEST_CASE("backward contracts") {
  Rng rng(derive_seed(42, stream_tag("backward-contracts")));

  SUBCASE("second backward without zeroing doubles gradients exactly") {
    ParamSet ps;
    Tensor& a = ps.add("a", {5});
    fill_gaussian(a, rng);
    Graph g;
    Var loss = g.mean(g.mul(g.param(a), g.param(a)));
    g.backward(loss);
    std::vector<double> once = a.grad;
    g.backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i)
      CHECK(a.grad[i] == 2.0 * once[i]);
  }

  SUBCASE("parameter off the loss path gets exactly zero gradient") {
    ParamSet ps;
    Tensor& a = ps.add("a", {4});
    Tensor& unused = ps.add("unused", {3, 3});
    fill_gaussian(a, rng);
    fill_gaussian(unused, rng);
    Graph g;
    Var av = g.param(a);
    (void)g.param(unused);  // on the tape, not on the loss path
    g.backward(g.sum(g.mul(av, av)));
    for (double d : unused.grad) CHECK(d == 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(a.grad[i] == doctest::Approx(2.0 * a.val[i]).epsilon(1e-15));
  }

  SUBCASE("loss must be scalar") {
    ParamSet ps;
    Tensor& a = ps.add("a", {2, 2});
    fill_gaussian(a, rng);
    Graph g;
    Var av = g.param(a);
    std::string msg = thrown_message([&] { g.backward(av); });
    CHECK(contains(msg, "scalar"));
    CHECK(contains(msg, "[2, 2]"));
  }

  SUBCASE("repeated zero-grad backward runs are bitwise identical") {
    ParamSet ps;
    Tensor& a = ps.add("a", {3, 4});
    Tensor& w = ps.add("w", {4, 2});
    fill_gaussian(a, rng);
    fill_gaussian(w, rng);
    auto run = [&] {
      ps.zero_grad();
      Graph g;
      g.backward(g.mse_loss(g.matmul(g.silu(g.param(a)), g.param(w)),
                            g.scale(g.matmul(g.param(a), g.param(w)), 0.5)));
      return std::make_pair(a.grad, w.grad);
    };
    auto r1 = run();
    auto r2 = run();
    CHECK(r1.first == r2.first);
    CHECK(r1.second == r2.second);
  }

  SUBCASE("node gradients are inspectable after backward") {
    Graph g;
    std::vector<double> xv = {1.0, 2.0};
    Var x = g.input({2}, xv.data());
    Var y = g.scale(x, 3.0);
    g.backward(g.sum(y));
    CHECK(g.grad(y) == std::vector<double>{1.0, 1.0});
    CHECK(g.grad(x) == std::vector<double>{3.0, 3.0});
  }
}

TEST_CASE("shape mismatch errors carry both shapes") {
  Graph g;
  std::vector<double> buf(64, 0.0);
  Var a23 = g.input({2, 3}, buf.data());
  Var a32 = g.input({3, 2}, buf.data());
  Var a45 = g.input({4, 5}, buf.data());
  Var a224 = g.input({2, 2, 4}, buf.data());
  Var a2 = g.input({2}, buf.data());

  std::string msg = thrown_message([&] { g.add(a23, a32); });
  CHECK(contains(msg, "[2, 3]"));
  CHECK(contains(msg, "[3, 2]"));

  msg = thrown_message([&] { g.matmul(a23, a45); });
  CHECK(contains(msg, "[2, 3]"));
  CHECK(contains(msg, "[4, 5]"));

  msg = thrown_message([&] { g.reshape(a23, {4, 2}); });
  CHECK(contains(msg, "[2, 3]"));
  CHECK(contains(msg, "[4, 2]"));

  msg = thrown_message([&] { g.bias_add_last(a23, a2); });
  CHECK(contains(msg, "[2, 3]"));
  CHECK(contains(msg, "[2]"));

  msg = thrown_message([&] { g.bias_add_first(a32, a2); });
  CHECK(contains(msg, "[3, 2]"));
  CHECK(contains(msg, "[2]"));

  msg = thrown_message([&] { g.add_over_mid(a224, a23); });
  CHECK(contains(msg, "[2, 2, 4]"));
  CHECK(contains(msg, "[2, 3]"));

  msg = thrown_message([&] { g.mul_over_mid(a224, a23); });
  CHECK(contains(msg, "[2, 2, 4]"));

  msg = thrown_message([&] { g.add_over_last(a224, a45); });
  CHECK(contains(msg, "[2, 2, 4]"));
  CHECK(contains(msg, "[4, 5]"));

  msg = thrown_message([&] { g.mse_loss(a23, a32); });
  CHECK(contains(msg, "[2, 3]"));
  CHECK(contains(msg, "[3, 2]"));

  msg = thrown_message([&] { g.conv1d(a224, a23, 1); });
  CHECK(contains(msg, "[2, 2, 4]"));
  CHECK(contains(msg, "[2, 3]"));

  CHECK_THROWS_AS(g.transpose_last_two(a2), invalid_input);
}

TEST_CASE("adam optimizer") {
  SUBCASE("zero gradients leave parameters untouched") {
    ParamSet ps;
    Tensor& w = ps.add("w", {3});
    w.val = {1.0, -2.0, 0.5};
    std::vector<double> before = w.val;
    Adam opt(ps, {});
    opt.step();
    opt.step();
    CHECK(w.val == before);
    CHECK(opt.steps_taken() == 2);
  }

  SUBCASE("matches the hand-stepped recurrence") {
    AdamConfig cfg;
    cfg.lr = 0.01;
    ParamSet ps;
    Tensor& w = ps.add("w", {3});
    w.val = {1.0, -2.0, 0.5};
    Adam opt(ps, cfg);

    std::vector<double> p = w.val;
    std::vector<double> m(3, 0.0), v(3, 0.0);
    for (int step = 1; step <= 5; ++step) {
      for (int i = 0; i < 3; ++i)
        w.grad[static_cast<std::size_t>(i)] = 0.3 * i - 0.2 + 0.01 * step;
      opt.step();
      double bc1 = 1.0 - std::pow(cfg.beta1, step);
      double bc2 = 1.0 - std::pow(cfg.beta2, step);
      for (int i = 0; i < 3; ++i) {
        double gi = 0.3 * i - 0.2 + 0.01 * step;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        double mh = m[i] / bc1;
        double vh = v[i] / bc2;
        p[i] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps));
        CHECK(w.val[static_cast<std::size_t>(i)] ==
              doctest::Approx(p[i]).epsilon(1e-13));
      }
    }
    // first step moves by roughly lr in the gradient's direction
    CHECK(std::abs(1.0 - w.val[0]) < 5 * 0.01 + 1e-12);
  }

  SUBCASE("decoupled weight decay scales by (1 - lr * decay) at zero gradient") {
    AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.04;
    ParamSet ps;
    Tensor& w = ps.add("w", {3});
    w.val = {1.0, -2.0, 0.5};
    std::vector<double> before = w.val;
    Adam opt(ps, cfg);
    opt.step();
    for (int i = 0; i < 3; ++i)
      CHECK(w.val[static_cast<std::size_t>(i)] ==
            doctest::Approx(before[static_cast<std::size_t>(i)] *
                            (1.0 - cfg.lr * cfg.weight_decay))
                .epsilon(1e-14));
  }

  SUBCASE("decay applies on top of the gradient step") {
    AdamConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.1;
    ParamSet ps;
    Tensor& w = ps.add("w", {1});
    w.val = {2.0};
    Adam opt(ps, cfg);
    w.grad = {0.5};
    opt.step();
    // p -= lr * (mhat / (sqrt(vhat) + eps) + decay * p)
    double mh = 0.5, vh = 0.25;
    double expect = 2.0 - cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + 0.1 * 2.0);
    CHECK(w.val[0] == doctest::Approx(expect).epsilon(1e-14));
  }

  SUBCASE("configuration validation") {
    ParamSet ps;
    ps.add("w", {1});
    AdamConfig bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(Adam(ps, bad), invalid_input);
    bad = {};
    bad.beta1 = 1.0;
    CHECK_THROWS_AS(Adam(ps, bad), invalid_input);
    bad = {};
    bad.eps = 0.0;
    CHECK_THROWS_AS(Adam(ps, bad), invalid_input);
    bad = {};
    bad.weight_decay = -0.1;
    CHECK_THROWS_AS(Adam(ps, bad), invalid_input);

    Adam opt(ps, {});
    ps.add("late", {2});
    CHECK_THROWS_AS(opt.step(), invalid_input);
  }

  SUBCASE("training a linear map to a known target converges") {
    Rng rng(derive_seed(42, stream_tag("adam-converges")));
    ParamSet ps;
    Tensor& w = ps.add("w", {2, 2});
    fill_gaussian(w, rng, 0.1);
    Tensor x({8, 2});
    fill_gaussian(x, rng);
    // target map is [[1, 0.5], [-0.25, 2]]
    Tensor wt({2, 2});
    wt.val = {1.0, 0.5, -0.25, 2.0};
    Tensor y({8, 2});
    {
      Graph g;
      y.val = g.val(g.matmul(g.input(x), g.input(wt)));
    }
    AdamConfig cfg;
    cfg.lr = 0.05;
    Adam opt(ps, cfg);
    double loss = 0.0;
    for (int it = 0; it < 400; ++it) {
      ps.zero_grad();
      Graph g;
      Var l = g.mse_loss(g.matmul(g.input(x), g.param(w)), g.input(y));
      g.backward(l);
      loss = g.scalar_value(l);
      opt.step();
    }
    CHECK(loss < 1e-6);
    for (int i = 0; i < 4; ++i)
      CHECK(w.val[static_cast<std::size_t>(i)] ==
            doctest::Approx(wt.val[static_cast<std::size_t>(i)]).epsilon(2e-3));
  }
}

TEST_CASE("weight serialization round trip") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "freqdiff_autodiff_test";
  fs::create_directories(dir);
  std::string path = (dir / "weights.bin").string();

  Rng rng(derive_seed(42, stream_tag("weights-roundtrip")));
  ParamSet ps;
  fill_gaussian(ps.add("encoder.w", {2, 3}), rng);
  fill_gaussian(ps.add("encoder.b", {3}), rng);
  fill_gaussian(ps.add("head.w", {2, 2, 2}), rng);
  nlohmann::json hyper = {{"arch", "test"}, {"hidden", 7}, {"lr", 0.001}};

  save_params(path, ps, hyper);
  ParamSet loaded;
  nlohmann::json got = load_params(path, loaded);
  CHECK(got == hyper);
  REQUIRE(loaded.items.size() == ps.items.size());
  for (std::size_t i = 0; i < ps.items.size(); ++i) {
    CHECK(loaded.items[i].first == ps.items[i].first);
    CHECK(loaded.items[i].second.shape == ps.items[i].second.shape);
    CHECK(loaded.items[i].second.val == ps.items[i].second.val);
  }
  // gradients come back zeroed
  for (auto& [name, t] : loaded.items)
    for (double d : t.grad) CHECK(d == 0.0);

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_params((dir / "nope.bin").string(), loaded),
                    invalid_input);
  }
  SUBCASE("wrong magic") {
    std::string bad = (dir / "bad.bin").string();
    std::ofstream os(bad, std::ios::binary);
    os << "JUNKJUNKJUNKJUNK";
    os.close();
    std::ofstream(bad + ".json") << "{}";
    CHECK_THROWS_AS(load_params(bad, loaded), invalid_input);
  }
  SUBCASE("truncated payload") {
    std::string trunc = (dir / "trunc.bin").string();
    {
      std::ifstream src(path, std::ios::binary);
      std::vector<char> all((std::istreambuf_iterator<char>(src)),
                            std::istreambuf_iterator<char>());
      std::ofstream dst(trunc, std::ios::binary);
      dst.write(all.data(), static_cast<std::streamsize>(all.size()) - 24);
    }
    std::ofstream(trunc + ".json") << "{}";
    CHECK_THROWS_AS(load_params(trunc, loaded), invalid_input);
  }
  SUBCASE("missing sidecar") {
    std::string lone = (dir / "lone.bin").string();
    fs::copy_file(path, lone, fs::copy_options::overwrite_existing);
    std::string msg = thrown_message([&] { load_params(lone, loaded); });
    CHECK(contains(msg, "sidecar"));
  }
  SUBCASE("corrupt sidecar") {
    std::string badj = (dir / "badj.bin").string();
    fs::copy_file(path, badj, fs::copy_options::overwrite_existing);
    std::ofstream(badj + ".json") << "{not json";
    std::string msg = thrown_message([&] { load_params(badj, loaded); });
    CHECK(contains(msg, "sidecar"));
  }
}
