#include "freqdiff/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "freqdiff/kernels.hpp"

namespace freqdiff {

using kernels::ops;

namespace {

// Scalars are shape [1]; rank-0 tensors are not a thing here.
void check_shape_valid(const std::vector<int>& shape) {
  require(!shape.empty(), "tensor shape must have rank at least 1");
  for (int d : shape) require(d > 0, "tensor dimensions must be positive");
}

}  // namespace

std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<int> shape_) : shape(std::move(shape_)) {
  check_shape_valid(shape);
  val.assign(numel(shape), 0.0);
  grad.assign(val.size(), 0.0);
}

void Tensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

Tensor& ParamSet::add(const std::string& name, std::vector<int> shape) {
  require(!name.empty(), "parameter name must be non-empty");
  require(!has(name), "duplicate parameter name: " + name);
  items.emplace_back(name, Tensor(std::move(shape)));
  return items.back().second;
}

Tensor& ParamSet::at(const std::string& name) {
  for (auto& [k, t] : items)
    if (k == name) return t;
  throw invalid_input("unknown parameter: " + name);
}

const Tensor& ParamSet::at(const std::string& name) const {
  for (const auto& [k, t] : items)
    if (k == name) return t;
  throw invalid_input("unknown parameter: " + name);
}

bool ParamSet::has(const std::string& name) const {
  for (const auto& [k, t] : items)
    if (k == name) return true;
  return false;
}

std::size_t ParamSet::total_params() const {
  std::size_t n = 0;
  for (const auto& [k, t] : items) n += t.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [k, t] : items) t.zero_grad();
}

Var Graph::make(std::vector<int> shape) {
  check_shape_valid(shape);
  Node n;
  n.shape = std::move(shape);
  n.val.assign(numel(n.shape), 0.0);
  n.grad.assign(n.val.size(), 0.0);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Graph::Node& Graph::node(Var v) {
  require(v.id >= 0 && v.id < size(), "variable does not belong to this graph");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Graph::Node& Graph::node(Var v) const {
  require(v.id >= 0 && v.id < size(), "variable does not belong to this graph");
  return nodes_[static_cast<std::size_t>(v.id)];
}

void Graph::check_same_shape(const char* op, Var a, Var b) const {
  if (node(a).shape != node(b).shape)
    throw invalid_input(std::string(op) + ": shape mismatch " +
                        shape_str(node(a).shape) + " vs " +
                        shape_str(node(b).shape));
}

const std::vector<double>& Graph::val(Var v) const { return node(v).val; }
const std::vector<double>& Graph::grad(Var v) const { return node(v).grad; }
const std::vector<int>& Graph::shape(Var v) const { return node(v).shape; }

double Graph::scalar_value(Var v) const {
  require(node(v).val.size() == 1, "scalar_value: variable is not a scalar");
  return node(v).val[0];
}

Var Graph::input(const std::vector<int>& shape, const double* data) {
  Var v = make(shape);
  std::memcpy(node(v).val.data(), data, node(v).val.size() * sizeof(double));
  return v;
}

Var Graph::input(const Tensor& t) { return input(t.shape, t.val.data()); }

Var Graph::param(Tensor& p) {
  require(p.val.size() == numel(p.shape) && p.grad.size() == p.val.size(),
          "param: tensor buffers do not match its shape");
  Var v = make(p.shape);
  std::memcpy(node(v).val.data(), p.val.data(), p.size() * sizeof(double));
  node(v).bound = &p;
  return v;
}

Var Graph::add(Var a, Var b) {
  check_same_shape("add", a, b);
  Var out = make(node(a).shape);
  std::size_t n = node(out).val.size();
  ops().add(node(a).val.data(), node(b).val.data(), node(out).val.data(), n);
  int ai = a.id, bi = b.id, oi = out.id;
  node(out).back = [ai, bi, oi, n](Graph& g) {
    const double* dy = g.nodes_[oi].grad.data();
    ops().axpy(1.0, dy, g.nodes_[ai].grad.data(), n);
    ops().axpy(1.0, dy, g.nodes_[bi].grad.data(), n);
  };
  return out;
}

Var Graph::sub(Var a, Var b) {
  check_same_shape("sub", a, b);
  Var out = make(node(a).shape);
  std::size_t n = node(out).val.size();
  ops().sub(node(a).val.data(), node(b).val.data(), node(out).val.data(), n);
  int ai = a.id, bi = b.id, oi = out.id;
  node(out).back = [ai, bi, oi, n](Graph& g) {
    const double* dy = g.nodes_[oi].grad.data();
    ops().axpy(1.0, dy, g.nodes_[ai].grad.data(), n);
    ops().axpy(-1.0, dy, g.nodes_[bi].grad.data(), n);
  };
  return out;
}

Var Graph::mul(Var a, Var b) {
  check_same_shape("mul", a, b);
  Var out = make(node(a).shape);
  std::size_t n = node(out).val.size();
  ops().mul(node(a).val.data(), node(b).val.data(), node(out).val.data(), n);
  int ai = a.id, bi = b.id, oi = out.id;
  node(out).back = [ai, bi, oi, n](Graph& g) {
    const double* dy = g.nodes_[oi].grad.data();
    const double* av = g.nodes_[ai].val.data();
    const double* bv = g.nodes_[bi].val.data();
    double* da = g.nodes_[ai].grad.data();
    double* db = g.nodes_[bi].grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      da[i] += dy[i] * bv[i];
      db[i] += dy[i] * av[i];
    }
  };
  return out;
}

Var Graph::scale(Var a, double c) {
  require(std::isfinite(c), "scale: factor must be finite");
  Var out = make(node(a).shape);
  std::size_t n = node(out).val.size();
  node(out).val = node(a).val;
  ops().scale(c, node(out).val.data(), n);
  int ai = a.id, oi = out.id;
  node(out).back = [ai, oi, c, n](Graph& g) {
    ops().axpy(c, g.nodes_[oi].grad.data(), g.nodes_[ai].grad.data(), n);
  };
  return out;
}

Var Graph::matmul(Var a, Var w) {
  const auto& as = node(a).shape;
  const auto& ws = node(w).shape;
  if (ws.size() != 2 || as.empty() || as.back() != ws[0])
    throw invalid_input("matmul: incompatible shapes " + shape_str(as) +
                        " vs " + shape_str(ws));
  int k = ws[0], c = ws[1];
  int rows = static_cast<int>(numel(as)) / k;
  std::vector<int> out_shape = as;
  out_shape.back() = c;
  Var out = make(out_shape);
  ops().gemm(false, false, rows, c, k, 1.0, node(a).val.data(), k,
             node(w).val.data(), c, 0.0, node(out).val.data(), c);
  int ai = a.id, wi = w.id, oi = out.id;
  node(out).back = [ai, wi, oi, rows, k, c](Graph& g) {
    const double* dy = g.nodes_[oi].grad.data();
    // dA = dY W^T, dW = A^T dY, both accumulated
    ops().gemm(false, true, rows, k, c, 1.0, dy, c, g.nodes_[wi].val.data(), c,
               1.0, g.nodes_[ai].grad.data(), k);
    ops().gemm(true, false, k, c, rows, 1.0, g.nodes_[ai].val.data(), k, dy, c,
               1.0, g.nodes_[wi].grad.data(), c);
  };
  return out;
}

Var Graph::transpose_last_two(Var a) {
  const auto& as = node(a).shape;
  require(as.size() >= 2, "transpose_last_two: rank must be at least 2");
  int r = as[as.size() - 2], c = as.back();
  int batch = static_cast<int>(numel(as)) / (r * c);
  std::vector<int> out_shape = as;
  out_shape[out_shape.size() - 2] = c;
  out_shape.back() = r;
  Var out = make(out_shape);
  const double* x = node(a).val.data();
  double* y = node(out).val.data();
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) y[(b * c + j) * r + i] = x[(b * r + i) * c + j];
  int ai = a.id, oi = out.id;
  node(out).back = [ai, oi, batch, r, c](Graph& g) {
    const double* dy = g.nodes_[oi].grad.data();
    double* da = g.nodes_[ai].grad.data();
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          da[(b * r + i) * c + j] += dy[(b * c + j) * r + i];
  };
  return out;
}

Var Graph::reshape(Var a, const std::vector<int>& shape) {
  check_shape_valid(shape);
  if (numel(shape) != node(a).val.size())
    throw invalid_input("reshape: element count mismatch " +
                        shape_str(node(a).shape) + " vs " + shape_str(shape));
  Var out = make(shape);
  node(out).val = node(a).val;
  std::size_t n = node(out).val.size();
  int ai = a.id, oi = out.id;
  node(out).back = [ai, oi, n](Graph& g) {
    ops().axpy(1.0, g.nodes_[oi].grad.data(), g.nodes_[ai].grad.data(), n);
  };
  return out;
}

Var Graph::relu(Var a) {
  Var out = make(node(a).shape);
  std::size_t n = node(out).val.size();
  ops().relu(node(a).val.data(), node(out).val.data(), n);
  int ai = a.id, oi = out.id;
  node(out).back = [ai, oi, n](Graph& g) {
    ops().relu_bwd(g.nodes_[ai].val.data(), g.nodes_[oi].grad.data(),
                   g.nodes_[ai].grad.data(), n);
  };
  return out;
}

Var Graph::silu(Var a) {
  Var out = make(node(a).shape);
  std::size_t n = node(out).val.size();
  ops().silu(node(a).val.data(), node(out).val.data(), n);
  int ai = a.id, oi = out.id;
  node(out).back = [ai, oi, n](Graph& g) {
    ops().silu_bwd(g.nodes_[ai].val.data(), g.nodes_[oi].grad.data(),
                   g.nodes_[ai].grad.data(), n);
  };
  return out;
}

Var Graph::gelu(Var a) {
  Var out = make(node(a).shape);
  std::size_t n = node(out).val.size();
  ops().gelu(node(a).val.data(), node(out).val.data(), n);
  int ai = a.id, oi = out.id;
  node(out).back = [ai, oi, n](Graph& g) {
    ops().gelu_bwd(g.nodes_[ai].val.data(), g.nodes_[oi].grad.data(),
                   g.nodes_[ai].grad.data(), n);
  };
  return out;
}

Var Graph::tanh_(Var a) {
  Var out = make(node(a).shape);
  std::size_t n = node(out).val.size();
  ops().tanh_(node(a).val.data(), node(out).val.data(), n);
  int ai = a.id, oi = out.id;
  node(out).back = [ai, oi, n](Graph& g) {
    ops().tanh_bwd(g.nodes_[ai].val.data(), g.nodes_[oi].grad.data(),
                   g.nodes_[ai].grad.data(), n);
  };
  return out;
}

Var Graph::sigmoid(Var a) {
  Var out = make(node(a).shape);
  std::size_t n = node(out).val.size();
  ops().sigmoid(node(a).val.data(), node(out).val.data(), n);
  int ai = a.id, oi = out.id;
  // derivative from the stored output: s' = s (1 - s)
  node(out).back = [ai, oi, n](Graph& g) {
    const double* s = g.nodes_[oi].val.data();
    const double* dy = g.nodes_[oi].grad.data();
    double* da = g.nodes_[ai].grad.data();
    for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * s[i] * (1.0 - s[i]);
  };
  return out;
}

Var Graph::bias_add_last(Var a, Var b) {
  const auto& as = node(a).shape;
  const auto& bs = node(b).shape;
  if (bs.size() != 1 || as.empty() || as.back() != bs[0])
    throw invalid_input("bias_add_last: incompatible shapes " + shape_str(as) +
                        " vs " + shape_str(bs));
  int c = bs[0];
  int rows = static_cast<int>(numel(as)) / c;
  Var out = make(as);
  const double* x = node(a).val.data();
  const double* bias = node(b).val.data();
  double* y = node(out).val.data();
  for (int r = 0; r < rows; ++r)
    ops().add(x + static_cast<std::size_t>(r) * c, bias,
              y + static_cast<std::size_t>(r) * c, c);
  int ai = a.id, bi = b.id, oi = out.id;
  node(out).back = [ai, bi, oi, rows, c](Graph& g) {
    const double* dy = g.nodes_[oi].grad.data();
    double* da = g.nodes_[ai].grad.data();
    double* db = g.nodes_[bi].grad.data();
    std::size_t n = static_cast<std::size_t>(rows) * c;
    ops().axpy(1.0, dy, da, n);
    for (int r = 0; r < rows; ++r)
      ops().add(db, dy + static_cast<std::size_t>(r) * c, db, c);
  };
  return out;
}

Var Graph::bias_add_first(Var a, Var b) {
  const auto& as = node(a).shape;
  const auto& bs = node(b).shape;
  if (bs.size() != 1 || as.empty() || as[0] != bs[0])
    throw invalid_input("bias_add_first: incompatible shapes " + shape_str(as) +
                        " vs " + shape_str(bs));
  int c = bs[0];
  std::size_t inner = numel(as) / static_cast<std::size_t>(c);
  Var out = make(as);
  const double* x = node(a).val.data();
  const double* bias = node(b).val.data();
  double* y = node(out).val.data();
  for (int i = 0; i < c; ++i) {
    std::size_t off = static_cast<std::size_t>(i) * inner;
    for (std::size_t j = 0; j < inner; ++j) y[off + j] = x[off + j] + bias[i];
  }
  int ai = a.id, bi = b.id, oi = out.id;
  node(out).back = [ai, bi, oi, c, inner](Graph& g) {
    const double* dy = g.nodes_[oi].grad.data();
    double* da = g.nodes_[ai].grad.data();
    double* db = g.nodes_[bi].grad.data();
    ops().axpy(1.0, dy, da, static_cast<std::size_t>(c) * inner);
    for (int i = 0; i < c; ++i)
      db[i] += ops().sum(dy + static_cast<std::size_t>(i) * inner, inner);
  };
  return out;
}

Var Graph::add_over_mid(Var a, Var m) {
  const auto& as = node(a).shape;
  const auto& ms = node(m).shape;
  if (as.size() != 3 || ms.size() != 2 || as[0] != ms[0] || as[2] != ms[1])
    throw invalid_input("add_over_mid: incompatible shapes " + shape_str(as) +
                        " vs " + shape_str(ms));
  int x = as[0], mid = as[1], y = as[2];
  Var out = make(as);
  const double* av = node(a).val.data();
  const double* mv = node(m).val.data();
  double* ov = node(out).val.data();
  for (int b = 0; b < x; ++b)
    for (int r = 0; r < mid; ++r)
      ops().add(av + (static_cast<std::size_t>(b) * mid + r) * y,
                mv + static_cast<std::size_t>(b) * y,
                ov + (static_cast<std::size_t>(b) * mid + r) * y, y);
  int ai = a.id, mi = m.id, oi = out.id;
  node(out).back = [ai, mi, oi, x, mid, y](Graph& g) {
    const double* dy = g.nodes_[oi].grad.data();
    double* da = g.nodes_[ai].grad.data();
    double* dm = g.nodes_[mi].grad.data();
    ops().axpy(1.0, dy, da, static_cast<std::size_t>(x) * mid * y);
    for (int b = 0; b < x; ++b)
      for (int r = 0; r < mid; ++r)
        ops().add(dm + static_cast<std::size_t>(b) * y,
                  dy + (static_cast<std::size_t>(b) * mid + r) * y,
                  dm + static_cast<std::size_t>(b) * y, y);
  };
  return out;
}

Var Graph::mul_over_mid(Var a, Var m) {
  const auto& as = node(a).shape;
  const auto& ms = node(m).shape;
  if (as.size() != 3 || ms.size() != 2 || as[0] != ms[0] || as[2] != ms[1])
    throw invalid_input("mul_over_mid: incompatible shapes " + shape_str(as) +
                        " vs " + shape_str(ms));
  int x = as[0], mid = as[1], y = as[2];
  Var out = make(as);
  const double* av = node(a).val.data();
  const double* mv = node(m).val.data();
  double* ov = node(out).val.data();
  for (int b = 0; b < x; ++b)
    for (int r = 0; r < mid; ++r)
      ops().mul(av + (static_cast<std::size_t>(b) * mid + r) * y,
                mv + static_cast<std::size_t>(b) * y,
                ov + (static_cast<std::size_t>(b) * mid + r) * y, y);
  int ai = a.id, mi = m.id, oi = out.id;
  node(out).back = [ai, mi, oi, x, mid, y](Graph& g) {
    const double* dy = g.nodes_[oi].grad.data();
    const double* av = g.nodes_[ai].val.data();
    const double* mv = g.nodes_[mi].val.data();
    double* da = g.nodes_[ai].grad.data();
    double* dm = g.nodes_[mi].grad.data();
    for (int b = 0; b < x; ++b)
      for (int r = 0; r < mid; ++r) {
        std::size_t ao = (static_cast<std::size_t>(b) * mid + r) * y;
        std::size_t mo = static_cast<std::size_t>(b) * y;
        for (int j = 0; j < y; ++j) {
          da[ao + j] += dy[ao + j] * mv[mo + j];
          dm[mo + j] += dy[ao + j] * av[ao + j];
        }
      }
  };
  return out;
}

Var Graph::add_over_last(Var a, Var m) {
  const auto& as = node(a).shape;
  const auto& ms = node(m).shape;
  if (as.size() != 3 || ms.size() != 2 || as[0] != ms[0] || as[1] != ms[1])
    throw invalid_input("add_over_last: incompatible shapes " + shape_str(as) +
                        " vs " + shape_str(ms));
  int x = as[0], y = as[1], t = as[2];
  Var out = make(as);
  const double* av = node(a).val.data();
  const double* mv = node(m).val.data();
  double* ov = node(out).val.data();
  for (int b = 0; b < x; ++b)
    for (int r = 0; r < y; ++r) {
      std::size_t off = (static_cast<std::size_t>(b) * y + r) * t;
      double bias = mv[static_cast<std::size_t>(b) * y + r];
      for (int j = 0; j < t; ++j) ov[off + j] = av[off + j] + bias;
    }
  int ai = a.id, mi = m.id, oi = out.id;
  node(out).back = [ai, mi, oi, x, y, t](Graph& g) {
    const double* dy = g.nodes_[oi].grad.data();
    double* da = g.nodes_[ai].grad.data();
    double* dm = g.nodes_[mi].grad.data();
    ops().axpy(1.0, dy, da, static_cast<std::size_t>(x) * y * t);
    for (int b = 0; b < x; ++b)
      for (int r = 0; r < y; ++r)
        dm[static_cast<std::size_t>(b) * y + r] +=
            ops().sum(dy + (static_cast<std::size_t>(b) * y + r) * t, t);
  };
  return out;
}

namespace {

// col has (c_in * k) rows of (batch * t) columns, zero outside each sample
void im2col(const double* x, int c_in, int batch, int t, int k, int dilation,
            double* col) {
  int half = (k - 1) / 2;
  for (int ci = 0; ci < c_in; ++ci)
    for (int j = 0; j < k; ++j) {
      int off = (j - half) * dilation;
      double* row = col + (static_cast<std::size_t>(ci) * k + j) *
                              (static_cast<std::size_t>(batch) * t);
      for (int b = 0; b < batch; ++b) {
        const double* src = x + (static_cast<std::size_t>(ci) * batch + b) * t;
        double* dst = row + static_cast<std::size_t>(b) * t;
        for (int i = 0; i < t; ++i) {
          int s = i + off;
          dst[i] = (s >= 0 && s < t) ? src[s] : 0.0;
        }
      }
    }
}

void col2im_accum(const double* dcol, int c_in, int batch, int t, int k,
                  int dilation, double* dx) {
  int half = (k - 1) / 2;
  for (int ci = 0; ci < c_in; ++ci)
    for (int j = 0; j < k; ++j) {
      int off = (j - half) * dilation;
      const double* row = dcol + (static_cast<std::size_t>(ci) * k + j) *
                                     (static_cast<std::size_t>(batch) * t);
      for (int b = 0; b < batch; ++b) {
        double* dst = dx + (static_cast<std::size_t>(ci) * batch + b) * t;
        const double* src = row + static_cast<std::size_t>(b) * t;
        for (int i = 0; i < t; ++i) {
          int s = i + off;
          if (s >= 0 && s < t) dst[s] += src[i];
        }
      }
    }
}

}  // namespace

Var Graph::conv1d(Var x, Var w, int dilation) {
  const auto& xs = node(x).shape;
  const auto& ws = node(w).shape;
  if (xs.size() != 3 || ws.size() != 3 || ws[1] != xs[0])
    throw invalid_input("conv1d: incompatible shapes " + shape_str(xs) +
                        " vs " + shape_str(ws));
  require(ws[2] % 2 == 1, "conv1d: kernel width must be odd");
  require(dilation >= 1, "conv1d: dilation must be positive");
  int c_in = xs[0], batch = xs[1], t = xs[2];
  int c_out = ws[0], k = ws[2];
  Var out = make({c_out, batch, t});
  std::size_t cols = static_cast<std::size_t>(batch) * t;
  std::vector<double> col(static_cast<std::size_t>(c_in) * k * cols);
  im2col(node(x).val.data(), c_in, batch, t, k, dilation, col.data());
  ops().gemm(false, false, c_out, static_cast<int>(cols), c_in * k, 1.0,
             node(w).val.data(), c_in * k, col.data(), static_cast<int>(cols),
             0.0, node(out).val.data(), static_cast<int>(cols));
  int xi = x.id, wi = w.id, oi = out.id;
  node(out).back = [xi, wi, oi, c_in, batch, t, c_out, k, dilation](Graph& g) {
    std::size_t cols = static_cast<std::size_t>(batch) * t;
    // recompute the column matrix instead of keeping it alive on the tape
    std::vector<double> col(static_cast<std::size_t>(c_in) * k * cols);
    im2col(g.nodes_[xi].val.data(), c_in, batch, t, k, dilation, col.data());
    const double* dy = g.nodes_[oi].grad.data();
    ops().gemm(false, true, c_out, c_in * k, static_cast<int>(cols), 1.0, dy,
               static_cast<int>(cols), col.data(), static_cast<int>(cols), 1.0,
               g.nodes_[wi].grad.data(), c_in * k);
    std::vector<double> dcol(col.size());
    ops().gemm(true, false, c_in * k, static_cast<int>(cols), c_out, 1.0,
               g.nodes_[wi].val.data(), c_in * k, dy, static_cast<int>(cols),
               0.0, dcol.data(), static_cast<int>(cols));
    col2im_accum(dcol.data(), c_in, batch, t, k, dilation,
                 g.nodes_[xi].grad.data());
  };
  return out;
}

Var Graph::sum(Var a) {
  Var out = make({1});
  std::size_t n = node(a).val.size();
  node(out).val[0] = ops().sum(node(a).val.data(), n);
  int ai = a.id, oi = out.id;
  node(out).back = [ai, oi, n](Graph& g) {
    double dy = g.nodes_[oi].grad[0];
    double* da = g.nodes_[ai].grad.data();
    for (std::size_t i = 0; i < n; ++i) da[i] += dy;
  };
  return out;
}

Var Graph::mean(Var a) {
  Var out = make({1});
  std::size_t n = node(a).val.size();
  node(out).val[0] = ops().sum(node(a).val.data(), n) / static_cast<double>(n);
  int ai = a.id, oi = out.id;
  node(out).back = [ai, oi, n](Graph& g) {
    double dy = g.nodes_[oi].grad[0] / static_cast<double>(n);
    double* da = g.nodes_[ai].grad.data();
    for (std::size_t i = 0; i < n; ++i) da[i] += dy;
  };
  return out;
}

Var Graph::mse_loss(Var a, Var b) {
  check_same_shape("mse_loss", a, b);
  Var out = make({1});
  std::size_t n = node(a).val.size();
  const double* av = node(a).val.data();
  const double* bv = node(b).val.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = av[i] - bv[i];
    acc += d * d;
  }
  node(out).val[0] = acc / static_cast<double>(n);
  int ai = a.id, bi = b.id, oi = out.id;
  node(out).back = [ai, bi, oi, n](Graph& g) {
    double s = 2.0 * g.nodes_[oi].grad[0] / static_cast<double>(n);
    const double* av = g.nodes_[ai].val.data();
    const double* bv = g.nodes_[bi].val.data();
    double* da = g.nodes_[ai].grad.data();
    double* db = g.nodes_[bi].grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      double d = s * (av[i] - bv[i]);
      da[i] += d;
      db[i] -= d;
    }
  };
  return out;
}

void Graph::backward(Var loss, const BackwardOptions& opts) {
  Node& l = node(loss);
  require(l.val.size() == 1,
          "backward: loss must be a scalar, got shape " + shape_str(l.shape));
  for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  l.grad[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.back) n.back(*this);
    // once a node's closure ran, nothing below reads its buffers again
    if (opts.release_buffers && !n.bound && i != loss.id) {
      std::vector<double>().swap(n.val);
      std::vector<double>().swap(n.grad);
    }
  }
  if (opts.accumulate) accumulate_param_grads(1.0);
}

void Graph::accumulate_param_grads(double scale) {
  for (auto& n : nodes_)
    if (n.bound && !n.grad.empty())
      ops().axpy(scale, n.grad.data(), n.bound->grad.data(), n.grad.size());
}

Adam::Adam(ParamSet& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
  require(cfg.lr > 0.0, "adam: lr must be positive");
  require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 &&
              cfg.beta2 < 1.0,
          "adam: betas must lie in [0, 1)");
  require(cfg.eps > 0.0, "adam: eps must be positive");
  require(cfg.weight_decay >= 0.0, "adam: weight_decay must be non-negative");
  for (const auto& [k, t] : params.items) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void Adam::step() {
  require(params_->items.size() == m_.size(),
          "adam: parameter set changed shape after optimizer construction");
  ++t_;
  for (std::size_t i = 0; i < params_->items.size(); ++i) {
    Tensor& p = params_->items[i].second;
    ops().adam_step(p.val.data(), p.grad.data(), m_[i].data(), v_[i].data(),
                    p.size(), cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps,
                    cfg_.weight_decay, t_);
  }
}

namespace {

constexpr char kMagic[4] = {'F', 'D', 'W', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4] = {0, 0, 0, 0};
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is) {
  unsigned char b[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

}  // namespace

void save_params(const std::string& path, const ParamSet& params,
                 const nlohmann::json& hyper) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(params.items.size()));
  for (const auto& [name, t] : params.items) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(os, static_cast<std::uint32_t>(d));
  }
  for (const auto& [name, t] : params.items)
    for (double d : t.val) write_f64(os, d);
  os.flush();
  require(os.good(), "write failed: " + path);

  std::ofstream js(path + ".json");
  require(js.good(), "cannot open for writing: " + path + ".json");
  js << hyper.dump(2) << "\n";
  js.flush();
  require(js.good(), "write failed: " + path + ".json");
}

nlohmann::json load_params(const std::string& path, ParamSet& out) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw invalid_input("cannot open weights file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is.good() || std::memcmp(magic, kMagic, 4) != 0)
    throw invalid_input("not a weights file: " + path);
  std::uint32_t version = read_u32(is);
  if (version != kVersion)
    throw invalid_input("unsupported weights version " +
                        std::to_string(version) + " in " + path);
  std::uint32_t count = read_u32(is);
  out.items.clear();
  for (std::uint32_t i = 0; i < count && is.good(); ++i) {
    std::uint32_t name_len = read_u32(is);
    if (name_len > 4096) throw invalid_input("corrupt weights file: " + path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint32_t rank = read_u32(is);
    if (rank > 8) throw invalid_input("corrupt weights file: " + path);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(is));
    if (!is.good()) throw invalid_input("truncated weights file: " + path);
    out.add(name, shape);
  }
  for (auto& [name, t] : out.items)
    for (auto& d : t.val) d = read_f64(is);
  if (!is.good()) throw invalid_input("truncated weights file: " + path);

  std::ifstream js(path + ".json");
  if (!js.good())
    throw invalid_input("missing weights sidecar: " + path + ".json");
  nlohmann::json hyper;
  try {
    js >> hyper;
  } catch (const nlohmann::json::exception& e) {
    throw invalid_input("bad weights sidecar " + path + ".json: " + e.what());
  }
  return hyper;
}

}  // namespace freqdiff
