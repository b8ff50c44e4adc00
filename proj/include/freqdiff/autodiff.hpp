#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "freqdiff/common.hpp"
#include "json.hpp"

namespace freqdiff {

// A dense 64-bit tensor with a gradient buffer of the same shape. Parameters
// are plain Tensors owned by the caller; graphs borrow them via Graph::param.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> val;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape_);
  std::size_t size() const { return val.size(); }
  void zero_grad();
};

std::size_t numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Ordered, uniquely named parameter collection; the order is the
// serialization order and the optimizer's traversal order. Deque storage so
// references handed out by add() survive later additions.
struct ParamSet {
  std::deque<std::pair<std::string, Tensor>> items;

  Tensor& add(const std::string& name, std::vector<int> shape);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  std::size_t total_params() const;
  void zero_grad();
};

struct Var {
  int id = -1;
};

// release_buffers frees each interior node's value/gradient storage as the
// reverse sweep passes it (parameter leaves are kept); inspection of
// interior nodes after such a backward is an error the caller avoids.
// accumulate=false leaves leaf gradients on the tape so the caller can
// merge several graphs' contributions in a fixed order.
struct BackwardOptions {
  bool release_buffers = false;
  bool accumulate = true;
};

// Reverse-mode tape. Nodes are created in topological order by construction;
// backward() replays them in reverse and then accumulates leaf gradients into
// the bound parameter tensors (so two backward calls double the gradients).
// One Graph is single-threaded; independent Graphs may run on separate
// threads against the same parameter values as long as gradient accumulation
// into the shared tensors is serialized by the caller.
class Graph {
 public:
  Var input(const std::vector<int>& shape, const double* data);
  Var input(const Tensor& t);
  Var param(Tensor& p);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);

  // a: [..., K] times w: [K, C] -> [..., C]; leading dims are batch rows
  Var matmul(Var a, Var w);
  Var transpose_last_two(Var a);  // [..., R, C] -> [..., C, R]
  Var reshape(Var a, const std::vector<int>& shape);

  Var relu(Var a);
  Var silu(Var a);
  Var gelu(Var a);
  Var tanh_(Var a);
  Var sigmoid(Var a);

  Var bias_add_last(Var a, Var b);   // [..., C] + [C]
  Var bias_add_first(Var a, Var b);  // [C, ...] + [C]
  Var add_over_mid(Var a, Var m);    // [X, M, Y] + [X, Y], broadcast over M
  Var mul_over_mid(Var a, Var m);    // [X, M, Y] * [X, Y], broadcast over M
  Var add_over_last(Var a, Var m);   // [X, Y, T] + [X, Y], broadcast over T

  // x: [C_in, B, T], w: [C_out, C_in, k] with odd k; zero same-padding per
  // sample, so sequence length is preserved and samples never bleed into
  // each other.
  Var conv1d(Var x, Var w, int dilation);

  Var sum(Var a);
  Var mean(Var a);
  Var mse_loss(Var a, Var b);

  void backward(Var loss, const BackwardOptions& opts = {});
  // adds scale * (leaf gradient) into every bound parameter's grad buffer
  void accumulate_param_grads(double scale = 1.0);

  const std::vector<double>& val(Var v) const;
  const std::vector<double>& grad(Var v) const;
  const std::vector<int>& shape(Var v) const;
  double scalar_value(Var v) const;
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<double> val;
    std::vector<double> grad;
    std::function<void(Graph&)> back;  // empty for leaves
    Tensor* bound = nullptr;
  };

  Var make(std::vector<int> shape);
  Node& node(Var v);
  const Node& node(Var v) const;
  void check_same_shape(const char* op, Var a, Var b) const;

  std::vector<Node> nodes_;
};

// Bias-corrected Adam; weight_decay != 0 selects the decoupled (AdamW) form.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam(ParamSet& params, AdamConfig cfg);
  void step();
  long steps_taken() const { return t_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

 private:
  ParamSet* params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

// Versioned binary weights: magic + manifest (name, shape) + little-endian
// 64-bit values, plus `<path>.json` holding caller-provided hyperparameters.
void save_params(const std::string& path, const ParamSet& params,
                 const nlohmann::json& hyper);
nlohmann::json load_params(const std::string& path, ParamSet& out);

}  // namespace freqdiff
