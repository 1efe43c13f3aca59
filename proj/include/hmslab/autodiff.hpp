#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major
// matrices of doubles.
//
// A Graph records every operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep. Leaves either
// own their value or reference external storage (model parameters), which
// must outlive the graph.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace hmslab::ad {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor row(std::vector<double> v);
  static Tensor column(std::vector<double> v);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  // Rank-1 tensors are treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator()(std::size_t r, std::size_t c) {
    return values_[r * cols() + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return values_[r * cols() + c];
  }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // Value of a 1x1 tensor.
  double item() const;
  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
};

class Graph {
 public:
  // With record == false no backward closures are kept (inference mode).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf that reads `ref` in place; `ref` must outlive the graph.
  Var leaf(const Tensor& ref, bool requires_grad);

  // Accumulates d(loss)/d(node) into every node's gradient. Repeated calls
  // add up, so calling twice doubles every gradient.
  void backward(Var loss);
  void zero_grad();

  const Tensor& value(std::size_t id) const;
  const Tensor& grad(std::size_t id) const;
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // ---- used by op implementations ----
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;
  Var push(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var push(Tensor value, std::span<const Var> parents, BackwardFn fn);
  // Gradient buffer of the current backward pass (allocated on demand).
  Tensor& pass_grad(std::size_t id);
  const Tensor& upstream(std::size_t self) const { return pass_[self]; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::vector<Tensor> pass_;
};

// ---- primitives ----
// All binary ops reject shape mismatches with a message naming both shapes.

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// Adds a 1xC row to every row of an RxC matrix.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var softmax_rows(Var a);
Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-5);
Var gelu(Var a);
Var tanh(Var a);
// Mean over rows of -log softmax(logits)[target]; one target per row.
Var cross_entropy(Var logits, std::span<const std::size_t> targets);
// Positions where mask != 0 are overwritten with `fill`; their gradient is 0.
Var masked_fill(Var a, const Tensor& mask, double fill);
// Row lookup: out[i] = table[ids[i]] (embedding).
Var gather_rows(Var table, std::span<const std::size_t> ids);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var sum(Var a);
Var mean(Var a);
// Elementwise max(0, threshold - x); subgradient at x == threshold is 0.
Var hinge(Var x, double threshold);

// ---- finite-difference checking ----

struct GradCheckReport {
  std::vector<double> max_rel_error;  // per parameter tensor
  double worst = 0.0;
  bool passed = false;
};

// `f` builds a scalar from leaves bound to `params` (one per tensor, same
// order). Relative error is |a - n| / max(|a|, |n|, 1e-6).
using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;
GradCheckReport grad_check(const ScalarFn& f, std::span<Tensor> params,
                           double step, double tol);

}  // namespace hmslab::ad
