#include "hmslab/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hmslab/error.hpp"

namespace hmslab::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC as_mat(const Tensor& t) {
  return MapC(t.data(), static_cast<Eigen::Index>(t.rows()),
              static_cast<Eigen::Index>(t.cols()));
}
Map as_mat(Tensor& t) {
  return Map(t.data(), static_cast<Eigen::Index>(t.rows()),
             static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  fail_invariant(std::string(op) + ": shape mismatch " + a.shape_str() +
                 " vs " + b.shape_str());
}

// Gradient buffer of a parent, or nullptr when it needs no gradient.
Tensor* grad_if(Graph& g, Var v) {
  return v.requires_grad() ? &g.pass_grad(v.id) : nullptr;
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, values_(rows * cols, fill) {
  if (rows == 0 || cols == 0) {
    fail_invariant("tensor dimensions must be positive");
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  std::size_t n = 1;
  for (std::size_t d : shape_) {
    if (d == 0) fail_invariant("tensor dimensions must be positive");
    n *= d;
  }
  if (shape_.empty() || n != values_.size()) {
    fail_invariant("tensor shape " + shape_str() + " does not match " +
                   std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

Tensor Tensor::column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n, 1}, std::move(v));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() <= 1) return 1;
  return std::accumulate(shape_.begin(), shape_.end() - 1, std::size_t{1},
                         std::multiplies<>());
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

double Tensor::item() const {
  if (values_.size() != 1) {
    fail_invariant("item() on non-scalar tensor " + shape_str());
  }
  return values_[0];
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

// ------------------------------------------------------------------ Var

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }
bool Var::requires_grad() const { return graph->requires_grad(id); }

// ---------------------------------------------------------------- Graph

Var Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::variable(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::leaf(const Tensor& ref, bool requires_grad) {
  Node n;
  n.ref = &ref;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::push(Tensor value, std::initializer_list<Var> parents,
                BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(fn));
}

Var Graph::push(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  if (!value.all_finite()) {
    fail_invariant("non-finite value produced by an operation");
  }
  Node n;
  n.owned = std::move(value);
  if (record_) {
    for (const Var& p : parents) {
      if (p.graph != this) fail_invariant("operands belong to different graphs");
      n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.owned;
}

const Tensor& Graph::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.empty()) fail_invariant("gradient requested before backward()");
  return n.grad;
}

Tensor& Graph::pass_grad(std::size_t id) {
  Tensor& g = pass_[id];
  if (g.empty()) {
    const Tensor& v = value(id);
    g = Tensor(v.shape(), std::vector<double>(v.size(), 0.0));
  }
  return g;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) fail_invariant("loss belongs to a different graph");
  const Tensor& lv = value(loss.id);
  if (lv.size() != 1) {
    fail_invariant("backward() needs a scalar loss, got " + lv.shape_str());
  }
  pass_.assign(nodes_.size(), Tensor());
  pass_grad(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (pass_[i].empty() || !nodes_[i].requires_grad) continue;
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (pass_[i].empty() || !nodes_[i].requires_grad) continue;
    Tensor& acc = nodes_[i].grad;
    if (acc.empty()) {
      acc = std::move(pass_[i]);
    } else {
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += pass_[i][k];
    }
  }
  pass_.clear();
}

void Graph::zero_grad() {
  for (Node& n : nodes_) n.grad = Tensor();
}

// ----------------------------------------------------------- primitives

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Tensor out(av.rows(), bv.cols());
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    if (Tensor* ga = grad_if(g, a)) {
      as_mat(*ga).noalias() += as_mat(up) * as_mat(b.value()).transpose();
    }
    if (Tensor* gb = grad_if(g, b)) {
      as_mat(*gb).noalias() += as_mat(a.value()).transpose() * as_mat(up);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) shape_error("matmul_nt", av, bv);
  Tensor out(av.rows(), bv.rows());
  as_mat(out).noalias() = as_mat(av) * as_mat(bv).transpose();
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    if (Tensor* ga = grad_if(g, a)) {
      as_mat(*ga).noalias() += as_mat(up) * as_mat(b.value());
    }
    if (Tensor* gb = grad_if(g, b)) {
      as_mat(*gb).noalias() += as_mat(up).transpose() * as_mat(a.value());
    }
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) shape_error("add", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    for (Var p : {a, b}) {
      if (Tensor* gp = grad_if(g, p)) {
        for (std::size_t i = 0; i < up.size(); ++i) (*gp)[i] += up[i];
      }
    }
  });
}

Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) shape_error("sub", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    if (Tensor* ga = grad_if(g, a)) {
      for (std::size_t i = 0; i < up.size(); ++i) (*ga)[i] += up[i];
    }
    if (Tensor* gb = grad_if(g, b)) {
      for (std::size_t i = 0; i < up.size(); ++i) (*gb)[i] -= up[i];
    }
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) shape_error("mul", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    if (Tensor* ga = grad_if(g, a)) {
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < up.size(); ++i) (*ga)[i] += up[i] * bv[i];
    }
    if (Tensor* gb = grad_if(g, b)) {
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < up.size(); ++i) (*gb)[i] += up[i] * av[i];
    }
  });
}

Var add_row(Var a, Var row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_error("add_row", av, rv);
  Tensor out = av;
  const std::size_t c = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += rv[i % c];
  return a.graph->push(std::move(out), {a, row}, [a, row](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    if (Tensor* ga = grad_if(g, a)) {
      for (std::size_t i = 0; i < up.size(); ++i) (*ga)[i] += up[i];
    }
    if (Tensor* gr = grad_if(g, row)) {
      const std::size_t c = up.cols();
      for (std::size_t i = 0; i < up.size(); ++i) (*gr)[i % c] += up[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return a.graph->push(std::move(out), {a}, [a, s](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    Tensor& ga = g.pass_grad(a.id);
    for (std::size_t i = 0; i < up.size(); ++i) ga[i] += s * up[i];
  });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  return a.graph->push(std::move(out), {a}, [a](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    Tensor& ga = g.pass_grad(a.id);
    for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i];
  });
}

Var softmax_rows(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape(), std::vector<double>(av.size()));
  const std::size_t c = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const double* x = av.data() + r * c;
    double* y = out.data() + r * c;
    const double mx = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  return a.graph->push(std::move(out), {a}, [a](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    const Tensor& y = g.value(self);
    Tensor& ga = g.pass_grad(a.id);
    const std::size_t c = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      const double* yr = y.data() + r * c;
      const double* ur = up.data() + r * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += ur[j] * yr[j];
      double* gr = ga.data() + r * c;
      for (std::size_t j = 0; j < c; ++j) gr[j] += yr[j] * (ur[j] - dot);
    }
  });
}

Var layer_norm_rows(Var a, Var gain, Var bias, double eps) {
  const Tensor& av = a.value();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  const std::size_t c = av.cols();
  if (gv.rows() != 1 || gv.cols() != c) shape_error("layer_norm gain", av, gv);
  if (bv.rows() != 1 || bv.cols() != c) shape_error("layer_norm bias", av, bv);
  const std::size_t rows = av.rows();
  Tensor normed(av.shape(), std::vector<double>(av.size()));
  std::vector<double> inv_std(rows);
  Tensor out(av.shape(), std::vector<double>(av.size()));
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += x[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (x[j] - mu) * inv_std[r];
      normed(r, j) = xh;
      out(r, j) = xh * gv[j] + bv[j];
    }
  }
  return a.graph->push(
      std::move(out), {a, gain, bias},
      [a, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std)](
          Graph& g, std::size_t self) {
        const Tensor& up = g.upstream(self);
        const std::size_t c = up.cols();
        const double n = static_cast<double>(c);
        if (Tensor* gg = grad_if(g, gain)) {
          for (std::size_t i = 0; i < up.size(); ++i) (*gg)[i % c] += up[i] * normed[i];
        }
        if (Tensor* gb = grad_if(g, bias)) {
          for (std::size_t i = 0; i < up.size(); ++i) (*gb)[i % c] += up[i];
        }
        if (Tensor* ga = grad_if(g, a)) {
          const Tensor& gv = gain.value();
          for (std::size_t r = 0; r < up.rows(); ++r) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = up(r, j) * gv[j];
              mean_d += d;
              mean_dx += d * normed(r, j);
            }
            mean_d /= n;
            mean_dx /= n;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = up(r, j) * gv[j];
              (*ga)(r, j) += inv_std[r] * (d - mean_d - normed(r, j) * mean_dx);
            }
          }
        }
      });
}

Var gelu(Var a) {
  // tanh approximation
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor out = a.value();
  for (double& x : out.values()) {
    x = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  return a.graph->push(std::move(out), {a}, [a](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    const Tensor& xv = a.value();
    Tensor& ga = g.pass_grad(a.id);
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double x = xv[i];
      const double t = std::tanh(kC * (x + kA * x * x * x));
      const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
      ga[i] += up[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
    }
  });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& x : out.values()) x = std::tanh(x);
  return a.graph->push(std::move(out), {a}, [a](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    const Tensor& y = g.value(self);
    Tensor& ga = g.pass_grad(a.id);
    for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] * (1.0 - y[i] * y[i]);
  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows();
  const std::size_t c = lv.cols();
  if (targets.size() != rows) {
    fail_invariant("cross_entropy: " + std::to_string(targets.size()) +
                   " targets for logits " + lv.shape_str());
  }
  Tensor probs(lv.shape(), std::vector<double>(lv.size()));
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= c) fail_invariant("cross_entropy: target out of range");
    const double* x = lv.data() + r * c;
    const double mx = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(x[j] - mx);
    const double log_z = mx + std::log(z);
    loss += log_z - x[targets[r]];
    for (std::size_t j = 0; j < c; ++j) probs(r, j) = std::exp(x[j] - log_z);
  }
  loss /= static_cast<double>(rows);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return logits.graph->push(
      Tensor::scalar(loss), {logits},
      [logits, probs = std::move(probs), tgt = std::move(tgt)](Graph& g, std::size_t self) {
        const double up = g.upstream(self)[0] / static_cast<double>(tgt.size());
        Tensor& gl = g.pass_grad(logits.id);
        const std::size_t c = probs.cols();
        for (std::size_t r = 0; r < tgt.size(); ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            gl(r, j) += up * (probs(r, j) - (j == tgt[r] ? 1.0 : 0.0));
          }
        }
      });
}

Var masked_fill(Var a, const Tensor& mask, double fill) {
  const Tensor& av = a.value();
  if (!av.same_shape(mask)) shape_error("masked_fill", av, mask);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i] != 0.0) out[i] = fill;
  }
  return a.graph->push(std::move(out), {a}, [a, mask](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    Tensor& ga = g.pass_grad(a.id);
    for (std::size_t i = 0; i < up.size(); ++i) {
      if (mask[i] == 0.0) ga[i] += up[i];
    }
  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  const std::size_t c = tv.cols();
  if (ids.empty()) fail_invariant("gather_rows: no ids");
  Tensor out(ids.size(), c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      fail_invariant("gather_rows: id " + std::to_string(ids[i]) + " out of " + tv.shape_str());
    }
    std::copy(tv.data() + ids[i] * c, tv.data() + (ids[i] + 1) * c, out.data() + i * c);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return table.graph->push(std::move(out), {table},
                           [table, idx = std::move(idx)](Graph& g, std::size_t self) {
                             const Tensor& up = g.upstream(self);
                             Tensor& gt = g.pass_grad(table.id);
                             const std::size_t c = up.cols();
                             for (std::size_t i = 0; i < idx.size(); ++i) {
                               for (std::size_t j = 0; j < c; ++j) gt(idx[i], j) += up(i, j);
                             }
                           });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  if (count == 0 || start + count > av.rows()) {
    fail_invariant("slice_rows: [" + std::to_string(start) + ", +" +
                   std::to_string(count) + ") out of " + av.shape_str());
  }
  const std::size_t c = av.cols();
  std::vector<double> v(av.data() + start * c, av.data() + (start + count) * c);
  return a.graph->push(Tensor({count, c}, std::move(v)), {a},
                       [a, start](Graph& g, std::size_t self) {
                         const Tensor& up = g.upstream(self);
                         Tensor& ga = g.pass_grad(a.id);
                         const std::size_t off = start * up.cols();
                         for (std::size_t i = 0; i < up.size(); ++i) ga[off + i] += up[i];
                       });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  if (count == 0 || start + count > av.cols()) {
    fail_invariant("slice_cols: [" + std::to_string(start) + ", +" +
                   std::to_string(count) + ") out of " + av.shape_str());
  }
  Tensor out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t j = 0; j < count; ++j) out(r, j) = av(r, start + j);
  }
  return a.graph->push(std::move(out), {a}, [a, start](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    Tensor& ga = g.pass_grad(a.id);
    for (std::size_t r = 0; r < up.rows(); ++r) {
      for (std::size_t j = 0; j < up.cols(); ++j) ga(r, start + j) += up(r, j);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail_invariant("concat_rows: no operands");
  const std::size_t c = parts[0].value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != c) shape_error("concat_rows", parts[0].value(), p.value());
    rows += p.value().rows();
  }
  Tensor out(rows, c);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    std::copy(pv.data(), pv.data() + pv.size(), out.data() + off);
    off += pv.size();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].graph->push(std::move(out), parts, [ps](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    std::size_t off = 0;
    for (const Var& p : ps) {
      const std::size_t n = p.value().size();
      if (Tensor* gp = grad_if(g, p)) {
        for (std::size_t i = 0; i < n; ++i) (*gp)[i] += up[off + i];
      }
      off += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail_invariant("concat_cols: no operands");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
    cols += p.value().cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.data() + r * pv.cols(), pv.data() + (r + 1) * pv.cols(),
                out.data() + r * cols + off);
    }
    off += pv.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].graph->push(std::move(out), parts, [ps](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    const std::size_t cols = up.cols();
    std::size_t off = 0;
    for (const Var& p : ps) {
      const std::size_t pc = p.value().cols();
      if (Tensor* gp = grad_if(g, p)) {
        for (std::size_t r = 0; r < up.rows(); ++r) {
          for (std::size_t j = 0; j < pc; ++j) (*gp)(r, j) += up[r * cols + off + j];
        }
      }
      off += pc;
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.graph->push(Tensor::scalar(s), {a}, [a](Graph& g, std::size_t self) {
    const double up = g.upstream(self)[0];
    for (double& v : g.pass_grad(a.id).values()) v += up;
  });
}

Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var hinge(Var x, double threshold) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::max(0.0, threshold - v);
  return x.graph->push(std::move(out), {x}, [x, threshold](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    const Tensor& xv = x.value();
    Tensor& gx = g.pass_grad(x.id);
    for (std::size_t i = 0; i < up.size(); ++i) {
      if (xv[i] < threshold) gx[i] -= up[i];
    }
  });
}

// ------------------------------------------------------------ grad_check

GradCheckReport grad_check(const ScalarFn& f, std::span<Tensor> params,
                           double step, double tol) {
  if (!(step > 0.0)) fail_usage("grad_check: step must be positive");

  auto evaluate = [&]() {
    Graph g(false);
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (Tensor& p : params) leaves.push_back(g.leaf(p, false));
    return f(g, leaves).value().item();
  };

  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (Tensor& p : params) leaves.push_back(g.leaf(p, true));
  Var loss = f(g, leaves);
  const double base = loss.value().item();
  if (evaluate() != base || evaluate() != base) {
    fail_invariant("grad_check: function is not deterministic");
  }
  g.backward(loss);

  GradCheckReport report;
  report.passed = true;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p];
    // Unreached leaves have no gradient buffer: the loss does not depend on them.
    const bool reached = g.has_grad(leaves[p].id);
    double worst = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + step;
      const double fp = evaluate();
      t[i] = saved - step;
      const double fm = evaluate();
      t[i] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = reached ? leaves[p].grad()[i] : 0.0;
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    report.max_rel_error.push_back(worst);
    report.worst = std::max(report.worst, worst);
    if (worst > tol) report.passed = false;
  }
  return report;
}

}  // namespace hmslab::ad
