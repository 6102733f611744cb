// Copyright 2026 The MPNS Lab Authors
// SPDX-License-Identifier: Apache-2.0

/// @file diffcore.hpp
/// Eager, tape-based reverse-mode differentiation over dense row-major
/// double matrices, plus the Adam optimizer.
///
/// A Tape records every node created during one forward pass in creation
/// order, which is already a topological order. `Tape::backward` walks the
/// tape in reverse. Parameters live outside the tape and are bound to leaf
/// nodes with `Tape::param`; their gradients accumulate into
/// `Parameter::grad` until the trainer zeroes them.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mpns/errors.hpp"

namespace mpns {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_str(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw ValidationError(what + ": matrix contains NaN or Inf");
}

/// Builds a matrix from row-major values, checking length and finiteness.
inline Matrix make_matrix(Eigen::Index rows, Eigen::Index cols, std::span<const double> data) {
  if (rows <= 0 || cols <= 0) throw DimensionError("make_matrix: non-positive shape");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw DimensionError("make_matrix: expected " + std::to_string(rows * cols) + " values, got " +
                         std::to_string(data.size()));
  }
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  require_finite(m, "make_matrix");
  return m;
}

inline Matrix make_matrix(Eigen::Index rows, Eigen::Index cols, std::initializer_list<double> data) {
  return make_matrix(rows, cols, std::span<const double>(data.begin(), data.size()));
}

/// A trainable tensor that outlives individual tapes.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  /// Accumulated gradient; empty (0x0) when nothing has flowed in.
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = true) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var constant(Matrix value) { return leaf(std::move(value), false); }

  /// Binds a parameter; gradients flowing into the leaf land in `p.grad`.
  Var param(Parameter& p) {
    Node n;
    n.value = p.value;
    n.requires_grad = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Records an operation result. The backward rule is dropped when no
  /// parent requires a gradient.
  Var record(Matrix value, std::initializer_list<std::size_t> parents, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    for (std::size_t p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    n.is_leaf = false;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var record(Matrix value, const std::vector<std::size_t>& parents, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    for (std::size_t p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    n.is_leaf = false;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->grad : n.grad;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    Matrix& target = n.param ? n.param->grad : n.grad;
    if (target.size() == 0) {
      target = g;
    } else {
      target += g;
    }
  }

  /// Populates gradients of `root` with respect to every requires-grad node.
  /// Intermediate gradients are recomputed on each call; leaf and parameter
  /// gradients accumulate across calls.
  void backward(Var root) {
    if (root.rows() != 1 || root.cols() != 1) {
      throw ValidationError("backward: root must be scalar, got " + shape_str(root.value()));
    }
    for (Node& n : nodes_) {
      if (!n.is_leaf) n.grad.resize(0, 0);
    }
    accumulate(root.id(), Matrix::Ones(1, 1));
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Clears gradients held on non-parameter leaves.
  void zero_grad() {
    for (Node& n : nodes_) {
      if (!n.param) n.grad.resize(0, 0);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool is_leaf = true;
  };

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline const Matrix& Var::grad() const { return tape_->grad(id_); }

namespace detail {

inline void check_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw ValidationError(std::string(op) + ": operands on different tapes");
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  check_same_tape(a, b, op);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: shape mismatch " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
  }
  Matrix out;
  out.noalias() = a.value() * b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

/// x [n x k] plus a row vector bias [1 x k] broadcast over rows.
inline Var add_row(Var x, Var bias) {
  detail::check_same_tape(x, bias, "add_row");
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_row: shape mismatch " + shape_str(x.value()) + " vs " +
                         shape_str(bias.value()));
  }
  Matrix out = x.value().rowwise() + bias.value().row(0);
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(out), {ix, ib}, [ix, ib](Tape& t, const Matrix& g) {
    t.accumulate(ix, g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  detail::check_same_shape(a, b, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::check_same_shape(a, b, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

/// Hadamard product.
inline Var mul(Var a, Var b) {
  detail::check_same_shape(a, b, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

inline Var scale(Var x, double c) {
  const std::size_t ix = x.id();
  return x.tape().record(x.value() * c, {ix}, [ix, c](Tape& t, const Matrix& g) { t.accumulate(ix, g * c); });
}

inline Var negate(Var x) { return scale(x, -1.0); }

inline Var add_scalar(Var x, double c) {
  const std::size_t ix = x.id();
  Matrix out = x.value().array() + c;
  return x.tape().record(std::move(out), {ix}, [ix](Tape& t, const Matrix& g) { t.accumulate(ix, g); });
}

inline Var tanh(Var x) {
  const std::size_t ix = x.id();
  Matrix out = x.value().array().tanh();
  const std::size_t self = x.tape().size();
  return x.tape().record(std::move(out), {ix}, [ix, self](Tape& t, const Matrix& g) {
    const auto y = t.value(self).array();
    t.accumulate(ix, (g.array() * (1.0 - y * y)).matrix());
  });
}

inline Var sigmoid(Var x) {
  const std::size_t ix = x.id();
  Matrix out = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  const std::size_t self = x.tape().size();
  return x.tape().record(std::move(out), {ix}, [ix, self](Tape& t, const Matrix& g) {
    const auto y = t.value(self).array();
    t.accumulate(ix, (g.array() * y * (1.0 - y)).matrix());
  });
}

inline Var relu(Var x) {
  const std::size_t ix = x.id();
  Matrix out = x.value().cwiseMax(0.0);
  return x.tape().record(std::move(out), {ix}, [ix](Tape& t, const Matrix& g) {
    t.accumulate(ix, (g.array() * (t.value(ix).array() > 0.0).cast<double>()).matrix());
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Var sum(Var x) {
  const std::size_t ix = x.id();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape().record(std::move(out), {ix}, [ix](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ix);
    t.accumulate(ix, Matrix::Constant(xv.rows(), xv.cols(), g(0, 0)));
  });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> widths;
  for (const Var& p : parts) {
    detail::check_same_tape(parts.front(), p, "concat_cols");
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().value()) + " vs " +
                           shape_str(p.value()));
    }
    cols += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape().record(std::move(out), ids, [ids, widths](Tape& t, const Matrix& g) {
    Eigen::Index offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleCols(offset, widths[k]));
      offset += widths[k];
    }
  });
}

inline Var slice_cols(Var x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count <= 0 || begin + count > x.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " + shape_str(x.value()));
  }
  const std::size_t ix = x.id();
  Matrix out = x.value().middleCols(begin, count);
  return x.tape().record(std::move(out), {ix}, [ix, begin, count](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ix);
    Matrix full = Matrix::Zero(xv.rows(), xv.cols());
    full.middleCols(begin, count) = g;
    t.accumulate(ix, full);
  });
}

/// Stops gradient flow: a constant copy of `x`'s value on the same tape.
inline Var detach(Var x) { return x.tape().constant(x.value()); }

// ---------------------------------------------------------------------------
// Losses and special layers

/// Per-row cosine similarity, [n x k] x [n x k] -> [n x 1]. The norm product
/// is floored at 1e-12; below the floor the denominator is a constant.
inline Var row_cosine(Var a, Var b) {
  detail::check_same_shape(a, b, "row_cosine");
  constexpr double kFloor = 1e-12;
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Eigen::Index n = av.rows();
  Matrix out(n, 1);
  Eigen::VectorXd denom(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = std::max(av.row(i).norm() * bv.row(i).norm(), kFloor);
    denom(i) = d;
    out(i, 0) = av.row(i).dot(bv.row(i)) / d;
  }
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t self = a.tape().size();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, self, denom](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    const Matrix& c = t.value(self);
    const bool need_a = t.requires_grad(ia), need_b = t.requires_grad(ib);
    Matrix ga = Matrix::Zero(av.rows(), av.cols());
    Matrix gb = Matrix::Zero(bv.rows(), bv.cols());
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      const double na2 = av.row(i).squaredNorm();
      const double nb2 = bv.row(i).squaredNorm();
      const bool floored = std::sqrt(na2 * nb2) <= kFloor;
      const double gi = g(i, 0);
      if (need_a) {
        ga.row(i) = bv.row(i) / denom(i);
        if (!floored) ga.row(i) -= c(i, 0) * av.row(i) / na2;
        ga.row(i) *= gi;
      }
      if (need_b) {
        gb.row(i) = av.row(i) / denom(i);
        if (!floored) gb.row(i) -= c(i, 0) * bv.row(i) / nb2;
        gb.row(i) *= gi;
      }
    }
    if (need_a) t.accumulate(ia, ga);
    if (need_b) t.accumulate(ib, gb);
  });
}

/// Per-row cross-entropy -log softmax(logits)[label], [n x K] -> [n x 1].
inline Var softmax_cross_entropy_rows(Var logits, std::span<const int> labels) {
  const Matrix& z = logits.value();
  const Eigen::Index n = z.rows(), k = z.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(z));
  }
  Matrix probs(n, k);
  Matrix out(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= k) {
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(k) + ")");
    }
    const double zmax = z.row(i).maxCoeff();
    probs.row(i) = (z.row(i).array() - zmax).exp();
    const double total = probs.row(i).sum();
    probs.row(i) /= total;
    out(i, 0) = std::log(total) + zmax - z(i, label);
  }
  std::vector<int> owned(labels.begin(), labels.end());
  const std::size_t iz = logits.id();
  return logits.tape().record(std::move(out), {iz},
                              [iz, probs = std::move(probs), owned = std::move(owned)](Tape& t, const Matrix& g) {
                                Matrix gz = probs;
                                for (Eigen::Index i = 0; i < gz.rows(); ++i) {
                                  gz(i, owned[static_cast<std::size_t>(i)]) -= 1.0;
                                  gz.row(i) *= g(i, 0);
                                }
                                t.accumulate(iz, gz);
                              });
}

/// Mean cross-entropy over rows; a 1x1 node.
inline Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  return mean(softmax_cross_entropy_rows(logits, labels));
}

/// Identity on values; multiplies the incoming gradient by -lambda.
inline Var gradient_reversal(Var x, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("gradient_reversal: lambda must be nonnegative");
  const std::size_t ix = x.id();
  return x.tape().record(x.value(), {ix}, [ix, lambda](Tape& t, const Matrix& g) { t.accumulate(ix, -lambda * g); });
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Matrix m;
  Matrix v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of `param` in place.
inline void adam_step(Matrix& param, const Matrix& grad, AdamState& state, const AdamConfig& cfg) {
  if (grad.rows() != param.rows() || grad.cols() != param.cols()) {
    throw DimensionError("adam_step: gradient " + shape_str(grad) + " vs parameter " + shape_str(param));
  }
  if (state.m.size() == 0) {
    state.m = Matrix::Zero(param.rows(), param.cols());
    state.v = Matrix::Zero(param.rows(), param.cols());
  }
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  param.array() -= cfg.lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + cfg.eps);
}

/// Adam over a fixed, ordered set of parameters.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg), states_(params_.size()) {}

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) adam_step(params_[i]->value, params_[i]->grad, states_[i], cfg_);
  }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }

  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<AdamState> states_;
};

}  // namespace mpns
