// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dssvae/errors.hpp"
#include "dssvae/tensor.hpp"

namespace dssvae {

enum class ParamGroup { kMain, kAdversary };

inline const char* group_name(ParamGroup g) {
  return g == ParamGroup::kMain ? "main" : "adversary";
}

/// A trainable tensor. The gradient buffer accumulates across backward
/// passes until zero_grad().
struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::kMain;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, ParamGroup g, Tensor v)
      : name(std::move(n)), group(g), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad = Tensor(value.rows(), value.cols()); }
};

namespace ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the
/// tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record of one forward pass. Nodes are appended in
/// execution order, so every operand precedes its consumer and a single
/// reverse sweep visits each node once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  /// Differentiable input owned by the tape; read its gradient from the
  /// returned Var after backward().
  Var leaf(Tensor value) { return push(std::move(value), true, nullptr); }

  /// Binds a parameter. Trainable bindings accumulate into param.grad on
  /// backward(); frozen bindings behave as constants.
  Var param(Parameter& p, bool trainable = true) {
    Node n;
    n.borrowed = &p.value;
    n.requires_grad = trainable;
    n.param = trainable ? &p : nullptr;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Var frozen(const Parameter& p) {
    Node n;
    n.borrowed = &p.value;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  /// Records an operation result. The backward rule is dropped when no
  /// operand needs a gradient.
  Var record(Tensor value, bool requires_grad, BackwardFn backward) {
    if (!value.all_finite()) throw NumericError("non-finite value produced in forward pass");
    return push(std::move(value), requires_grad, requires_grad ? std::move(backward) : nullptr);
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer for a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
      const Tensor& v = value(id);
      n.grad = Tensor(v.rows(), v.cols());
    }
    return n.grad;
  }

  const Tensor& grad_or_empty(std::size_t id) const { return nodes_[id].grad; }

  std::size_t size() const { return nodes_.size(); }

  void mark_nondifferentiable() { nondifferentiable_ = true; }
  bool nondifferentiable() const { return nondifferentiable_; }

  void backward(const Var& loss) {
    if (loss.value().size() != 1) {
      throw ContractError("backward() requires a scalar loss, got " + shape_string(loss.value()));
    }
    if (!nodes_[loss.id()].requires_grad) return;
    grad(loss.id())[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        n.param->grad.mat() += n.grad.mat();
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool nondifferentiable_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad_or_empty(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline void same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

/// Copies the value onto `tape` as a constant: no gradient flows back.
inline Var detach(const Var& a, Tape& tape) { return tape.constant(a.value()); }
inline Var detach(const Var& a) { return detach(a, a.tape()); }

/// a + b. `b` may be a 1 x n row broadcast over the rows of `a`.
inline Var add(const Var& a, const Var& b) {
  detail::same_tape(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool broadcast = bv.rows() == 1 && av.rows() > 1 && bv.cols() == av.cols();
  if (!broadcast) require_same_shape(av, bv, "add");
  Tensor out = av;
  if (broadcast) {
    out.mat().rowwise() += bv.mat().row(0);
  } else {
    out.mat() += bv.mat();
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), a.requires_grad() || b.requires_grad(),
                         [ia, ib, broadcast](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ia)) t.grad(ia).mat() += g.mat();
                           if (t.requires_grad(ib)) {
                             if (broadcast) {
                               t.grad(ib).mat() += g.mat().colwise().sum();
                             } else {
                               t.grad(ib).mat() += g.mat();
                             }
                           }
                         });
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out.mat() -= b.value().mat();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), a.requires_grad() || b.requires_grad(),
                         [ia, ib](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ia)) t.grad(ia).mat() += g.mat();
                           if (t.requires_grad(ib)) t.grad(ib).mat() -= g.mat();
                         });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  out.mat().array() *= b.value().mat().array();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), a.requires_grad() || b.requires_grad(),
                         [ia, ib](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ia)) {
                             t.grad(ia).mat().array() += g.mat().array() * t.value(ib).mat().array();
                           }
                           if (t.requires_grad(ib)) {
                             t.grad(ib).mat().array() += g.mat().array() * t.value(ia).mat().array();
                           }
                         });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out.mat() *= s;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia, s](Tape& t, std::size_t self) {
    t.grad(ia).mat() += s * t.grad(self).mat();
  });
}

inline Var matmul(const Var& a, const Var& b) {
  detail::same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(av) + " * " + shape_string(bv));
  }
  Tensor out(av.rows(), bv.cols());
  out.mat().noalias() = av.mat() * bv.mat();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), a.requires_grad() || b.requires_grad(),
                         [ia, ib](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ia)) {
                             t.grad(ia).mat().noalias() += g.mat() * t.value(ib).mat().transpose();
                           }
                           if (t.requires_grad(ib)) {
                             t.grad(ib).mat().noalias() += t.value(ia).mat().transpose() * g.mat();
                           }
                         });
}

/// x * W + b with b a 1 x n row.
inline Var linear(const Var& x, const Var& w, const Var& b) {
  detail::same_tape(x, w, "linear");
  detail::same_tape(x, b, "linear");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw ShapeError("linear: incompatible shapes x " + shape_string(xv) + ", W " +
                     shape_string(wv) + ", b " + shape_string(bv));
  }
  Tensor out(xv.rows(), wv.cols());
  out.mat().noalias() = xv.mat() * wv.mat();
  out.mat().rowwise() += bv.mat().row(0);
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  return x.tape().record(std::move(out), rg, [ix, iw, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ix)) t.grad(ix).mat().noalias() += g.mat() * t.value(iw).mat().transpose();
    if (t.requires_grad(iw)) t.grad(iw).mat().noalias() += t.value(ix).mat().transpose() * g.mat();
    if (t.requires_grad(ib)) t.grad(ib).mat() += g.mat().colwise().sum();
  });
}

namespace detail {

template <class Fwd, class Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out = a.value();
  for (double& v : out.data()) v = fwd(v);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia, deriv](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto x = t.value(ia).data();
    const auto y = t.value(self).data();
    auto ga = t.grad(ia).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace detail

inline Var sigmoid(const Var& a) {
  return detail::unary(a, detail::sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log of a nonpositive value");
  }
  return detail::unary(a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

/// Sum of all entries, as a 1 x 1 scalar.
inline Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().mat().sum());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia](Tape& t, std::size_t self) {
    t.grad(ia).mat().array() += t.grad(self)[0];
  });
}

inline Var concat_cols(const Var& a, const Var& b) {
  detail::same_tape(a, b, "concat_cols");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row counts differ");
  Tensor out(av.rows(), av.cols() + bv.cols());
  out.mat().leftCols(av.cols()) = av.mat();
  out.mat().rightCols(bv.cols()) = bv.mat();
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t na = av.cols(), nb = bv.cols();
  return a.tape().record(std::move(out), a.requires_grad() || b.requires_grad(),
                         [ia, ib, na, nb](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ia)) t.grad(ia).mat() += g.mat().leftCols(na);
                           if (t.requires_grad(ib)) t.grad(ib).mat() += g.mat().rightCols(nb);
                         });
}

inline Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  if (count == 0 || start + count > av.cols()) throw ShapeError("slice_cols: range out of bounds");
  Tensor out(av.rows(), count);
  out.mat() = av.mat().middleCols(start, count);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [ia, start, count](Tape& t, std::size_t self) {
                           t.grad(ia).mat().middleCols(start, count) += t.grad(self).mat();
                         });
}

/// Embedding lookup: row ids[i] of `table` becomes row i of the result.
inline Var gather_rows(const Var& table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  if (ids.empty()) throw ShapeError("gather_rows: empty id list");
  Tensor out(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " out of range");
    }
    out.mat().row(i) = tv.mat().row(ids[i]);
  }
  const std::size_t it = table.id();
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape().record(std::move(out), table.requires_grad(),
                             [it, idx = std::move(idx)](Tape& t, std::size_t self) {
                               const Tensor& g = t.grad(self);
                               Tensor& gt = t.grad(it);
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 gt.mat().row(idx[i]) += g.mat().row(i);
                               }
                             });
}

/// Per-row select: mask[r] = 1 keeps row r of `fresh`, 0 keeps `old`.
/// Used to freeze finished sequences inside a padded batch.
inline Var masked_blend(const Var& fresh, const Var& old, std::span<const double> mask) {
  detail::same_tape(fresh, old, "masked_blend");
  require_same_shape(fresh.value(), old.value(), "masked_blend");
  if (mask.size() != fresh.rows()) throw ShapeError("masked_blend: mask length mismatch");
  Tensor out = old.value();
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (mask[r] != 0.0) out.mat().row(r) = fresh.value().mat().row(r);
  }
  const std::size_t inew = fresh.id(), iold = old.id();
  std::vector<double> m(mask.begin(), mask.end());
  return fresh.tape().record(std::move(out), fresh.requires_grad() || old.requires_grad(),
                             [inew, iold, m = std::move(m)](Tape& t, std::size_t self) {
                               const Tensor& g = t.grad(self);
                               for (std::size_t r = 0; r < m.size(); ++r) {
                                 const std::size_t target = m[r] != 0.0 ? inew : iold;
                                 if (t.requires_grad(target)) {
                                   t.grad(target).mat().row(r) += g.mat().row(r);
                                 }
                               }
                             });
}

/// One-hot of each row's argmax (lowest index on ties). Not
/// differentiable; marks the tape so grad_check can refuse it.
inline Var argmax_onehot(const Var& a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < av.cols(); ++c) {
      if (av(r, c) > av(r, best)) best = c;
    }
    out(r, best) = 1.0;
  }
  a.tape().mark_nondifferentiable();
  return a.tape().constant(std::move(out));
}

}  // namespace ad
}  // namespace dssvae
