#pragma once

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation of one forward pass. Nodes that do not
// depend on a parameter carry no backward closure, so inference on a tape
// built only from constants costs little more than plain evaluation.
// Values live on the tape and are addressed by id; a Var is a (tape, id)
// handle and is only valid while its tape is alive.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccl/errors.hpp"

namespace ccl::ad {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  int id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool defined() const noexcept { return tape_ != nullptr; }

  inline const Matrix& value() const;
  inline const Matrix& grad() const;
  inline bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() { nodes_.reserve(512); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Owned constant; never receives a gradient.
  Var constant(Matrix value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  /// Borrowed leaf. `value` must outlive the tape.
  Var leaf(const Matrix& value, bool requires_grad) {
    Node n;
    n.ref = &value;
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  /// Records an operation. `backward` receives the gradient of the output
  /// and accumulates into its inputs; it is dropped if no input needs one.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    Node n;
    n.owned = std::move(value);
    for (const Var& in : inputs) n.requires_grad = n.requires_grad || requires_grad(in.id());
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  Var record(Matrix value, std::span<const Var> inputs, Backward backward) {
    Node n;
    n.owned = std::move(value);
    for (const Var& in : inputs) n.requires_grad = n.requires_grad || requires_grad(in.id());
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  const Matrix& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.ref != nullptr ? *n.ref : n.owned;
  }

  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Gradient of the last backward() root with respect to node `id`.
  /// Zero-sized if nothing flowed into the node.
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  template <class Expr>
  void accumulate(int id, const Expr& contribution) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = contribution;
    } else {
      n.grad += contribution;
    }
  }

  /// Backpropagates from a 1x1 root with seed gradient `seed`.
  void backward(Var root, double seed = 1.0) {
    const Matrix& rv = value(root.id());
    if (rv.rows() != 1 || rv.cols() != 1) {
      throw ValidationError("backward: root must be a scalar, got " + std::to_string(rv.rows()) +
                            "x" + std::to_string(rv.cols()));
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    if (!requires_grad(root.id())) return;
    nodes_[static_cast<std::size_t>(root.id())].grad = Matrix::Constant(1, 1, seed);
    for (int id = root.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.backward || n.grad.size() == 0) continue;
      // The closure may accumulate into nodes below `id` only, so n.grad is stable.
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline const Matrix& Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ValidationError("matmul: inner dimension mismatch");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

/// a · bᵀ
inline Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw ValidationError("matmul_nt: inner dimension mismatch");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value().transpose(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.transpose() * tp.value(ia));
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, -g);
  });
}

/// Adds a 1xC row to every row of a.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ValidationError("add_row: bias shape mismatch");
  Tape& t = *a.tape();
  const int ia = a.id(), ir = row.id();
  Matrix v = a.value();
  v.rowwise() += row.value().row(0);
  return t.record(std::move(v), {a, row}, [ia, ir](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ir)) tp.accumulate(ir, g.colwise().sum());
  });
}

/// x · W + b
inline Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

inline Var scale(Var a, double s) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value() * s, {a}, [ia, s](Tape& tp, const Matrix& g) { tp.accumulate(ia, g * s); });
}

/// Multiplies a by a learnable 1x1 scalar.
inline Var scale_by(Var a, Var s) {
  if (s.rows() != 1 || s.cols() != 1) throw ValidationError("scale_by: scale must be 1x1");
  Tape& t = *a.tape();
  const int ia = a.id(), is = s.id();
  return t.record(a.value() * s.scalar(), {a, s}, [ia, is](Tape& tp, const Matrix& g) {
    const double sv = tp.value(is)(0, 0);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * sv);
    if (tp.requires_grad(is)) tp.accumulate(is, Matrix::Constant(1, 1, (g.array() * tp.value(ia).array()).sum()));
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.cols()) throw ValidationError("slice_cols: out of range");
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return t.record(a.value().middleCols(start, count), {a},
                  [ia, start, count, rows, cols](Tape& tp, const Matrix& g) {
                    Matrix full = Matrix::Zero(rows, cols);
                    full.middleCols(start, count) = g;
                    tp.accumulate(ia, full);
                  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  Tape& t = *parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ValidationError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    v.middleCols(offset, p.cols()) = p.value();
    layout.emplace_back(p.id(), offset);
    offset += p.cols();
  }
  return t.record(std::move(v), parts, [layout](Tape& tp, const Matrix& g) {
    for (const auto& [id, off] : layout) {
      if (tp.requires_grad(id)) tp.accumulate(id, g.middleCols(off, tp.value(id).cols()));
    }
  });
}

/// Rows of a at the given indices, in order.
inline Var gather_rows(Var a, std::vector<int> indices) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Matrix& av = a.value();
  Matrix v(static_cast<Eigen::Index>(indices.size()), av.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || indices[r] >= av.rows()) throw ValidationError("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(r)) = av.row(indices[r]);
  }
  const Eigen::Index rows = av.rows(), cols = av.cols();
  return t.record(std::move(v), {a}, [ia, indices = std::move(indices), rows, cols](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    for (std::size_t r = 0; r < indices.size(); ++r) full.row(indices[r]) += g.row(static_cast<Eigen::Index>(r));
    tp.accumulate(ia, full);
  });
}

/// Elementwise mean of equally shaped matrices.
inline Var average(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("average: no inputs");
  Tape& t = *parts.front().tape();
  Matrix v = parts.front().value();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    detail::require_same_shape(v, parts[i].value(), "average");
    v += parts[i].value();
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  v *= inv;
  std::vector<int> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return t.record(std::move(v), parts, [ids, inv](Tape& tp, const Matrix& g) {
    for (int id : ids) tp.accumulate(id, g * inv);
  });
}

/// Σ weight_i · term_i over 1x1 terms.
inline Var weighted_sum(Tape& t, std::span<const Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) throw ValidationError("weighted_sum: size mismatch");
  double total = 0.0;
  std::vector<std::pair<int, double>> ids;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    total += weights[i] * terms[i].scalar();
    ids.emplace_back(terms[i].id(), weights[i]);
  }
  return t.record(Matrix::Constant(1, 1, total), terms, [ids](Tape& tp, const Matrix& g) {
    for (const auto& [id, w] : ids) tp.accumulate(id, g * w);
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

/// tanh approximation of GELU; smooth everywhere.
inline Var gelu(Var a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix v = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); });
  return t.record(std::move(v), {a}, [ia](Tape& tp, const Matrix& g) {
    Matrix d = tp.value(ia).unaryExpr([](double x) {
      const double th = std::tanh(k * (x + c * x * x * x));
      return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * k * (1.0 + 3.0 * c * x * x);
    });
    tp.accumulate(ia, g.cwiseProduct(d));
  });
}

inline double logistic(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape();
  Matrix v = a.value().unaryExpr([](double x) { return logistic(x); });
  const int ia = a.id();
  const int out_id = static_cast<int>(t.size());
  return t.record(std::move(v), {a}, [ia, out_id](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(out_id);
    tp.accumulate(ia, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

inline Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  const int ia = a.id();
  const int out_id = static_cast<int>(t.size());
  return t.record(std::move(y), {a}, [ia, out_id](Tape& tp, const Matrix& g) {
    const Matrix& yv = tp.value(out_id);
    Eigen::VectorXd dots = g.cwiseProduct(yv).rowwise().sum();
    Matrix d = g;
    d.colwise() -= dots;
    tp.accumulate(ia, yv.cwiseProduct(d));
  });
}

/// Scales each row to unit L2 norm. A zero row has no direction and is rejected.
inline Var normalize_rows(Var a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Eigen::VectorXd norms = x.rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r) {
    if (!std::isfinite(norms(r))) {
      throw DivergenceError("normalize_rows: row " + std::to_string(r) + " has a non-finite norm");
    }
    if (!(norms(r) > 0.0)) throw ValidationError("normalize_rows: row " + std::to_string(r) + " has zero norm");
  }
  Matrix y = norms.cwiseInverse().asDiagonal() * x;
  const int ia = a.id();
  const int out_id = static_cast<int>(t.size());
  return t.record(std::move(y), {a}, [ia, out_id, norms](Tape& tp, const Matrix& g) {
    const Matrix& yv = tp.value(out_id);
    Eigen::VectorXd dots = g.cwiseProduct(yv).rowwise().sum();
    Matrix d = g - dots.asDiagonal() * yv;
    tp.accumulate(ia, norms.cwiseInverse().asDiagonal() * d);
  });
}

/// Row-wise layer normalization with learnable 1xC gain and bias.
inline Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  const Eigen::Index cols = x.cols();
  if (gain.cols() != cols || bias.cols() != cols) throw ValidationError("layer_norm: parameter width mismatch");
  Matrix xhat(x.rows(), cols);
  Eigen::VectorXd rstd(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    rstd(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * rstd(r);
  }
  Matrix y = xhat.array().rowwise() * gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  const int ia = a.id(), ig = gain.id(), ib = bias.id();
  return t.record(std::move(y), {a, gain, bias},
                  [ia, ig, ib, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(ig)) tp.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
                    if (tp.requires_grad(ib)) tp.accumulate(ib, g.colwise().sum());
                    if (!tp.requires_grad(ia)) return;
                    const Matrix dxhat = g.array().rowwise() * tp.value(ig).row(0).array();
                    const double n = static_cast<double>(dxhat.cols());
                    Matrix dx(dxhat.rows(), dxhat.cols());
                    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                      const double m1 = dxhat.row(r).sum() / n;
                      const double m2 = dxhat.row(r).dot(xhat.row(r)) / n;
                      dx.row(r) = rstd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                    }
                    tp.accumulate(ia, dx);
                  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return t.record(Matrix::Constant(1, 1, a.value().sum()), {a}, [ia, rows, cols](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, Matrix::Constant(rows, cols, g(0, 0)));
  });
}

/// Symmetric InfoNCE over a KxK logit matrix whose diagonal holds the
/// positive pairs: mean row-wise and mean column-wise cross-entropy.
inline Var symmetric_info_nce(Var logits) {
  const Matrix& s = logits.value();
  if (s.rows() != s.cols() || s.rows() == 0) throw ValidationError("symmetric_info_nce: logits must be square");
  const Eigen::Index k = s.rows();
  Matrix p_row(k, k), p_col(k, k);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double mr = s.row(i).maxCoeff();
    const double zr = (s.row(i).array() - mr).exp().sum();
    p_row.row(i) = (s.row(i).array() - mr).exp() / zr;
    loss += (mr + std::log(zr)) - s(i, i);
    const double mc = s.col(i).maxCoeff();
    const double zc = (s.col(i).array() - mc).exp().sum();
    p_col.col(i) = (s.col(i).array() - mc).exp() / zc;
    loss += (mc + std::log(zc)) - s(i, i);
  }
  const double inv_k = 1.0 / static_cast<double>(k);
  Tape& t = *logits.tape();
  const int il = logits.id();
  Matrix dlogits = (p_row + p_col - 2.0 * Matrix::Identity(k, k)) * inv_k;
  return t.record(Matrix::Constant(1, 1, loss * inv_k), {logits},
                  [il, dlogits = std::move(dlogits)](Tape& tp, const Matrix& g) { tp.accumulate(il, dlogits * g(0, 0)); });
}

}  // namespace ccl::ad
