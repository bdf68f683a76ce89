// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mgae/errors.hpp"

namespace mgae {

/// Dense row-major matrix of doubles. Value type; copies are deep.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ShapeError("Matrix: data size does not match shape");
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols_, cols_); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Matrix& operator+=(const Matrix& o) {
    if (!same_shape(o)) throw ShapeError("Matrix +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

namespace detail {

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<EigenRowMajor> as_eigen(Matrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
inline Eigen::Map<const EigenRowMajor> as_eigen(const Matrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

}  // namespace detail

/// Named learnable tensors in deterministic (lexicographic) order.
class ParameterSet {
 public:
  using Map = std::map<std::string, Matrix>;

  void add(const std::string& name, Matrix value) {
    if (!tensors_.emplace(name, std::move(value)).second)
      throw ValidationError("ParameterSet: duplicate parameter name '" + name + "'");
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const Matrix& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ValidationError("ParameterSet: missing parameter '" + name + "'");
    return it->second;
  }
  Matrix& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ValidationError("ParameterSet: missing parameter '" + name + "'");
    return it->second;
  }

  std::size_t size() const { return tensors_.size(); }
  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& [_, m] : tensors_) n += m.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : tensors_) out.push_back(k);
    return out;
  }

  /// Same names and shapes.
  bool compatible_with(const ParameterSet& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    auto a = tensors_.begin();
    auto b = other.tensors_.begin();
    for (; a != tensors_.end(); ++a, ++b)
      if (a->first != b->first || !a->second.same_shape(b->second)) return false;
    return true;
  }

  /// Subset whose names start with any of `prefixes`.
  ParameterSet subset(std::initializer_list<std::string_view> prefixes) const {
    ParameterSet out;
    for (const auto& [k, v] : tensors_)
      for (auto p : prefixes)
        if (std::string_view(k).substr(0, p.size()) == p) {
          out.add(k, v);
          break;
        }
    return out;
  }

  void merge(const ParameterSet& other) {
    for (const auto& [k, v] : other.tensors_) add(k, v);
  }

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  bool operator==(const ParameterSet&) const = default;

 private:
  Map tensors_;
};

using GradientMap = std::map<std::string, Matrix>;

class Tape;

/// Handle to a node on a Tape. Invalidated when the tape is reset.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
  std::uint64_t generation = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
};

/**
 * Append-only record of forward operations.
 *
 * Node i only reads nodes with smaller ids, so reverse insertion order is a
 * valid topological order for the backward sweep. Nodes whose inputs carry
 * no gradient are stored without a backward closure.
 */
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  Var leaf(Matrix value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, {});
  }

  /// Leaf that reports its gradient under `name` in `backward`.
  Var parameter(const std::string& name, const Matrix& value) {
    Var v = push(value, true, {});
    param_names_.emplace_back(v.id, name);
    return v;
  }

  Var parameter(const ParameterSet& params, const std::string& name) {
    return parameter(name, params.at(name));
  }

  /// Records an op result. `inputs` decide whether the node needs a gradient.
  Var record(const char* op, Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
    if (!value.all_finite()) throw NumericalError(std::string(op) + ": non-finite output");
    bool needs = false;
    for (const Var& in : inputs) {
      check(in);
      needs = needs || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  Var record(const char* op, Matrix value, std::span<const Var> inputs, BackwardFn fn) {
    if (!value.all_finite()) throw NumericalError(std::string(op) + ": non-finite output");
    bool needs = false;
    for (const Var& in : inputs) {
      check(in);
      needs = needs || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Matrix& value(const Var& v) const {
    check(v);
    return nodes_[v.id].value;
  }
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var& v) const {
    check(v);
    return nodes_[v.id].requires_grad;
  }

  /// Gradient buffer of node `id`, zero-initialized on first access.
  Matrix& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }

  /**
   * Reverse sweep from a scalar `loss`. Returns the gradient of every
   * registered parameter (zero when the loss does not depend on it; repeated
   * registrations of one name are summed). The tape is reset afterwards.
   */
  GradientMap backward(const Var& loss) {
    check(loss);
    const Matrix& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1)
      throw ShapeError("backward: loss must be a 1x1 scalar, got " + shape_str(lv));
    if (nodes_[loss.id].requires_grad) {
      grad(loss.id)(0, 0) = 1.0;
      for (std::size_t i = loss.id + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        n.backward(*this, i);
      }
    }
    GradientMap out;
    for (const auto& [id, name] : param_names_) {
      const auto& n = nodes_[id];
      Matrix g = n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad;
      if (!g.all_finite()) throw NumericalError("backward: non-finite gradient for '" + name + "'");
      auto it = out.find(name);
      if (it == out.end())
        out.emplace(name, std::move(g));
      else
        it->second += g;
    }
    reset();
    return out;
  }

  void reset() {
    nodes_.clear();
    param_names_.clear();
    ++generation_;
  }

  void check(const Var& v) const {
    if (v.tape != this || v.generation != generation_ || v.id >= nodes_.size())
      throw ValidationError("tape: dangling or foreign tensor handle");
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Matrix value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, std::move(fn)});
    return Var{this, nodes_.size() - 1, generation_};
  }

  std::deque<Node> nodes_;  // deque: values stay put while the tape grows
  std::vector<std::pair<std::size_t, std::string>> param_names_;
  std::uint64_t generation_ = 0;
};

inline const Matrix& Var::value() const { return tape->value(*this); }
inline bool Var::requires_grad() const { return tape->requires_grad(*this); }

// ---------------------------------------------------------------------------
// Primitive ops. Each records its forward value and, when any input needs a
// gradient, a closure that accumulates into the inputs' gradient buffers.
// ---------------------------------------------------------------------------

namespace detail {

inline void same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape != b.tape) throw ValidationError(std::string(op) + ": operands live on different tapes");
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  detail::same_tape(a, b, "matmul");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: inner dimensions differ " + shape_str(av) + " x " + shape_str(bv));
  Matrix out(av.rows(), bv.cols());
  if (av.cols() > 0) detail::as_eigen(out).noalias() = detail::as_eigen(av) * detail::as_eigen(bv);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record("matmul", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia))
      detail::as_eigen(t.grad(ia)).noalias() += detail::as_eigen(g) * detail::as_eigen(t.value(ib)).transpose();
    if (t.requires_grad(ib))
      detail::as_eigen(t.grad(ib)).noalias() += detail::as_eigen(t.value(ia)).transpose() * detail::as_eigen(g);
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::same_tape(a, b, "add");
  detail::require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  out += b.value();
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record("add", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) += g;
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_tape(a, b, "sub");
  detail::require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record("sub", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var hadamard(const Var& a, const Var& b) {
  detail::same_tape(a, b, "hadamard");
  detail::require_same_shape(a.value(), b.value(), "hadamard");
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record("hadamard", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad(ia);
      const Matrix& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad(ib);
      const Matrix& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(const Var& a, double c) {
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  const std::size_t ia = a.id;
  return a.tape->record("scale", std::move(out), {a}, [ia, c](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

inline Var add_scalar(const Var& a, double c) {
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
  const std::size_t ia = a.id;
  return a.tape->record("add_scalar", std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    t.grad(ia) += t.grad(self);
  });
}

/// a + row, with `row` (1 x cols) broadcast over every row of `a`.
inline Var add_row(const Var& a, const Var& row) {
  detail::same_tape(a, row, "add_row");
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols())
    throw ShapeError("add_row: expected 1x" + std::to_string(av.cols()) + " row, got " + shape_str(rv));
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv(0, c);
  const std::size_t ia = a.id, ir = row.id;
  return a.tape->record("add_row", std::move(out), {a, row}, [ia, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ir)) {
      Matrix& gr = t.grad(ir);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
    }
  });
}

/// a * row elementwise, with `row` (1 x cols) broadcast over every row of `a`.
inline Var mul_row(const Var& a, const Var& row) {
  detail::same_tape(a, row, "mul_row");
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols())
    throw ShapeError("mul_row: expected 1x" + std::to_string(av.cols()) + " row, got " + shape_str(rv));
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= rv(0, c);
  const std::size_t ia = a.id, ir = row.id;
  return a.tape->record("mul_row", std::move(out), {a, row}, [ia, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(ia);
    const Matrix& rv = t.value(ir);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad(ia);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) * rv(0, c);
    }
    if (t.requires_grad(ir)) {
      Matrix& gr = t.grad(ir);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c) * av(r, c);
    }
  });
}

/// Spreads a 1 x (H*D) row into an (H*D) x H matrix whose column h holds
/// head h's D entries, so x * head_columns(a, H) yields per-head dot products.
inline Var head_columns(const Var& row, std::size_t heads) {
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || heads == 0 || rv.cols() % heads != 0)
    throw ShapeError("head_columns: expected a 1 x (heads*width) row, got " + shape_str(rv));
  const std::size_t width = rv.cols() / heads;
  Matrix out(rv.cols(), heads);
  for (std::size_t c = 0; c < rv.cols(); ++c) out(c, c / width) = rv(0, c);
  const std::size_t ir = row.id;
  return row.tape->record("head_columns", std::move(out), {row}, [ir, width](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& gr = t.grad(ir);
    for (std::size_t c = 0; c < gr.cols(); ++c) gr(0, c) += g(c, c / width);
  });
}

/// N x (H*D) -> N x D, averaging the H column blocks.
inline Var head_mean(const Var& x, std::size_t heads) {
  const Matrix& xv = x.value();
  if (heads == 0 || xv.cols() % heads != 0)
    throw ShapeError("head_mean: width " + std::to_string(xv.cols()) + " not divisible by heads");
  const std::size_t width = xv.cols() / heads;
  const double inv = 1.0 / static_cast<double>(heads);
  Matrix out(xv.rows(), width);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const double* src = xv.data().data() + r * xv.cols();
    double* dst = &out(r, 0);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t c = 0; c < width; ++c) dst[c] += src[h * width + c];
    for (std::size_t c = 0; c < width; ++c) dst[c] *= inv;
  }
  const std::size_t ix = x.id;
  return x.tape->record("head_mean", std::move(out), {x}, [ix, heads, width, inv](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad(ix);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double* src = g.data().data() + r * g.cols();
      double* dst = &gx(r, 0);
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t c = 0; c < width; ++c) dst[h * width + c] += inv * src[c];
    }
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p, "concat_cols");
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
    ids.push_back(p.id);
    offsets.push_back(off);
    off += v.cols();
  }
  return parts[0].tape->record("concat_cols", std::move(out), parts,
                               [ids, offsets](Tape& t, std::size_t self) {
                                 const Matrix& g = t.grad(self);
                                 for (std::size_t k = 0; k < ids.size(); ++k) {
                                   if (!t.requires_grad(ids[k])) continue;
                                   Matrix& gp = t.grad(ids[k]);
                                   for (std::size_t r = 0; r < gp.rows(); ++r)
                                     for (std::size_t c = 0; c < gp.cols(); ++c)
                                       gp(r, c) += g(r, offsets[k] + c);
                                 }
                               });
}

/// Gathers rows (repeats allowed); the gradient scatter-adds back.
inline Var row_slice(const Var& a, std::span<const std::int64_t> rows) {
  const Matrix& av = a.value();
  Matrix out(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    if (r < 0 || static_cast<std::size_t>(r) >= av.rows())
      throw ShapeError("row_slice: row " + std::to_string(r) + " out of range " + shape_str(av));
    std::copy(av.row(static_cast<std::size_t>(r)).begin(), av.row(static_cast<std::size_t>(r)).end(),
              out.row(i).begin());
  }
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  const std::size_t ia = a.id;
  return a.tape->record("row_slice", std::move(out), {a}, [ia, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = ga.row(static_cast<std::size_t>(idx[i]));
      auto src = g.row(i);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

/// Rows listed in `rows` are replaced by `token` (1 x cols); the rest pass
/// through bit-exactly. The token's gradient is the sum over replaced rows.
inline Var replace_rows(const Var& a, std::span<const std::int64_t> rows, const Var& token) {
  detail::same_tape(a, token, "replace_rows");
  const Matrix& av = a.value();
  const Matrix& tv = token.value();
  if (tv.rows() != 1 || tv.cols() != av.cols())
    throw ShapeError("replace_rows: token must be 1x" + std::to_string(av.cols()) + ", got " + shape_str(tv));
  std::vector<char> hit(av.rows(), 0);
  for (auto r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= av.rows())
      throw ValidationError("replace_rows: node " + std::to_string(r) + " out of range");
    hit[static_cast<std::size_t>(r)] = 1;
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    if (hit[r]) std::copy(tv.data().begin(), tv.data().end(), out.row(r).begin());
  const std::size_t ia = a.id, it = token.id;
  return a.tape->record("replace_rows", std::move(out), {a, token},
                        [ia, it, hit = std::move(hit)](Tape& t, std::size_t self) {
                          const Matrix& g = t.grad(self);
                          if (t.requires_grad(ia)) {
                            Matrix& ga = t.grad(ia);
                            for (std::size_t r = 0; r < g.rows(); ++r)
                              if (!hit[r])
                                for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c);
                          }
                          if (t.requires_grad(it)) {
                            Matrix& gt = t.grad(it);
                            for (std::size_t r = 0; r < g.rows(); ++r)
                              if (hit[r])
                                for (std::size_t c = 0; c < g.cols(); ++c) gt(0, c) += g(r, c);
                          }
                        });
}

inline Var leaky_relu(const Var& a, double slope) {
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] < 0) out[i] *= slope;
  const std::size_t ia = a.id;
  return a.tape->record("leaky_relu", std::move(out), {a}, [ia, slope](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(ia);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] < 0 ? slope * g[i] : g[i];
  });
}

inline Var elu(const Var& a, double alpha = 1.0) {
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] < 0) out[i] = alpha * std::expm1(out[i]);
  const std::size_t ia = a.id;
  return a.tape->record("elu", std::move(out), {a}, [ia, alpha](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(ia);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] < 0 ? g[i] * alpha * std::exp(x[i]) : g[i];
  });
}

/// Parametric ReLU with a single learnable 1x1 slope.
inline Var prelu(const Var& a, const Var& slope) {
  detail::same_tape(a, slope, "prelu");
  const Matrix& sv = slope.value();
  if (sv.rows() != 1 || sv.cols() != 1) throw ShapeError("prelu: slope must be 1x1");
  const double s = sv(0, 0);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] < 0) out[i] *= s;
  const std::size_t ia = a.id, is = slope.id;
  return a.tape->record("prelu", std::move(out), {a, slope}, [ia, is](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(ia);
    const double s = t.value(is)(0, 0);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] < 0 ? s * g[i] : g[i];
    }
    if (t.requires_grad(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] < 0) acc += x[i] * g[i];
      t.grad(is)(0, 0) += acc;
    }
  });
}

/// Inverted dropout: kept entries are scaled by 1/(1-rate); the mask is
/// saved for the backward pass. Identity when not training or rate == 0.
inline Var dropout(const Var& a, double rate, bool training, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return a;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = u(rng) >= rate ? keep_scale : 0.0;
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ia = a.id;
  return a.tape->record("dropout", std::move(out), {a}, [ia, mask = std::move(mask)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

inline Var reduce_sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id;
  return a.tape->record("reduce_sum", Matrix(1, 1, s), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

inline Var reduce_mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("reduce_mean: empty tensor");
  return scale(reduce_sum(a), 1.0 / static_cast<double>(n));
}

/// Row i becomes x_i / ||x_i||. Rows with norm <= eps have no direction;
/// they map to zero and pass no gradient.
inline Var l2_normalize_rows(const Var& a, double eps = 1e-12) {
  const Matrix& av = a.value();
  Matrix out = av;
  std::vector<double> norms(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double ss = 0.0;
    for (double v : av.row(r)) ss += v * v;
    norms[r] = std::sqrt(ss);
    for (double& v : out.row(r)) v = norms[r] > eps ? v / norms[r] : 0.0;
  }
  const std::size_t ia = a.id;
  return a.tape->record("l2_normalize_rows", std::move(out), {a},
                        [ia, eps, norms = std::move(norms)](Tape& t, std::size_t self) {
                          const Matrix& g = t.grad(self);
                          const Matrix& y = t.value(self);
                          Matrix& ga = t.grad(ia);
                          for (std::size_t r = 0; r < g.rows(); ++r) {
                            if (norms[r] <= eps) continue;
                            double dot = 0.0;
                            for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
                            for (std::size_t c = 0; c < g.cols(); ++c)
                              ga(r, c) += (g(r, c) - y(r, c) * dot) / norms[r];
                          }
                        });
}

/// Row-wise inner products: out(i, 0) = <a_i, b_i>.
inline Var rowwise_dot(const Var& a, const Var& b) {
  detail::same_tape(a, b, "rowwise_dot");
  detail::require_same_shape(a.value(), b.value(), "rowwise_dot");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) s += av(r, c) * bv(r, c);
    out(r, 0) = s;
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record("rowwise_dot", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad(ia);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) ga(r, c) += g(r, 0) * bv(r, c);
    }
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad(ib);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) gb(r, c) += g(r, 0) * av(r, c);
    }
  });
}

/// max(x, 0)^p elementwise, p >= 1.
inline Var pow_nonneg(const Var& a, double p) {
  if (p < 1.0) throw ValidationError("pow_nonneg: exponent must be >= 1");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(std::max(out[i], 0.0), p);
  const std::size_t ia = a.id;
  return a.tape->record("pow_nonneg", std::move(out), {a}, [ia, p](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(ia);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0)
        ga[i] += g[i] * p * std::pow(x[i], p - 1.0);
      else if (p == 1.0)
        ga[i] += g[i];
    }
  });
}

/// Value copy with no gradient path back to `a`.
inline Var detach(const Var& a) { return a.tape->constant(a.value()); }

/// Mean softmax cross-entropy of `logits` rows listed in `rows` against `labels`.
inline Var softmax_cross_entropy(const Var& logits, std::span<const int> labels,
                                 std::span<const std::int64_t> rows) {
  const Matrix& z = logits.value();
  if (labels.size() != z.rows()) throw ShapeError("softmax_cross_entropy: label count != rows");
  if (rows.empty()) throw ValidationError("softmax_cross_entropy: no rows selected");
  Matrix probs(z.rows(), z.cols());
  double loss = 0.0;
  for (auto r64 : rows) {
    const auto r = static_cast<std::size_t>(r64);
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= z.cols())
      throw ValidationError("softmax_cross_entropy: label out of range at row " + std::to_string(r));
    double mx = z(r, 0);
    for (std::size_t c = 1; c < z.cols(); ++c) mx = std::max(mx, z(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) s += std::exp(z(r, c) - mx);
    for (std::size_t c = 0; c < z.cols(); ++c) probs(r, c) = std::exp(z(r, c) - mx) / s;
    loss -= (z(r, static_cast<std::size_t>(y)) - mx) - std::log(s);
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  std::vector<int> ys(labels.begin(), labels.end());
  const std::size_t iz = logits.id;
  return logits.tape->record(
      "softmax_cross_entropy", Matrix(1, 1, loss * inv), {logits},
      [iz, inv, idx = std::move(idx), ys = std::move(ys), probs = std::move(probs)](Tape& t, std::size_t self) {
        const double g = t.grad(self)(0, 0) * inv;
        Matrix& gz = t.grad(iz);
        for (auto r64 : idx) {
          const auto r = static_cast<std::size_t>(r64);
          for (std::size_t c = 0; c < gz.cols(); ++c) gz(r, c) += g * probs(r, c);
          gz(r, static_cast<std::size_t>(ys[r])) -= g;
        }
      });
}

}  // namespace mgae
