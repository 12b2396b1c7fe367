#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "textcanvas/conv.hpp"
#include "textcanvas/errors.hpp"
#include "textcanvas/types.hpp"

// Reverse-mode autodiff on dense Eigen matrices. A Tape records one forward
// pass as a Wengert list; backward() walks the list in reverse. Vars are
// cheap (tape pointer + index) and ops are expression-friendly free
// functions, so model code reads like the math it implements.

namespace textcanvas::ad {

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  std::size_t id = 0;

  const Mat<S>& value() const { return tape->node(id).value; }
  const Mat<S>& grad() const { return tape->node(id).grad; }
  Mat<S> grad_or_zero() const {
    const Mat<S>& g = tape->node(id).grad;
    if (g.size() == 0) return Mat<S>::Zero(value().rows(), value().cols());
    return g;
  }
  bool requires_grad() const { return tape->node(id).requires_grad; }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  S scalar() const {
    if (value().size() != 1) throw ShapeMismatch("scalar() on non-scalar var");
    return value()(0, 0);
  }
};

template <typename S>
class Tape {
 public:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    std::function<void()> backward;
    bool requires_grad = false;
  };

  Var<S> emplace(Mat<S> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
    return Var<S>{this, nodes_.size() - 1};
  }

  Var<S> leaf(const Mat<S>& value, bool requires_grad = true) {
    return emplace(value, requires_grad);
  }
  Var<S> constant(Mat<S> value) { return emplace(std::move(value), false); }
  Var<S> constant_scalar(S v) {
    Mat<S> m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  void set_backward(std::size_t id, std::function<void()> fn) {
    nodes_[id].backward = std::move(fn);
  }

  template <typename E>
  void accum_grad(std::size_t id, const E& delta) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = delta;
    else
      n.grad += delta;
  }

  /// Backpropagate from a scalar loss through everything recorded so far.
  void backward(const Var<S>& loss) {
    if (loss.tape != this) throw ShapeMismatch("loss var from another tape");
    if (loss.value().size() != 1)
      throw ShapeMismatch("backward() needs a scalar loss");
    nodes_[loss.id].grad = Mat<S>::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() != 0 && n.backward) n.backward();
    }
  }

 private:
  std::deque<Node> nodes_;  // deque: stable node addresses
};

namespace detail {

template <typename S>
Tape<S>& tape_of(const Var<S>& a) {
  if (!a.tape) throw ShapeMismatch("unbound var");
  return *a.tape;
}

template <typename S>
void check_same_tape(const Var<S>& a, const Var<S>& b) {
  if (a.tape != b.tape) throw ShapeMismatch("vars from different tapes");
}

template <typename S>
void check_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dims differ");
  Tape<S>& t = detail::tape_of(a);
  Var<S> out = t.emplace(a.value() * b.value(),
                         a.requires_grad() || b.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, b, out] {
      const Mat<S>& g = t.node(out.id).grad;
      if (a.requires_grad()) t.accum_grad(a.id, g * b.value().transpose());
      if (b.requires_grad()) t.accum_grad(b.id, a.value().transpose() * g);
    });
  return out;
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "add");
  Tape<S>& t = detail::tape_of(a);
  Var<S> out =
      t.emplace(a.value() + b.value(), a.requires_grad() || b.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, b, out] {
      const Mat<S>& g = t.node(out.id).grad;
      t.accum_grad(a.id, g);
      t.accum_grad(b.id, g);
    });
  return out;
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "sub");
  Tape<S>& t = detail::tape_of(a);
  Var<S> out =
      t.emplace(a.value() - b.value(), a.requires_grad() || b.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, b, out] {
      const Mat<S>& g = t.node(out.id).grad;
      t.accum_grad(a.id, g);
      t.accum_grad(b.id, -g);
    });
  return out;
}

template <typename S>
Var<S> cmul(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "cmul");
  Tape<S>& t = detail::tape_of(a);
  Var<S> out = t.emplace(a.value().cwiseProduct(b.value()),
                         a.requires_grad() || b.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, b, out] {
      const Mat<S>& g = t.node(out.id).grad;
      if (a.requires_grad()) t.accum_grad(a.id, g.cwiseProduct(b.value()));
      if (b.requires_grad()) t.accum_grad(b.id, g.cwiseProduct(a.value()));
    });
  return out;
}

template <typename S>
Var<S> scale(Var<S> a, S s) {
  Tape<S>& t = detail::tape_of(a);
  Var<S> out = t.emplace(a.value() * s, a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id,
                   [&t, a, out, s] { t.accum_grad(a.id, t.node(out.id).grad * s); });
  return out;
}

template <typename S>
Var<S> add_scalar(Var<S> a, S s) {
  Tape<S>& t = detail::tape_of(a);
  Var<S> out = t.emplace((a.value().array() + s).matrix(), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id,
                   [&t, a, out] { t.accum_grad(a.id, t.node(out.id).grad); });
  return out;
}

/// a + v replicated across columns; v is (rows x 1).
template <typename S>
Var<S> add_colvec(Var<S> a, Var<S> v) {
  detail::check_same_tape(a, v);
  if (v.cols() != 1 || v.rows() != a.rows())
    throw ShapeMismatch("add_colvec: v must be rows(a) x 1");
  Tape<S>& t = detail::tape_of(a);
  Var<S> out = t.emplace(a.value().colwise() + v.value().col(0),
                         a.requires_grad() || v.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, v, out] {
      const Mat<S>& g = t.node(out.id).grad;
      t.accum_grad(a.id, g);
      if (v.requires_grad()) t.accum_grad(v.id, g.rowwise().sum());
    });
  return out;
}

/// a + r replicated across rows; r is (1 x cols).
template <typename S>
Var<S> add_rowvec(Var<S> a, Var<S> r) {
  detail::check_same_tape(a, r);
  if (r.rows() != 1 || r.cols() != a.cols())
    throw ShapeMismatch("add_rowvec: r must be 1 x cols(a)");
  Tape<S>& t = detail::tape_of(a);
  Var<S> out = t.emplace(a.value().rowwise() + r.value().row(0),
                         a.requires_grad() || r.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, r, out] {
      const Mat<S>& g = t.node(out.id).grad;
      t.accum_grad(a.id, g);
      if (r.requires_grad()) t.accum_grad(r.id, g.colwise().sum());
    });
  return out;
}

/// Column j of a scaled by r(0,j).
template <typename S>
Var<S> mul_rowvec(Var<S> a, Var<S> r) {
  detail::check_same_tape(a, r);
  if (r.rows() != 1 || r.cols() != a.cols())
    throw ShapeMismatch("mul_rowvec: r must be 1 x cols(a)");
  Tape<S>& t = detail::tape_of(a);
  Mat<S> y = a.value().array().rowwise() * r.value().row(0).array();
  Var<S> out = t.emplace(std::move(y), a.requires_grad() || r.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, r, out] {
      const Mat<S>& g = t.node(out.id).grad;
      if (a.requires_grad())
        t.accum_grad(a.id,
                     (g.array().rowwise() * r.value().row(0).array()).matrix());
      if (r.requires_grad())
        t.accum_grad(r.id, g.cwiseProduct(a.value()).colwise().sum());
    });
  return out;
}

#define TEXTCANVAS_UNARY_OP(name, fwd_expr, bwd_expr)                          \
  template <typename S>                                                        \
  Var<S> name(Var<S> a) {                                                      \
    Tape<S>& t = detail::tape_of(a);                                           \
    const auto& x = a.value().array();                                         \
    Var<S> out = t.emplace((fwd_expr).matrix(), a.requires_grad());            \
    if (out.requires_grad())                                                   \
      t.set_backward(out.id, [&t, a, out] {                                    \
        const auto& x = a.value().array();                                     \
        const auto& y = t.node(out.id).value.array();                          \
        const auto& g = t.node(out.id).grad.array();                           \
        (void)x;                                                               \
        (void)y;                                                               \
        t.accum_grad(a.id, (bwd_expr).matrix());                               \
      });                                                                      \
    return out;                                                                \
  }

TEXTCANVAS_UNARY_OP(sigmoid, S(1) / (S(1) + (-x).exp()), g * y * (S(1) - y))
TEXTCANVAS_UNARY_OP(tanh_op, x.tanh(), g * (S(1) - y * y))
TEXTCANVAS_UNARY_OP(exp_op, x.exp(), g * y)
TEXTCANVAS_UNARY_OP(log_op, x.log(), g / x)
TEXTCANVAS_UNARY_OP(sqrt_op, x.sqrt(), g * (S(0.5) / y))
TEXTCANVAS_UNARY_OP(cinv, x.inverse(), -g * y * y)
TEXTCANVAS_UNARY_OP(relu, x.max(S(0)), g * (x > S(0)).template cast<S>())

#undef TEXTCANVAS_UNARY_OP

template <typename S>
Var<S> leaky_relu(Var<S> a, S slope) {
  Tape<S>& t = detail::tape_of(a);
  const auto& x = a.value().array();
  Var<S> out = t.emplace(x.max(x * slope).matrix(), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out, slope] {
      const auto& x = a.value().array();
      const auto& g = t.node(out.id).grad.array();
      t.accum_grad(a.id,
                   (g * (x > S(0)).select(Mat<S>::Ones(x.rows(), x.cols()),
                                          Mat<S>::Constant(x.rows(), x.cols(), slope))
                            .array())
                       .matrix());
    });
  return out;
}

template <typename S>
Var<S> clamp(Var<S> a, S lo, S hi) {
  Tape<S>& t = detail::tape_of(a);
  const auto& x = a.value().array();
  Var<S> out = t.emplace(x.max(lo).min(hi).matrix(), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out, lo, hi] {
      const auto& x = a.value().array();
      const auto& g = t.node(out.id).grad.array();
      t.accum_grad(a.id,
                   (g * ((x > lo) && (x < hi)).template cast<S>()).matrix());
    });
  return out;
}

/// Softmax applied to each column independently.
template <typename S>
Var<S> softmax_cols(Var<S> a) {
  Tape<S>& t = detail::tape_of(a);
  Mat<S> y(a.rows(), a.cols());
  for (Index j = 0; j < a.cols(); ++j) {
    const auto col = a.value().col(j).array();
    Vec<S> e = (col - col.maxCoeff()).exp();
    y.col(j) = e / e.sum();
  }
  Var<S> out = t.emplace(std::move(y), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out] {
      const Mat<S>& y = t.node(out.id).value;
      const Mat<S>& g = t.node(out.id).grad;
      Mat<S> d(y.rows(), y.cols());
      for (Index j = 0; j < y.cols(); ++j) {
        const S dot = y.col(j).dot(g.col(j));
        d.col(j) = y.col(j).cwiseProduct(g.col(j) - Vec<S>::Constant(y.rows(), dot));
      }
      t.accum_grad(a.id, d);
    });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and reshaping
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum_all(Var<S> a) {
  Tape<S>& t = detail::tape_of(a);
  Mat<S> y(1, 1);
  y(0, 0) = a.value().sum();
  Var<S> out = t.emplace(std::move(y), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out] {
      const S g = t.node(out.id).grad(0, 0);
      t.accum_grad(a.id, Mat<S>::Constant(a.rows(), a.cols(), g));
    });
  return out;
}

template <typename S>
Var<S> mean_all(Var<S> a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.value().size()));
}

/// Sum across columns -> (rows x 1).
template <typename S>
Var<S> rowsum(Var<S> a) {
  Tape<S>& t = detail::tape_of(a);
  Var<S> out = t.emplace(a.value().rowwise().sum(), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out] {
      const Mat<S>& g = t.node(out.id).grad;
      t.accum_grad(a.id, g.replicate(1, a.cols()));
    });
  return out;
}

/// Sum across rows -> (1 x cols).
template <typename S>
Var<S> colsum(Var<S> a) {
  Tape<S>& t = detail::tape_of(a);
  Var<S> out = t.emplace(a.value().colwise().sum(), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out] {
      const Mat<S>& g = t.node(out.id).grad;
      t.accum_grad(a.id, g.replicate(a.rows(), 1));
    });
  return out;
}

template <typename S>
Var<S> transpose(Var<S> a) {
  Tape<S>& t = detail::tape_of(a);
  Var<S> out = t.emplace(a.value().transpose(), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out] {
      t.accum_grad(a.id, t.node(out.id).grad.transpose());
    });
  return out;
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no parts");
  Tape<S>& t = detail::tape_of(parts[0]);
  Index rows = 0;
  const Index cols = parts[0].cols();
  bool grad = false;
  for (const auto& p : parts) {
    detail::check_same_tape(parts[0], p);
    if (p.cols() != cols) throw ShapeMismatch("concat_rows: column mismatch");
    rows += p.rows();
    grad = grad || p.requires_grad();
  }
  Mat<S> y(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    y.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  Var<S> out = t.emplace(std::move(y), grad);
  if (grad)
    t.set_backward(out.id, [&t, parts, out] {
      const Mat<S>& g = t.node(out.id).grad;
      Index at = 0;
      for (const auto& p : parts) {
        t.accum_grad(p.id, g.middleRows(at, p.rows()));
        at += p.rows();
      }
    });
  return out;
}

template <typename S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
  return concat_rows<S>({a, b});
}
template <typename S>
Var<S> concat_rows(Var<S> a, Var<S> b, Var<S> c) {
  return concat_rows<S>({a, b, c});
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no parts");
  Tape<S>& t = detail::tape_of(parts[0]);
  Index cols = 0;
  const Index rows = parts[0].rows();
  bool grad = false;
  for (const auto& p : parts) {
    detail::check_same_tape(parts[0], p);
    if (p.rows() != rows) throw ShapeMismatch("concat_cols: row mismatch");
    cols += p.cols();
    grad = grad || p.requires_grad();
  }
  Mat<S> y(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  Var<S> out = t.emplace(std::move(y), grad);
  if (grad)
    t.set_backward(out.id, [&t, parts, out] {
      const Mat<S>& g = t.node(out.id).grad;
      Index at = 0;
      for (const auto& p : parts) {
        t.accum_grad(p.id, g.middleCols(at, p.cols()));
        at += p.cols();
      }
    });
  return out;
}

template <typename S>
Var<S> slice_rows(Var<S> a, Index start, Index len) {
  if (start < 0 || start + len > a.rows())
    throw ShapeMismatch("slice_rows: out of range");
  Tape<S>& t = detail::tape_of(a);
  Var<S> out = t.emplace(a.value().middleRows(start, len), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out, start, len] {
      Mat<S> d = Mat<S>::Zero(a.rows(), a.cols());
      d.middleRows(start, len) = t.node(out.id).grad;
      t.accum_grad(a.id, d);
    });
  return out;
}

template <typename S>
Var<S> slice_cols(Var<S> a, Index start, Index len) {
  if (start < 0 || start + len > a.cols())
    throw ShapeMismatch("slice_cols: out of range");
  Tape<S>& t = detail::tape_of(a);
  Var<S> out = t.emplace(a.value().middleCols(start, len), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out, start, len] {
      Mat<S> d = Mat<S>::Zero(a.rows(), a.cols());
      d.middleCols(start, len) = t.node(out.id).grad;
      t.accum_grad(a.id, d);
    });
  return out;
}

template <typename S>
Var<S> diag_extract(Var<S> a) {
  Tape<S>& t = detail::tape_of(a);
  Var<S> out = t.emplace(a.value().diagonal(), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out] {
      Mat<S> d = Mat<S>::Zero(a.rows(), a.cols());
      d.diagonal() = t.node(out.id).grad.col(0);
      t.accum_grad(a.id, d);
    });
  return out;
}

/// Row gather: out row i = table row idx[i]. Backward scatter-adds, so
/// repeated indices accumulate.
template <typename S>
Var<S> gather_rows(Var<S> table, std::vector<int> idx) {
  Tape<S>& t = detail::tape_of(table);
  Mat<S> y(static_cast<Index>(idx.size()), table.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= table.rows())
      throw IndexOutOfRange("gather_rows: index " + std::to_string(idx[i]) +
                            " out of range");
    y.row(static_cast<Index>(i)) = table.value().row(idx[i]);
  }
  Var<S> out = t.emplace(std::move(y), table.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, table, out, idx = std::move(idx)] {
      const Mat<S>& g = t.node(out.id).grad;
      Mat<S> d = Mat<S>::Zero(table.rows(), table.cols());
      for (std::size_t i = 0; i < idx.size(); ++i)
        d.row(idx[i]) += g.row(static_cast<Index>(i));
      t.accum_grad(table.id, d);
    });
  return out;
}

/// (C x S*B) feature maps -> (C*S x B) per-sample flattened vectors.
template <typename S>
Var<S> flatten_spatial(Var<S> a, Index spatial, Index batch) {
  if (a.cols() != spatial * batch)
    throw ShapeMismatch("flatten_spatial: cols != spatial*batch");
  Tape<S>& t = detail::tape_of(a);
  const Index c = a.rows();
  Mat<S> y(c * spatial, batch);
  for (Index b = 0; b < batch; ++b)
    for (Index s = 0; s < spatial; ++s)
      y.col(b).segment(s * c, c) = a.value().col(b * spatial + s);
  Var<S> out = t.emplace(std::move(y), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out, spatial, batch, c] {
      const Mat<S>& g = t.node(out.id).grad;
      Mat<S> d(c, spatial * batch);
      for (Index b = 0; b < batch; ++b)
        for (Index s = 0; s < spatial; ++s)
          d.col(b * spatial + s) = g.col(b).segment(s * c, c);
      t.accum_grad(a.id, d);
    });
  return out;
}

/// Plane-major per-sample rows -> channel-major feature maps:
/// (C*S x B) with row layout c*S+s becomes (C x S*B) with column b*S+s.
template <typename S>
Var<S> planes_to_maps(Var<S> a, Index channels) {
  if (a.rows() % channels != 0)
    throw ShapeMismatch("planes_to_maps: rows not divisible by channels");
  const Index spatial = a.rows() / channels;
  const Index batch = a.cols();
  Tape<S>& t = detail::tape_of(a);
  Mat<S> y(channels, spatial * batch);
  for (Index b = 0; b < batch; ++b)
    for (Index c = 0; c < channels; ++c)
      y.row(c).segment(b * spatial, spatial) =
          a.value().col(b).segment(c * spatial, spatial).transpose();
  Var<S> out = t.emplace(std::move(y), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out, channels, spatial, batch] {
      const Mat<S>& g = t.node(out.id).grad;
      Mat<S> d(channels * spatial, batch);
      for (Index b = 0; b < batch; ++b)
        for (Index c = 0; c < channels; ++c)
          d.col(b).segment(c * spatial, spatial) =
              g.row(c).segment(b * spatial, spatial).transpose();
      t.accum_grad(a.id, d);
    });
  return out;
}

/// (d x B) -> (d x S*B): every spatial location of sample b holds column b.
template <typename S>
Var<S> replicate_spatial(Var<S> a, Index spatial) {
  Tape<S>& t = detail::tape_of(a);
  const Index batch = a.cols();
  Mat<S> y(a.rows(), spatial * batch);
  for (Index b = 0; b < batch; ++b)
    for (Index s = 0; s < spatial; ++s) y.col(b * spatial + s) = a.value().col(b);
  Var<S> out = t.emplace(std::move(y), a.requires_grad());
  if (out.requires_grad())
    t.set_backward(out.id, [&t, a, out, spatial, batch] {
      const Mat<S>& g = t.node(out.id).grad;
      Mat<S> d = Mat<S>::Zero(a.rows(), batch);
      for (Index b = 0; b < batch; ++b)
        for (Index s = 0; s < spatial; ++s) d.col(b) += g.col(b * spatial + s);
      t.accum_grad(a.id, d);
    });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions (channel-major batched feature maps, see ConvShape)
// ---------------------------------------------------------------------------

/// w: (out_c x in_c*k*k), b: (out_c x 1), x: (in_c x h*w*B).
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, ConvShape cs) {
  detail::check_same_tape(x, w);
  detail::check_same_tape(x, b);
  cs.validate();
  if (x.rows() != cs.in_c || x.cols() != cs.in_cols())
    throw ShapeMismatch("conv2d: input does not match geometry");
  if (w.rows() != cs.out_c || w.cols() != cs.patch_rows())
    throw ShapeMismatch("conv2d: weight does not match geometry");
  Tape<S>& t = detail::tape_of(x);
  Mat<S> y = w.value() * im2col(x.value(), cs);
  y.colwise() += b.value().col(0);
  bool grad = x.requires_grad() || w.requires_grad() || b.requires_grad();
  Var<S> out = t.emplace(std::move(y), grad);
  if (grad)
    t.set_backward(out.id, [&t, x, w, b, out, cs] {
      const Mat<S>& g = t.node(out.id).grad;
      if (x.requires_grad())
        t.accum_grad(x.id, col2im<S>(w.value().transpose() * g, cs));
      if (w.requires_grad())
        t.accum_grad(w.id, g * im2col(x.value(), cs).transpose());
      if (b.requires_grad()) t.accum_grad(b.id, g.rowwise().sum());
    });
  return out;
}

/// Transposed convolution. ts describes the matching forward convolution,
/// i.e. ts.in_* is the (large) OUTPUT of this op and ts.out_c its input
/// channel count. w: (ts.out_c x ts.in_c*k*k), b: (ts.in_c x 1).
template <typename S>
Var<S> conv_transpose2d(Var<S> x, Var<S> w, Var<S> b, ConvShape ts) {
  detail::check_same_tape(x, w);
  detail::check_same_tape(x, b);
  ts.validate();
  if (x.rows() != ts.out_c || x.cols() != ts.out_cols())
    throw ShapeMismatch("conv_transpose2d: input does not match geometry");
  if (w.rows() != ts.out_c || w.cols() != ts.patch_rows())
    throw ShapeMismatch("conv_transpose2d: weight does not match geometry");
  Tape<S>& t = detail::tape_of(x);
  Mat<S> y = col2im<S>(w.value().transpose() * x.value(), ts);
  y.colwise() += b.value().col(0);
  bool grad = x.requires_grad() || w.requires_grad() || b.requires_grad();
  Var<S> out = t.emplace(std::move(y), grad);
  if (grad)
    t.set_backward(out.id, [&t, x, w, b, out, ts] {
      const Mat<S>& g = t.node(out.id).grad;
      Mat<S> gcols;
      if (x.requires_grad() || w.requires_grad()) gcols = im2col(g, ts);
      if (x.requires_grad()) t.accum_grad(x.id, w.value() * gcols);
      if (w.requires_grad())
        t.accum_grad(w.id, x.value() * gcols.transpose());
      if (b.requires_grad()) t.accum_grad(b.id, g.rowwise().sum());
    });
  return out;
}

// ---------------------------------------------------------------------------
// Convenience compositions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> one_minus(Var<S> a) {
  return add_scalar(scale(a, S(-1)), S(1));
}

/// L2-normalize each column (eps keeps the gradient finite at the origin).
template <typename S>
Var<S> normalize_cols(Var<S> a, S eps = S(1e-12)) {
  Var<S> norms = sqrt_op(add_scalar(colsum(cmul(a, a)), eps));
  return mul_rowvec(a, cinv(norms));
}

using Vard = Var<double>;
using Taped = Tape<double>;

}  // namespace textcanvas::ad
