#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "textcanvas/autodiff.hpp"
#include "textcanvas/rng.hpp"
#include "textcanvas/types.hpp"

namespace textcanvas::nn {

using ad::Var;

/// Ordered, named references to a model's parameter matrices. Order is the
/// contract for optimizer state and checkpoint layout.
struct ParamSet {
  std::vector<std::pair<std::string, Matd*>> items;

  void add(const std::string& name, Matd& m) { items.emplace_back(name, &m); }
  void merge(const std::string& prefix, const ParamSet& other) {
    for (const auto& [name, p] : other.items)
      items.emplace_back(prefix + "." + name, p);
  }
  std::size_t size() const { return items.size(); }
};

/// Per-tape association of parameter matrices with their leaf vars, used to
/// read gradients back out after backward().
template <typename S = double>
struct Binding {
  std::unordered_map<const Mat<S>*, Var<S>> leaves;

  Var<S> leaf(ad::Tape<S>& tape, Mat<S>& p, bool requires_grad) {
    Var<S> v = tape.leaf(p, requires_grad);
    leaves.emplace(&p, v);
    return v;
  }
  /// Gradient for every entry of ps, zero where the graph never touched it.
  std::vector<Mat<S>> gather(const ParamSet& ps) const {
    std::vector<Mat<S>> out;
    out.reserve(ps.size());
    for (const auto& [name, p] : ps.items) {
      auto it = leaves.find(p);
      if (it == leaves.end())
        out.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      else
        out.push_back(it->second.grad_or_zero());
    }
    return out;
  }
};

using Bindingd = Binding<double>;

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

struct DenseParams {
  Matd w;  // out x in
  Matd b;  // out x 1

  static DenseParams init(Index in, Index out, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    return {rng.uniform_mat(out, in, -bound, bound), Matd::Zero(out, 1)};
  }
  ParamSet params() {
    ParamSet ps;
    ps.add("w", w);
    ps.add("b", b);
    return ps;
  }
};

template <typename S = double>
struct DenseVars {
  Var<S> w, b;
};

inline DenseVars<double> bind(ad::Taped& t, Bindingd& bd, DenseParams& p,
                              bool grad) {
  return {bd.leaf(t, p.w, grad), bd.leaf(t, p.b, grad)};
}

template <typename S>
Var<S> dense(const DenseVars<S>& d, Var<S> x) {
  return ad::add_colvec(ad::matmul(d.w, x), d.b);
}

// ---------------------------------------------------------------------------
// Gated recurrent unit
// ---------------------------------------------------------------------------

/// Update convention: h' = (1-u) (.) h + u (.) n, so a zero update gate
/// carries the previous state through unchanged.
struct GruParams {
  Matd w_r, u_r, b_r;  // reset gate
  Matd w_u, u_u, b_u;  // update gate
  Matd w_n, u_n, b_n;  // candidate

  static GruParams init(Index in, Index hidden, Rng& rng) {
    const double bi = std::sqrt(1.0 / static_cast<double>(in));
    const double bh = std::sqrt(1.0 / static_cast<double>(hidden));
    auto wi = [&] { return rng.uniform_mat(hidden, in, -bi, bi); };
    auto wh = [&] { return rng.uniform_mat(hidden, hidden, -bh, bh); };
    auto bz = [&] { return Matd::Zero(hidden, 1); };
    return {wi(), wh(), bz(), wi(), wh(), bz(), wi(), wh(), bz()};
  }
  ParamSet params() {
    ParamSet ps;
    ps.add("w_r", w_r), ps.add("u_r", u_r), ps.add("b_r", b_r);
    ps.add("w_u", w_u), ps.add("u_u", u_u), ps.add("b_u", b_u);
    ps.add("w_n", w_n), ps.add("u_n", u_n), ps.add("b_n", b_n);
    return ps;
  }
  Index hidden() const { return w_r.rows(); }
};

template <typename S = double>
struct GruVars {
  Var<S> w_r, u_r, b_r, w_u, u_u, b_u, w_n, u_n, b_n;
};

inline GruVars<double> bind(ad::Taped& t, Bindingd& bd, GruParams& p, bool grad) {
  return {bd.leaf(t, p.w_r, grad), bd.leaf(t, p.u_r, grad), bd.leaf(t, p.b_r, grad),
          bd.leaf(t, p.w_u, grad), bd.leaf(t, p.u_u, grad), bd.leaf(t, p.b_u, grad),
          bd.leaf(t, p.w_n, grad), bd.leaf(t, p.u_n, grad), bd.leaf(t, p.b_n, grad)};
}

template <typename S>
Var<S> gru_step(const GruVars<S>& g, Var<S> x, Var<S> h) {
  using namespace ad;
  Var<S> r = sigmoid(add_colvec(add(matmul(g.w_r, x), matmul(g.u_r, h)), g.b_r));
  Var<S> u = sigmoid(add_colvec(add(matmul(g.w_u, x), matmul(g.u_u, h)), g.b_u));
  Var<S> n = tanh_op(
      add_colvec(add(matmul(g.w_n, x), matmul(g.u_n, cmul(r, h))), g.b_n));
  return add(cmul(one_minus(u), h), cmul(u, n));
}

// ---------------------------------------------------------------------------
// Convolution layers
// ---------------------------------------------------------------------------

struct Conv2dParams {
  Matd w;  // out_c x in_c*k*k
  Matd b;  // out_c x 1
  int in_c = 0, out_c = 0, kernel = 3, stride = 1, pad = 1;

  static Conv2dParams init(int in_c, int out_c, int kernel, int stride, int pad,
                           Rng& rng) {
    const double bound = std::sqrt(1.0 / (in_c * kernel * kernel));
    Conv2dParams p;
    p.w = rng.uniform_mat(out_c, static_cast<Index>(in_c) * kernel * kernel,
                          -bound, bound);
    p.b = Matd::Zero(out_c, 1);
    p.in_c = in_c, p.out_c = out_c, p.kernel = kernel, p.stride = stride,
    p.pad = pad;
    return p;
  }
  ParamSet params() {
    ParamSet ps;
    ps.add("w", w);
    ps.add("b", b);
    return ps;
  }
  ConvShape shape(int in_h, int in_w, int batch) const {
    ConvShape cs;
    cs.batch = batch, cs.in_c = in_c, cs.in_h = in_h, cs.in_w = in_w;
    cs.out_c = out_c, cs.kernel = kernel, cs.stride = stride, cs.pad = pad;
    return cs;
  }
};

template <typename S = double>
struct Conv2dVars {
  Var<S> w, b;
  const Conv2dParams* meta = nullptr;
};

inline Conv2dVars<double> bind(ad::Taped& t, Bindingd& bd, Conv2dParams& p,
                               bool grad) {
  return {bd.leaf(t, p.w, grad), bd.leaf(t, p.b, grad), &p};
}

inline ad::Vard conv(const Conv2dVars<double>& c, ad::Vard x, int in_h, int in_w,
                     int batch) {
  return ad::conv2d(x, c.w, c.b, c.meta->shape(in_h, in_w, batch));
}

/// Transposed conv layer; `in_c -> out_c` maps the small input to the
/// upscaled output. Stored weight is the conv-view weight (in_c x out_c*k*k).
struct ConvT2dParams {
  Matd w;  // in_c x out_c*k*k
  Matd b;  // out_c x 1
  int in_c = 0, out_c = 0, kernel = 4, stride = 2, pad = 1;

  static ConvT2dParams init(int in_c, int out_c, int kernel, int stride, int pad,
                            Rng& rng) {
    const double bound = std::sqrt(1.0 / (in_c * kernel * kernel));
    ConvT2dParams p;
    p.w = rng.uniform_mat(in_c, static_cast<Index>(out_c) * kernel * kernel,
                          -bound, bound);
    p.b = Matd::Zero(out_c, 1);
    p.in_c = in_c, p.out_c = out_c, p.kernel = kernel, p.stride = stride,
    p.pad = pad;
    return p;
  }
  ParamSet params() {
    ParamSet ps;
    ps.add("w", w);
    ps.add("b", b);
    return ps;
  }
  /// ConvShape of the matching forward conv (its input = this op's output).
  ConvShape shape(int in_h, int in_w, int batch) const {
    ConvShape cs;
    cs.batch = batch;
    cs.in_c = out_c;
    cs.in_h = conv_transpose_out(in_h, kernel, stride, pad);
    cs.in_w = conv_transpose_out(in_w, kernel, stride, pad);
    cs.out_c = in_c, cs.kernel = kernel, cs.stride = stride, cs.pad = pad;
    return cs;
  }
};

template <typename S = double>
struct ConvT2dVars {
  Var<S> w, b;
  const ConvT2dParams* meta = nullptr;
};

inline ConvT2dVars<double> bind(ad::Taped& t, Bindingd& bd, ConvT2dParams& p,
                                bool grad) {
  return {bd.leaf(t, p.w, grad), bd.leaf(t, p.b, grad), &p};
}

inline ad::Vard conv_transpose(const ConvT2dVars<double>& c, ad::Vard x, int in_h,
                               int in_w, int batch) {
  return ad::conv_transpose2d(x, c.w, c.b, c.meta->shape(in_h, in_w, batch));
}

// ---------------------------------------------------------------------------
// Adam optimizer
// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const ParamSet& ps, const std::vector<Matd>& grads) {
    if (grads.size() != ps.size())
      throw ShapeMismatch("adam: grads do not match param set");
    if (slots_.empty()) {
      slots_.resize(ps.size());
      for (std::size_t i = 0; i < ps.size(); ++i) {
        slots_[i].m = Matd::Zero(ps.items[i].second->rows(),
                                 ps.items[i].second->cols());
        slots_[i].v = slots_[i].m;
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      Matd& p = *ps.items[i].second;
      const Matd& g = grads[i];
      Slot& s = slots_[i];
      s.m = beta1_ * s.m + (1.0 - beta1_) * g;
      s.v = beta2_ * s.v + (1.0 - beta2_) * g.cwiseProduct(g);
      p.array() -= lr_ * (s.m.array() / bc1) /
                   ((s.v.array() / bc2).sqrt() + eps_);
    }
  }

  double learning_rate() const { return lr_; }

 private:
  struct Slot {
    Matd m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace textcanvas::nn
