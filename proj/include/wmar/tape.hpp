#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "wmar/errors.hpp"
#include "wmar/mat.hpp"
#include "wmar/rng.hpp"

namespace wmar {

// Reverse-mode autodiff over 2-D float/double matrices. A Tape records one
// forward computation as a flat list of nodes in topological order; backward()
// walks the list in reverse. Graphs are rebuilt every training step.

template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;  // same shape as value, accumulated by Tape::backward

  Param(std::string n, Mat<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat<T>::zeros(value.rows(), value.cols());
  }
};

// When set, every op's output is scanned for NaN/Inf. Enabled in tests and
// by the grad-check suite; training checks the loss and optimizer instead.
inline thread_local bool g_finite_checks = false;

struct FiniteCheckGuard {
  bool prev;
  explicit FiniteCheckGuard(bool on) : prev(g_finite_checks) { g_finite_checks = on; }
  ~FiniteCheckGuard() { g_finite_checks = prev; }
};

template <typename T>
class Tape;

// Scoped freeze_leaves: parameters bound while this is alive enter the tape
// as constants.
template <typename T>
struct FreezeLeavesGuard {
  Tape<T>& tape;
  bool prev;
  explicit FreezeLeavesGuard(Tape<T>& t) : tape(t), prev(t.freeze_leaves) {
    t.freeze_leaves = true;
  }
  ~FreezeLeavesGuard() { tape.freeze_leaves = prev; }
};

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  int rows() const;
  int cols() const;
  const Mat<T>& value() const;
};

template <typename T>
class Tape {
 public:
  struct Node {
    Mat<T> val;
    Mat<T> grad;  // empty until something propagates into it
    std::function<void(Tape&)> back;
    bool needs_grad = false;
  };

  // When false, ops compute values only; backward() is unavailable.
  bool grad_enabled = true;

  // When set, leaf() binds parameters as constants: lets one update run a
  // trained module forward without accumulating gradients into it.
  bool freeze_leaves = false;

  std::vector<Node> nodes;

  Var<T> leaf(Param<T>& p) {
    const bool track = grad_enabled && !freeze_leaves;
    const int id = push(Mat<T>(p.value), track);
    if (track) crumbs_.push_back({id, &p});
    return {this, id};
  }

  Var<T> constant(Mat<T> m) { return {this, push(std::move(m), false)}; }

  Mat<T>& val(int id) { return nodes[static_cast<size_t>(id)].val; }
  const Mat<T>& val(int id) const { return nodes[static_cast<size_t>(id)].val; }

  // Gradient buffer for a node, allocated on first touch.
  Mat<T>& grad(int id) {
    Node& n = nodes[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad = Mat<T>::zeros(n.val.rows(), n.val.cols());
    return n.grad;
  }

  bool grad_touched(int id) const { return !nodes[static_cast<size_t>(id)].grad.empty(); }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every Param
  // that was leafed onto this tape. `loss` must be 1x1.
  void backward(Var<T> loss) {
    if (!grad_enabled) throw RuntimeError("Tape::backward: tape was built with grad disabled");
    if (loss.tape != this) throw RuntimeError("Tape::backward: foreign variable");
    const Mat<T>& lv = val(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1)
      throw RuntimeError("Tape::backward: loss must be a 1x1 tensor");
    grad(loss.id)(0, 0) = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes[static_cast<size_t>(id)];
      if (n.back && !n.grad.empty()) n.back(*this);
    }
    for (const auto& [id, param] : crumbs_) {
      const Node& n = nodes[static_cast<size_t>(id)];
      if (n.grad.empty()) continue;
      for (size_t i = 0; i < n.grad.size(); ++i) param->grad.data()[i] += n.grad.data()[i];
    }
  }

  int push(Mat<T> val, bool needs_grad) {
    if (g_finite_checks && !val.all_finite())
      throw NumericsError("non-finite value in forward op output");
    nodes.push_back(Node{std::move(val), Mat<T>(), nullptr, needs_grad});
    return static_cast<int>(nodes.size()) - 1;
  }

  void set_back(int id, std::function<void(Tape&)> fn) {
    nodes[static_cast<size_t>(id)].back = std::move(fn);
  }

 private:
  std::vector<std::pair<int, Param<T>*>> crumbs_;
};

template <typename T>
int Var<T>::rows() const {
  return tape->val(id).rows();
}
template <typename T>
int Var<T>::cols() const {
  return tape->val(id).cols();
}
template <typename T>
const Mat<T>& Var<T>::value() const {
  return tape->val(id);
}

namespace detail {

template <typename T>
bool wants(const Tape<T>& t, std::initializer_list<Var<T>> parents) {
  if (!t.grad_enabled) return false;
  for (const Var<T>& p : parents)
    if (t.nodes[static_cast<size_t>(p.id)].needs_grad) return true;
  return false;
}

template <typename T>
void check_same_tape(Tape<T>& t, std::initializer_list<Var<T>> vars) {
  for (const Var<T>& v : vars)
    if (v.tape != &t) throw RuntimeError("op: operands from different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  detail::check_same_tape(t, {a, b});
  const Mat<T>&av = t.val(a.id), &bv = t.val(b.id);
  if (!av.same_shape(bv)) throw RuntimeError("add: shape mismatch");
  Mat<T> out(av.rows(), av.cols());
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] + bv.data()[i];
  const bool ng = detail::wants(t, {a, b});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, a = a.id, b = b.id](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      Mat<T>&ga = tp.grad(a), &gb = tp.grad(b);
      for (size_t i = 0; i < g.size(); ++i) {
        ga.data()[i] += g.data()[i];
        gb.data()[i] += g.data()[i];
      }
    });
  return {&t, id};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  detail::check_same_tape(t, {a, b});
  const Mat<T>&av = t.val(a.id), &bv = t.val(b.id);
  if (!av.same_shape(bv)) throw RuntimeError("sub: shape mismatch");
  Mat<T> out(av.rows(), av.cols());
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] - bv.data()[i];
  const bool ng = detail::wants(t, {a, b});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, a = a.id, b = b.id](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      Mat<T>&ga = tp.grad(a), &gb = tp.grad(b);
      for (size_t i = 0; i < g.size(); ++i) {
        ga.data()[i] += g.data()[i];
        gb.data()[i] -= g.data()[i];
      }
    });
  return {&t, id};
}

// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  detail::check_same_tape(t, {a, b});
  const Mat<T>&av = t.val(a.id), &bv = t.val(b.id);
  if (!av.same_shape(bv)) throw RuntimeError("mul: shape mismatch");
  Mat<T> out(av.rows(), av.cols());
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] * bv.data()[i];
  const bool ng = detail::wants(t, {a, b});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, a = a.id, b = b.id](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      const Mat<T>&av2 = tp.val(a), &bv2 = tp.val(b);
      Mat<T>&ga = tp.grad(a), &gb = tp.grad(b);
      for (size_t i = 0; i < g.size(); ++i) {
        ga.data()[i] += g.data()[i] * bv2.data()[i];
        gb.data()[i] += g.data()[i] * av2.data()[i];
      }
    });
  return {&t, id};
}

// y = mult * x + shift, elementwise with scalar coefficients.
template <typename T>
Var<T> affine_scalar(Var<T> x, T mult, T shift) {
  Tape<T>& t = *x.tape;
  const Mat<T>& xv = t.val(x.id);
  Mat<T> out(xv.rows(), xv.cols());
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = mult * xv.data()[i] + shift;
  const bool ng = detail::wants(t, {x});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, x = x.id, mult](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      Mat<T>& gx = tp.grad(x);
      for (size_t i = 0; i < g.size(); ++i) gx.data()[i] += mult * g.data()[i];
    });
  return {&t, id};
}

template <typename T>
Var<T> scale(Var<T> x, T mult) {
  return affine_scalar(x, mult, T(0));
}

// Matrix product [R,K] x [K,C] -> [R,C].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  detail::check_same_tape(t, {a, b});
  const Mat<T>&av = t.val(a.id), &bv = t.val(b.id);
  if (av.cols() != bv.rows()) throw RuntimeError("matmul: inner dimension mismatch");
  Mat<T> out(av.rows(), bv.cols());
  out.map().noalias() = av.map() * bv.map();
  const bool ng = detail::wants(t, {a, b});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, a = a.id, b = b.id](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      const Mat<T>&av2 = tp.val(a), &bv2 = tp.val(b);
      if (tp.nodes[static_cast<size_t>(a)].needs_grad)
        tp.grad(a).map().noalias() += g.map() * bv2.map().transpose();
      if (tp.nodes[static_cast<size_t>(b)].needs_grad)
        tp.grad(b).map().noalias() += av2.map().transpose() * g.map();
    });
  return {&t, id};
}

// Adds a 1xC bias row to every row of a.
template <typename T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  Tape<T>& t = *a.tape;
  detail::check_same_tape(t, {a, bias});
  const Mat<T>&av = t.val(a.id), &bv = t.val(bias.id);
  if (bv.rows() != 1 || bv.cols() != av.cols()) throw RuntimeError("add_bias: bad bias shape");
  Mat<T> out(av.rows(), av.cols());
  for (int r = 0; r < av.rows(); ++r)
    for (int c = 0; c < av.cols(); ++c) out(r, c) = av(r, c) + bv(0, c);
  const bool ng = detail::wants(t, {a, bias});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, a = a.id, b = bias.id](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      Mat<T>&ga = tp.grad(a), &gb = tp.grad(b);
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) {
          ga(r, c) += g(r, c);
          gb(0, c) += g(r, c);
        }
    });
  return {&t, id};
}

// affine(x, W, b) = x W + b; the everyday dense layer.
template <typename T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> b) {
  return add_bias(matmul(x, w), b);
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw RuntimeError("concat_cols: empty input");
  Tape<T>& t = *parts[0].tape;
  int rows = t.val(parts[0].id).rows();
  int cols = 0;
  for (const Var<T>& p : parts) {
    detail::check_same_tape(t, {p});
    if (t.val(p.id).rows() != rows) throw RuntimeError("concat_cols: row mismatch");
    cols += t.val(p.id).cols();
  }
  Mat<T> out(rows, cols);
  int off = 0;
  for (const Var<T>& p : parts) {
    const Mat<T>& pv = t.val(p.id);
    for (int r = 0; r < rows; ++r)
      std::memcpy(out.row(r) + off, pv.row(r), static_cast<size_t>(pv.cols()) * sizeof(T));
    off += pv.cols();
  }
  bool ng = false;
  if (t.grad_enabled)
    for (const Var<T>& p : parts) ng = ng || t.nodes[static_cast<size_t>(p.id)].needs_grad;
  const int id = t.push(std::move(out), ng);
  if (ng) {
    std::vector<int> pid;
    for (const Var<T>& p : parts) pid.push_back(p.id);
    t.set_back(id, [id, pid](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      int off2 = 0;
      for (int p : pid) {
        Mat<T>& gp = tp.grad(p);
        for (int r = 0; r < g.rows(); ++r)
          for (int c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, off2 + c);
        off2 += gp.cols();
      }
    });
  }
  return {&t, id};
}

// Repeats a 1xC row vector into B rows.
template <typename T>
Var<T> tile_rows(Var<T> x, int rows) {
  Tape<T>& t = *x.tape;
  const Mat<T>& xv = t.val(x.id);
  if (xv.rows() != 1) throw RuntimeError("tile_rows: input must have one row");
  Mat<T> out(rows, xv.cols());
  for (int r = 0; r < rows; ++r)
    std::memcpy(out.row(r), xv.row(0), static_cast<size_t>(xv.cols()) * sizeof(T));
  const bool ng = detail::wants(t, {x});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, x = x.id](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      Mat<T>& gx = tp.grad(x);
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) gx(0, c) += g(r, c);
    });
  return {&t, id};
}

// Per-row select: rows where mask is set come from `a` (1xC row broadcast or
// full BxC), the rest from `b`. Used for episode resets inside a batch.
template <typename T>
Var<T> where_rows(const std::vector<uint8_t>& mask, Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  detail::check_same_tape(t, {a, b});
  const Mat<T>&av = t.val(a.id), &bv = t.val(b.id);
  const int rows = bv.rows(), cols = bv.cols();
  if (static_cast<int>(mask.size()) != rows) throw RuntimeError("where_rows: mask size mismatch");
  const bool broadcast = av.rows() == 1;
  if (!broadcast && av.rows() != rows) throw RuntimeError("where_rows: row mismatch");
  if (av.cols() != cols) throw RuntimeError("where_rows: col mismatch");
  Mat<T> out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const T* src = mask[static_cast<size_t>(r)] ? av.row(broadcast ? 0 : r) : bv.row(r);
    std::memcpy(out.row(r), src, static_cast<size_t>(cols) * sizeof(T));
  }
  const bool ng = detail::wants(t, {a, b});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, a = a.id, b = b.id, mask, broadcast](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      Mat<T>&ga = tp.grad(a), &gb = tp.grad(b);
      for (int r = 0; r < g.rows(); ++r) {
        if (mask[static_cast<size_t>(r)]) {
          T* dst = ga.row(broadcast ? 0 : r);
          for (int c = 0; c < g.cols(); ++c) dst[c] += g(r, c);
        } else {
          for (int c = 0; c < g.cols(); ++c) gb(r, c) += g(r, c);
        }
      }
    });
  return {&t, id};
}

template <typename T>
Var<T> stop_grad(Var<T> x) {
  Tape<T>& t = *x.tape;
  return {&t, t.push(Mat<T>(t.val(x.id)), false)};
}

// ---------------------------------------------------------------------------
// Activations and normalization
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sigmoid_act(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Mat<T>& xv = t.val(x.id);
  Mat<T> out(xv.rows(), xv.cols());
  for (size_t i = 0; i < out.size(); ++i) {
    const T v = xv.data()[i];
    out.data()[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                              : std::exp(v) / (T(1) + std::exp(v));
  }
  const bool ng = detail::wants(t, {x});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, x = x.id](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      const Mat<T>& s = tp.val(id);
      Mat<T>& gx = tp.grad(x);
      for (size_t i = 0; i < g.size(); ++i) {
        const T sv = s.data()[i];
        gx.data()[i] += g.data()[i] * sv * (T(1) - sv);
      }
    });
  return {&t, id};
}

template <typename T>
Var<T> tanh_act(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Mat<T>& xv = t.val(x.id);
  Mat<T> out(xv.rows(), xv.cols());
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = std::tanh(xv.data()[i]);
  const bool ng = detail::wants(t, {x});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, x = x.id](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      const Mat<T>& y = tp.val(id);
      Mat<T>& gx = tp.grad(x);
      for (size_t i = 0; i < g.size(); ++i) {
        const T yv = y.data()[i];
        gx.data()[i] += g.data()[i] * (T(1) - yv * yv);
      }
    });
  return {&t, id};
}

// silu(x) = x * sigmoid(x)
template <typename T>
Var<T> silu(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Mat<T>& xv = t.val(x.id);
  Mat<T> out(xv.rows(), xv.cols());
  Mat<T> sig(xv.rows(), xv.cols());
  for (size_t i = 0; i < out.size(); ++i) {
    const T v = xv.data()[i];
    const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    sig.data()[i] = s;
    out.data()[i] = v * s;
  }
  const bool ng = detail::wants(t, {x});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, x = x.id, sig = std::move(sig)](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      const Mat<T>& xv2 = tp.val(x);
      Mat<T>& gx = tp.grad(x);
      for (size_t i = 0; i < g.size(); ++i) {
        const T s = sig.data()[i];
        gx.data()[i] += g.data()[i] * (s + xv2.data()[i] * s * (T(1) - s));
      }
    });
  return {&t, id};
}

// Row-wise layer normalization with learned gain and shift (both 1xC).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> shift, T eps = T(1e-5)) {
  Tape<T>& t = *x.tape;
  detail::check_same_tape(t, {x, gain, shift});
  const Mat<T>& xv = t.val(x.id);
  const Mat<T>&gv = t.val(gain.id), &sv = t.val(shift.id);
  const int rows = xv.rows(), cols = xv.cols();
  if (cols < 1) throw RuntimeError("layer_norm: zero-length row");
  if (gv.rows() != 1 || gv.cols() != cols || sv.rows() != 1 || sv.cols() != cols)
    throw RuntimeError("layer_norm: gain/shift shape mismatch");
  Mat<T> out(rows, cols);
  Mat<T> norm(rows, cols);   // (x - mean) / std, saved for backward
  Mat<T> inv_std(rows, 1);
  for (int r = 0; r < rows; ++r) {
    const T* xr = xv.row(r);
    T mean = T(0);
    for (int c = 0; c < cols; ++c) mean += xr[c];
    mean /= T(cols);
    T var = T(0);
    for (int c = 0; c < cols; ++c) {
      const T d = xr[c] - mean;
      var += d * d;
    }
    var /= T(cols);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std(r, 0) = inv;
    for (int c = 0; c < cols; ++c) {
      const T y = (xr[c] - mean) * inv;
      norm(r, c) = y;
      out(r, c) = y * gv(0, c) + sv(0, c);
    }
  }
  const bool ng = detail::wants(t, {x, gain, shift});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, x = x.id, gn = gain.id, sh = shift.id, norm = std::move(norm),
                    inv_std = std::move(inv_std)](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      const Mat<T>& gv2 = tp.val(gn);
      Mat<T>&gx = tp.grad(x), &gg = tp.grad(gn), &gs = tp.grad(sh);
      const int rows2 = g.rows(), cols2 = g.cols();
      for (int r = 0; r < rows2; ++r) {
        T mean_gy = T(0), mean_gyn = T(0);
        for (int c = 0; c < cols2; ++c) {
          const T gy = g(r, c) * gv2(0, c);
          mean_gy += gy;
          mean_gyn += gy * norm(r, c);
        }
        mean_gy /= T(cols2);
        mean_gyn /= T(cols2);
        const T inv = inv_std(r, 0);
        for (int c = 0; c < cols2; ++c) {
          const T gy = g(r, c) * gv2(0, c);
          gx(r, c) += inv * (gy - mean_gy - norm(r, c) * mean_gyn);
          gg(0, c) += g(r, c) * norm(r, c);
          gs(0, c) += g(r, c);
        }
      }
    });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> rowsum(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Mat<T>& xv = t.val(x.id);
  Mat<T> out(xv.rows(), 1);
  for (int r = 0; r < xv.rows(); ++r) {
    T s = T(0);
    for (int c = 0; c < xv.cols(); ++c) s += xv(r, c);
    out(r, 0) = s;
  }
  const bool ng = detail::wants(t, {x});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, x = x.id](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      Mat<T>& gx = tp.grad(x);
      for (int r = 0; r < gx.rows(); ++r)
        for (int c = 0; c < gx.cols(); ++c) gx(r, c) += g(r, 0);
    });
  return {&t, id};
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Mat<T>& xv = t.val(x.id);
  T s = T(0);
  for (size_t i = 0; i < xv.size(); ++i) s += xv.data()[i];
  Mat<T> out(1, 1);
  out(0, 0) = s;
  const bool ng = detail::wants(t, {x});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, x = x.id](Tape<T>& tp) {
      const T g = tp.grad(id)(0, 0);
      Mat<T>& gx = tp.grad(x);
      for (size_t i = 0; i < gx.size(); ++i) gx.data()[i] += g;
    });
  return {&t, id};
}

template <typename T>
Var<T> mean_all(Var<T> x) {
  const T n = static_cast<T>(x.value().size());
  return scale(sum_all(x), T(1) / n);
}

// Per-row sum of squared differences against a constant target.
template <typename T>
Var<T> squared_diff_rowsum(Var<T> pred, const Mat<T>& target) {
  Tape<T>& t = *pred.tape;
  const Mat<T>& pv = t.val(pred.id);
  if (!pv.same_shape(target)) throw RuntimeError("squared_diff_rowsum: shape mismatch");
  Mat<T> out(pv.rows(), 1);
  for (int r = 0; r < pv.rows(); ++r) {
    T s = T(0);
    for (int c = 0; c < pv.cols(); ++c) {
      const T d = pv(r, c) - target(r, c);
      s += d * d;
    }
    out(r, 0) = s;
  }
  const bool ng = detail::wants(t, {pred});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, p = pred.id, target](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      const Mat<T>& pv2 = tp.val(p);
      Mat<T>& gp = tp.grad(p);
      for (int r = 0; r < pv2.rows(); ++r)
        for (int c = 0; c < pv2.cols(); ++c)
          gp(r, c) += g(r, 0) * T(2) * (pv2(r, c) - target(r, c));
    });
  return {&t, id};
}

// Elementwise max(x, c); gradient passes only where x > c.
template <typename T>
Var<T> max_const(Var<T> x, T c) {
  Tape<T>& t = *x.tape;
  const Mat<T>& xv = t.val(x.id);
  Mat<T> out(xv.rows(), xv.cols());
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(xv.data()[i], c);
  const bool ng = detail::wants(t, {x});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, x = x.id, c](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      const Mat<T>& xv2 = tp.val(x);
      Mat<T>& gx = tp.grad(x);
      for (size_t i = 0; i < g.size(); ++i)
        if (xv2.data()[i] > c) gx.data()[i] += g.data()[i];
    });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// Categorical machinery. Logits of U categorical units with C classes each
// live side by side in a row of width U*C.
// ---------------------------------------------------------------------------

namespace detail {

// Softmax of one logit segment, numerically stabilized.
template <typename T>
void softmax_segment(const T* logits, T* probs, int n) {
  T mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  T total = T(0);
  for (int i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    total += probs[i];
  }
  for (int i = 0; i < n; ++i) probs[i] /= total;
}

template <typename T>
void log_softmax_segment(const T* logits, T* out, int n) {
  T mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  T total = T(0);
  for (int i = 0; i < n; ++i) total += std::exp(logits[i] - mx);
  const T lse = mx + std::log(total);
  for (int i = 0; i < n; ++i) out[i] = logits[i] - lse;
}

// Shared backward for anything whose forward behaves like y = softmax(x)
// per segment: dx = p * (g - sum(g * p)).
template <typename T>
void softmax_backward_segment(const T* p, const T* g, T* gx, int n) {
  T dot = T(0);
  for (int i = 0; i < n; ++i) dot += g[i] * p[i];
  for (int i = 0; i < n; ++i) gx[i] += p[i] * (g[i] - dot);
}

template <typename T>
Mat<T> unit_probs(const Mat<T>& logits, int units, int classes) {
  Mat<T> probs(logits.rows(), logits.cols());
  for (int r = 0; r < logits.rows(); ++r)
    for (int u = 0; u < units; ++u)
      softmax_segment(logits.row(r) + u * classes, probs.row(r) + u * classes, classes);
  return probs;
}

template <typename T>
void check_unit_shape(const Mat<T>& logits, int units, int classes, const char* op) {
  if (units < 1 || classes < 2 || logits.cols() != units * classes)
    throw RuntimeError(std::string(op) + ": logits width must equal units*classes");
}

}  // namespace detail

// Row-wise softmax over the whole row (single categorical distribution).
template <typename T>
Var<T> softmax_rows(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Mat<T>& xv = t.val(x.id);
  Mat<T> out(xv.rows(), xv.cols());
  for (int r = 0; r < xv.rows(); ++r)
    detail::softmax_segment(xv.row(r), out.row(r), xv.cols());
  const bool ng = detail::wants(t, {x});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, x = x.id](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      const Mat<T>& p = tp.val(id);
      Mat<T>& gx = tp.grad(x);
      for (int r = 0; r < g.rows(); ++r)
        detail::softmax_backward_segment(p.row(r), g.row(r), gx.row(r), g.cols());
    });
  return {&t, id};
}

// Per-unit softmax probabilities. Differentiable stand-in for the sampled
// latent; also the backward path the straight-through estimator borrows.
template <typename T>
Var<T> unit_softmax(Var<T> logits, int units, int classes) {
  Tape<T>& t = *logits.tape;
  const Mat<T>& lv = t.val(logits.id);
  detail::check_unit_shape(lv, units, classes, "unit_softmax");
  Mat<T> out = detail::unit_probs(lv, units, classes);
  const bool ng = detail::wants(t, {logits});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, l = logits.id, units, classes](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      const Mat<T>& p = tp.val(id);
      Mat<T>& gl = tp.grad(l);
      for (int r = 0; r < g.rows(); ++r)
        for (int u = 0; u < units; ++u)
          detail::softmax_backward_segment(p.row(r) + u * classes, g.row(r) + u * classes,
                                           gl.row(r) + u * classes, classes);
    });
  return {&t, id};
}

// Samples a one-hot per unit by inverse CDF on the softmax probabilities.
// Forward emits hard one-hots; backward routes gradients exactly as if the
// forward had produced softmax(logits) (straight-through).
template <typename T>
Var<T> categorical_sample_st(Var<T> logits, int units, int classes, Rng& rng) {
  Tape<T>& t = *logits.tape;
  const Mat<T>& lv = t.val(logits.id);
  detail::check_unit_shape(lv, units, classes, "categorical_sample_st");
  Mat<T> probs = detail::unit_probs(lv, units, classes);
  Mat<T> out = Mat<T>::zeros(lv.rows(), lv.cols());
  for (int r = 0; r < lv.rows(); ++r) {
    for (int u = 0; u < units; ++u) {
      const T* p = probs.row(r) + u * classes;
      const double x = rng.uniform01();
      double acc = 0.0;
      int pick = classes - 1;
      for (int i = 0; i < classes; ++i) {
        acc += static_cast<double>(p[i]);
        if (x < acc) {
          pick = i;
          break;
        }
      }
      out(r, u * classes + pick) = T(1);
    }
  }
  const bool ng = detail::wants(t, {logits});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, l = logits.id, units, classes, probs = std::move(probs)](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      Mat<T>& gl = tp.grad(l);
      for (int r = 0; r < g.rows(); ++r)
        for (int u = 0; u < units; ++u)
          detail::softmax_backward_segment(probs.row(r) + u * classes, g.row(r) + u * classes,
                                           gl.row(r) + u * classes, classes);
    });
  return {&t, id};
}

// Sum over units of KL(p || q) per row, from logits. grad_p / grad_q control
// which side receives gradient, implementing the stop-gradient variants of
// the balanced KL loss without extra graph nodes.
template <typename T>
Var<T> kl_categorical(Var<T> p_logits, Var<T> q_logits, int units, int classes,
                      bool grad_p = true, bool grad_q = true) {
  Tape<T>& t = *p_logits.tape;
  detail::check_same_tape(t, {p_logits, q_logits});
  const Mat<T>&pv = t.val(p_logits.id), &qv = t.val(q_logits.id);
  detail::check_unit_shape(pv, units, classes, "kl_categorical");
  if (!pv.same_shape(qv)) throw RuntimeError("kl_categorical: shape mismatch");
  const int rows = pv.rows();
  Mat<T> p = detail::unit_probs(pv, units, classes);
  Mat<T> q = detail::unit_probs(qv, units, classes);
  Mat<T> diff(rows, pv.cols());     // log p - log q
  Mat<T> kl_unit(rows, units);      // per-unit KL, needed by backward
  Mat<T> out(rows, 1);
  std::vector<T> lp(static_cast<size_t>(classes)), lq(static_cast<size_t>(classes));
  for (int r = 0; r < rows; ++r) {
    T total = T(0);
    for (int u = 0; u < units; ++u) {
      detail::log_softmax_segment(pv.row(r) + u * classes, lp.data(), classes);
      detail::log_softmax_segment(qv.row(r) + u * classes, lq.data(), classes);
      T kl = T(0);
      for (int i = 0; i < classes; ++i) {
        const T d = lp[static_cast<size_t>(i)] - lq[static_cast<size_t>(i)];
        diff(r, u * classes + i) = d;
        kl += p(r, u * classes + i) * d;
      }
      kl_unit(r, u) = kl;
      total += kl;
    }
    out(r, 0) = total;
  }
  const bool ng = t.grad_enabled &&
                  ((grad_p && t.nodes[static_cast<size_t>(p_logits.id)].needs_grad) ||
                   (grad_q && t.nodes[static_cast<size_t>(q_logits.id)].needs_grad));
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, pl = p_logits.id, ql = q_logits.id, units, classes, grad_p, grad_q,
                    p = std::move(p), q = std::move(q), diff = std::move(diff),
                    kl_unit = std::move(kl_unit)](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      for (int r = 0; r < g.rows(); ++r) {
        const T gr = g(r, 0);
        if (gr == T(0)) continue;
        for (int u = 0; u < units; ++u) {
          const int base = u * classes;
          if (grad_p) {
            Mat<T>& gp = tp.grad(pl);
            for (int i = 0; i < classes; ++i)
              gp(r, base + i) += gr * p(r, base + i) * (diff(r, base + i) - kl_unit(r, u));
          }
          if (grad_q) {
            Mat<T>& gq = tp.grad(ql);
            for (int i = 0; i < classes; ++i)
              gq(r, base + i) += gr * (q(r, base + i) - p(r, base + i));
          }
        }
      }
    });
  return {&t, id};
}

// log pi(action | logits) per row, for a single categorical over the row.
template <typename T>
Var<T> categorical_log_prob(Var<T> logits, const std::vector<int>& actions) {
  Tape<T>& t = *logits.tape;
  const Mat<T>& lv = t.val(logits.id);
  if (static_cast<int>(actions.size()) != lv.rows())
    throw RuntimeError("categorical_log_prob: action count mismatch");
  const int n = lv.cols();
  Mat<T> probs(lv.rows(), n);
  Mat<T> out(lv.rows(), 1);
  std::vector<T> logp(static_cast<size_t>(n));
  for (int r = 0; r < lv.rows(); ++r) {
    const int a = actions[static_cast<size_t>(r)];
    if (a < 0 || a >= n) throw RuntimeError("categorical_log_prob: action out of range");
    detail::log_softmax_segment(lv.row(r), logp.data(), n);
    for (int i = 0; i < n; ++i) probs(r, i) = std::exp(logp[static_cast<size_t>(i)]);
    out(r, 0) = logp[static_cast<size_t>(a)];
  }
  const bool ng = detail::wants(t, {logits});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, l = logits.id, actions, probs = std::move(probs)](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      Mat<T>& gl = tp.grad(l);
      for (int r = 0; r < g.rows(); ++r) {
        const T gr = g(r, 0);
        for (int c = 0; c < gl.cols(); ++c) gl(r, c) -= gr * probs(r, c);
        gl(r, actions[static_cast<size_t>(r)]) += gr;
      }
    });
  return {&t, id};
}

// Entropy of the categorical given by each logits row.
template <typename T>
Var<T> entropy_rows(Var<T> logits) {
  Tape<T>& t = *logits.tape;
  const Mat<T>& lv = t.val(logits.id);
  const int n = lv.cols();
  Mat<T> probs(lv.rows(), n);
  Mat<T> logp(lv.rows(), n);
  Mat<T> out(lv.rows(), 1);
  for (int r = 0; r < lv.rows(); ++r) {
    detail::log_softmax_segment(lv.row(r), logp.row(r), n);
    T h = T(0);
    for (int i = 0; i < n; ++i) {
      probs(r, i) = std::exp(logp(r, i));
      h -= probs(r, i) * logp(r, i);
    }
    out(r, 0) = h;
  }
  const bool ng = detail::wants(t, {logits});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, l = logits.id, probs = std::move(probs),
                    logp = std::move(logp)](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      const Mat<T>& h = tp.val(id);
      Mat<T>& gl = tp.grad(l);
      for (int r = 0; r < g.rows(); ++r) {
        const T gr = g(r, 0);
        for (int c = 0; c < gl.cols(); ++c)
          gl(r, c) -= gr * probs(r, c) * (logp(r, c) + h(r, 0));
      }
    });
  return {&t, id};
}

// Per-row binary cross-entropy with logits against constant targets,
// multiplied by a constant per-row weight (used to mask positions).
template <typename T>
Var<T> bce_with_logits(Var<T> logits, const Mat<T>& targets, const Mat<T>& weights) {
  Tape<T>& t = *logits.tape;
  const Mat<T>& lv = t.val(logits.id);
  if (lv.cols() != 1 || !lv.same_shape(targets) || !lv.same_shape(weights))
    throw RuntimeError("bce_with_logits: expects Bx1 logits/targets/weights");
  Mat<T> out(lv.rows(), 1);
  for (int r = 0; r < lv.rows(); ++r) {
    const T l = lv(r, 0);
    // max(l,0) - l*t + log(1 + exp(-|l|)) is the standard stable form.
    const T loss = std::max(l, T(0)) - l * targets(r, 0) + std::log1p(std::exp(-std::abs(l)));
    out(r, 0) = weights(r, 0) * loss;
  }
  const bool ng = detail::wants(t, {logits});
  const int id = t.push(std::move(out), ng);
  if (ng)
    t.set_back(id, [id, l = logits.id, targets, weights](Tape<T>& tp) {
      const Mat<T>& g = tp.grad(id);
      const Mat<T>& lv2 = tp.val(l);
      Mat<T>& gl = tp.grad(l);
      for (int r = 0; r < g.rows(); ++r) {
        const T v = lv2(r, 0);
        const T sig = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
        gl(r, 0) += g(r, 0) * weights(r, 0) * (sig - targets(r, 0));
      }
    });
  return {&t, id};
}

}  // namespace wmar
