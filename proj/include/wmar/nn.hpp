#pragma once

#include <deque>
#include <string>
#include <vector>

#include "wmar/binio.hpp"
#include "wmar/tape.hpp"

namespace wmar {

// Owns the parameters of one network. Deque storage keeps Param references
// stable as layers are added; serialization order is creation order.
template <typename T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, Mat<T> init) {
    params_.emplace_back(name, std::move(init));
    return params_.back();
  }

  size_t count() const { return params_.size(); }

  size_t total_elements() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.grad.set_zero();
  }

  // Lookup by exact name; null when absent.
  Param<T>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  Param<T>& at(size_t i) { return params_[i]; }
  const Param<T>& at(size_t i) const { return params_[i]; }

  void save(BinWriter& w) const {
    w.u64(params_.size());
    for (const auto& p : params_) {
      w.str(p.name);
      w.mat(p.value);
    }
  }

  // Shapes and names must match the store that wrote the data.
  void load(BinReader& r) {
    const uint64_t n = r.u64();
    if (n != params_.size()) throw RuntimeError("ParamStore::load: parameter count mismatch");
    for (auto& p : params_) {
      const std::string name = r.str();
      if (name != p.name) throw RuntimeError("ParamStore::load: parameter order mismatch: " + name);
      Mat<T> value = r.template mat<T>();
      if (!value.same_shape(p.value)) throw RuntimeError("ParamStore::load: shape mismatch: " + name);
      p.value = std::move(value);
      p.grad.set_zero();
    }
  }

 private:
  std::deque<Param<T>> params_;
};

// ---------------------------------------------------------------------------
// Layers. Each holds raw Param pointers into a ParamStore and leafs them onto
// whatever tape the forward pass runs on.
// ---------------------------------------------------------------------------

template <typename T>
struct LinearP {
  Param<T>* w = nullptr;
  Param<T>* b = nullptr;

  static LinearP make(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng) {
    LinearP l;
    l.w = &ps.add(name + ".w", glorot_normal<T>(in, out, rng));
    l.b = &ps.add(name + ".b", Mat<T>::zeros(1, out));
    return l;
  }

  Var<T> operator()(Tape<T>& t, Var<T> x) const {
    return affine(x, t.leaf(*w), t.leaf(*b));
  }
};

template <typename T>
struct LayerNormP {
  Param<T>* gain = nullptr;
  Param<T>* shift = nullptr;

  static LayerNormP make(ParamStore<T>& ps, const std::string& name, int width) {
    LayerNormP n;
    n.gain = &ps.add(name + ".gain", Mat<T>::full(1, width, T(1)));
    n.shift = &ps.add(name + ".shift", Mat<T>::zeros(1, width));
    return n;
  }

  Var<T> operator()(Tape<T>& t, Var<T> x) const {
    return layer_norm(x, t.leaf(*gain), t.leaf(*shift));
  }
};

// hidden_layers x [Linear -> LayerNorm -> SiLU] followed by a plain output
// Linear. Heads that want raw features use out_width == hidden width.
template <typename T>
struct MlpP {
  std::vector<LinearP<T>> hidden;
  std::vector<LayerNormP<T>> norms;
  LinearP<T> out;

  static MlpP make(ParamStore<T>& ps, const std::string& name, int in, int hidden_width,
                   int hidden_layers, int out_width, Rng& rng) {
    MlpP m;
    int w = in;
    for (int i = 0; i < hidden_layers; ++i) {
      const std::string ln = name + ".h" + std::to_string(i);
      m.hidden.push_back(LinearP<T>::make(ps, ln, w, hidden_width, rng));
      m.norms.push_back(LayerNormP<T>::make(ps, ln + ".norm", hidden_width));
      w = hidden_width;
    }
    m.out = LinearP<T>::make(ps, name + ".out", w, out_width, rng);
    return m;
  }

  Var<T> operator()(Tape<T>& t, Var<T> x) const {
    for (size_t i = 0; i < hidden.size(); ++i)
      x = silu(norms[i](t, hidden[i](t, x)));
    return out(t, x);
  }
};

// Gated recurrent unit:
//   r = sigmoid(x W_xr + h W_hr + b_r)
//   u = sigmoid(x W_xu + h W_hu + b_u)
//   c = tanh(x W_xc + (r * h) W_hc + b_c)
//   h' = (1 - u) * h + u * c
template <typename T>
struct GruP {
  Param<T>*w_xr, *w_hr, *b_r;
  Param<T>*w_xu, *w_hu, *b_u;
  Param<T>*w_xc, *w_hc, *b_c;

  static GruP make(ParamStore<T>& ps, const std::string& name, int in, int width, Rng& rng) {
    GruP g;
    g.w_xr = &ps.add(name + ".w_xr", glorot_normal<T>(in, width, rng));
    g.w_hr = &ps.add(name + ".w_hr", glorot_normal<T>(width, width, rng));
    g.b_r = &ps.add(name + ".b_r", Mat<T>::zeros(1, width));
    g.w_xu = &ps.add(name + ".w_xu", glorot_normal<T>(in, width, rng));
    g.w_hu = &ps.add(name + ".w_hu", glorot_normal<T>(width, width, rng));
    g.b_u = &ps.add(name + ".b_u", Mat<T>::zeros(1, width));
    g.w_xc = &ps.add(name + ".w_xc", glorot_normal<T>(in, width, rng));
    g.w_hc = &ps.add(name + ".w_hc", glorot_normal<T>(width, width, rng));
    g.b_c = &ps.add(name + ".b_c", Mat<T>::zeros(1, width));
    return g;
  }

  Var<T> operator()(Tape<T>& t, Var<T> h, Var<T> x) const {
    Var<T> r = sigmoid_act(add(add_bias(matmul(x, t.leaf(*w_xr)), t.leaf(*b_r)),
                               matmul(h, t.leaf(*w_hr))));
    Var<T> u = sigmoid_act(add(add_bias(matmul(x, t.leaf(*w_xu)), t.leaf(*b_u)),
                               matmul(h, t.leaf(*w_hu))));
    Var<T> c = tanh_act(add(add_bias(matmul(x, t.leaf(*w_xc)), t.leaf(*b_c)),
                            matmul(mul(r, h), t.leaf(*w_hc))));
    return add(mul(affine_scalar(u, T(-1), T(1)), h), mul(u, c));
  }
};

// Free-function form of the cell for tests that wire params directly.
template <typename T>
Var<T> gru_cell(Tape<T>& t, const GruP<T>& p, Var<T> h, Var<T> x) {
  return p(t, h, x);
}

// ---------------------------------------------------------------------------
// Adam with global gradient-norm clipping.
// ---------------------------------------------------------------------------

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(T beta1, T beta2, T eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update from the accumulated grads, then zeroes them.
  // Returns the pre-clip global gradient norm.
  T step(ParamStore<T>& ps, T lr, T clip) {
    if (slots_.empty())
      for (auto& p : ps)
        slots_.push_back({Mat<T>::zeros(p.value.rows(), p.value.cols()),
                          Mat<T>::zeros(p.value.rows(), p.value.cols())});
    if (slots_.size() != ps.count()) throw RuntimeError("Adam::step: store changed size");

    double sq = 0.0;
    for (auto& p : ps)
      for (size_t i = 0; i < p.grad.size(); ++i) {
        const double g = static_cast<double>(p.grad.data()[i]);
        if (!std::isfinite(g)) throw NumericsError("Adam::step: non-finite gradient in " + p.name);
        sq += g * g;
      }
    const T norm = static_cast<T>(std::sqrt(sq));
    const T scale = norm > clip ? clip / norm : T(1);

    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    size_t si = 0;
    for (auto& p : ps) {
      auto& slot = slots_[si++];
      for (size_t i = 0; i < p.value.size(); ++i) {
        const T g = p.grad.data()[i] * scale;
        T& m = slot.m.data()[i];
        T& v = slot.v.data()[i];
        m = beta1_ * m + (T(1) - beta1_) * g;
        v = beta2_ * v + (T(1) - beta2_) * g * g;
        const T mhat = m / bc1;
        const T vhat = v / bc2;
        p.value.data()[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
      p.grad.set_zero();
    }
    return norm;
  }

  void save(BinWriter& w) const {
    w.i64(t_);
    w.u64(slots_.size());
    for (const auto& s : slots_) {
      w.mat(s.m);
      w.mat(s.v);
    }
  }

  void load(BinReader& r) {
    t_ = r.i64();
    const uint64_t n = r.u64();
    slots_.clear();
    slots_.reserve(n);
    for (uint64_t i = 0; i < n; ++i) {
      Slot s;
      s.m = r.template mat<T>();
      s.v = r.template mat<T>();
      slots_.push_back(std::move(s));
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  struct Slot {
    Mat<T> m, v;
  };
  std::vector<Slot> slots_;
  int64_t t_ = 0;
  T beta1_ = T(0.9);
  T beta2_ = T(0.999);
  T eps_ = T(1e-8);
};

}  // namespace wmar
