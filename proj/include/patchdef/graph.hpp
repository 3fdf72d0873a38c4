#pragma once

// Tape-based reverse-mode autodiff over dense tensors.
//
// A Graph records every operation at forward time; backward() walks the tape
// in reverse. Gradients accumulate into Parameter::grad (and into
// requires-grad leaves) across repeated backward() calls until explicitly
// reset. All evaluation is sequential, so gradients are bit-reproducible.
//
// Scalar type is a template parameter: float is the working precision,
// double is used by the finite-difference verification suites.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchdef/tensor.hpp"

namespace patchdef {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<T>::zeros(value.shape)) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

template <typename T>
class Graph;

template <typename T>
struct Var {
  Graph<T>* g = nullptr;
  int i = -1;
  bool valid() const { return g != nullptr && i >= 0; }
};

template <typename T>
using EigenRowMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
class Graph {
 public:
  using BackFn = std::function<void(Graph&, int)>;

  struct Node {
    Tensor<T> val;
    std::vector<T> grad;   // sized lazily during backward
    bool needs = false;
    Parameter<T>* bound = nullptr;  // param-bound leaf
    Tensor<T> leaf_grad;   // accumulated gradient for requires-grad leaves
    bool is_leaf = false;
    BackFn back;
  };

  // --- leaves ---------------------------------------------------------------

  Var<T> value(Tensor<T> v) {
    return push(std::move(v), false, nullptr);
  }

  Var<T> leaf(Tensor<T> v, bool requires_grad) {
    Var<T> out = push(std::move(v), requires_grad, nullptr);
    Node& n = nodes_[out.i];
    n.is_leaf = true;
    if (requires_grad) n.leaf_grad = Tensor<T>::zeros(n.val.shape);
    return out;
  }

  Var<T> param(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var<T>{this, it->second};
    Var<T> out = push(p.value, true, nullptr);
    nodes_[out.i].is_leaf = true;
    nodes_[out.i].bound = &p;
    param_nodes_[&p] = out.i;
    return out;
  }

  // --- access ---------------------------------------------------------------

  const Tensor<T>& val(Var<T> v) const { return nodes_[v.i].val; }
  Tensor<T>& val_mut(Var<T> v) { return nodes_[v.i].val; }

  // accumulated gradient of a requires-grad leaf
  const Tensor<T>& leaf_grad(Var<T> v) const {
    const Node& n = nodes_[v.i];
    if (!n.is_leaf || !n.needs)
      throw TensorError("leaf_grad: node is not a requires-grad leaf");
    return n.leaf_grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // --- backward -------------------------------------------------------------

  void backward(Var<T> loss) {
    if (loss.g != this) throw TensorError("backward: var belongs to another graph");
    Node& ln = nodes_[loss.i];
    if (ln.val.numel() != 1)
      throw TensorError("backward: loss must be scalar, got shape " +
                        shape_str(ln.val.shape));
    if (!ln.needs) return;  // nothing depends on parameters
    for (int i = 0; i <= loss.i; ++i) {
      Node& n = nodes_[i];
      if (n.needs) n.grad.assign(n.val.numel(), T(0));
    }
    ln.grad[0] = T(1);
    for (int i = loss.i; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.needs && n.back) n.back(*this, i);
    }
    // flush into persistent accumulators
    for (int i = 0; i <= loss.i; ++i) {
      Node& n = nodes_[i];
      if (!n.needs || !n.is_leaf) continue;
      if (n.bound) {
        for (std::size_t k = 0; k < n.grad.size(); ++k)
          n.bound->grad.data[k] += n.grad[k];
      } else {
        for (std::size_t k = 0; k < n.grad.size(); ++k)
          n.leaf_grad.data[k] += n.grad[k];
      }
    }
  }

  void clear_leaf_grads() {
    for (Node& n : nodes_)
      if (n.is_leaf && n.needs && !n.bound)
        std::fill(n.leaf_grad.data.begin(), n.leaf_grad.data.end(), T(0));
  }

  // --- internals used by op free functions ----------------------------------

  Var<T> push(Tensor<T> v, bool req_, BackFn back) {
    Node n;
    n.val = std::move(v);
    n.needs = req_;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var<T>{this, int(nodes_.size()) - 1};
  }

  bool needs_grad(int i) const { return nodes_[i].needs; }
  const std::vector<T>& gbuf(int i) const { return nodes_[i].grad; }
  // gradient buffer of node i, or nullptr if it does not require grad
  T* gptr(int i) { return nodes_[i].needs ? nodes_[i].grad.data() : nullptr; }
  const T* vptr(int i) const { return nodes_[i].val.data.data(); }
  const Tensor<T>& vten(int i) const { return nodes_[i].val; }

 private:
  std::vector<Node> nodes_;
  std::map<Parameter<T>*, int> param_nodes_;
};

// ---------------------------------------------------------------------------
// elementwise binary ops with broadcasting
// ---------------------------------------------------------------------------

namespace detail {

// Iterates an output shape, producing flat offsets into two broadcast inputs.
template <typename T, typename F>
void broadcast_loop(const std::vector<int>& out_shape,
                    const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
  std::size_t n = Tensor<T>::numel_of(out_shape);
  std::size_t nd = out_shape.size();
  std::vector<int> idx(nd, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    f(flat, oa, ob);
    for (std::size_t d = nd; d-- > 0;) {
      idx[d]++;
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out_shape[d]) break;
      oa -= std::size_t(out_shape[d]) * sa[d];
      ob -= std::size_t(out_shape[d]) * sb[d];
      idx[d] = 0;
    }
  }
}

template <typename T>
Var<T> binary_op(Var<T> a, Var<T> b, const char* who,
                 T (*fwd)(T, T), void (*bwd)(T, T, T, T&, T&)) {
  Graph<T>& g = *a.g;
  if (b.g != &g) throw TensorError(std::string(who) + ": vars from different graphs");
  const Tensor<T>& ta = g.vten(a.i);
  const Tensor<T>& tb = g.vten(b.i);
  std::vector<int> os = broadcast_shape(ta.shape, tb.shape, who);
  auto sa = broadcast_strides(ta.shape, os);
  auto sb = broadcast_strides(tb.shape, os);
  Tensor<T> out(os);
  const T* pa = ta.data.data();
  const T* pb = tb.data.data();
  if (ta.shape == tb.shape) {
    for (std::size_t k = 0; k < out.numel(); ++k) out.data[k] = fwd(pa[k], pb[k]);
  } else {
    broadcast_loop<T>(os, sa, sb, [&](std::size_t flat, std::size_t oa, std::size_t ob) {
      out.data[flat] = fwd(pa[oa], pb[ob]);
    });
  }
  bool req = g.needs_grad(a.i) || g.needs_grad(b.i);
  int ai = a.i, bi = b.i;
  auto back = [ai, bi, os, sa, sb, bwd](Graph<T>& gr, int self) {
    const T* go = gr.gbuf(self).data();
    T* ga = gr.gptr(ai);
    T* gb = gr.gptr(bi);
    const T* pa2 = gr.vptr(ai);
    const T* pb2 = gr.vptr(bi);
    broadcast_loop<T>(os, sa, sb, [&](std::size_t flat, std::size_t oa, std::size_t ob) {
      T da = T(0), db = T(0);
      bwd(pa2[oa], pb2[ob], go[flat], da, db);
      if (ga) ga[oa] += da;
      if (gb) gb[ob] += db;
    });
  };
  return g.push(std::move(out), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary_op<T>(a, b, "add",
      [](T x, T y) { return x + y; },
      [](T, T, T go, T& da, T& db) { da = go; db = go; });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary_op<T>(a, b, "sub",
      [](T x, T y) { return x - y; },
      [](T, T, T go, T& da, T& db) { da = go; db = -go; });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary_op<T>(a, b, "mul",
      [](T x, T y) { return x * y; },
      [](T x, T y, T go, T& da, T& db) { da = go * y; db = go * x; });
}

// elementwise minimum; on ties the first argument's branch receives the gradient
template <typename T>
Var<T> minimum(Var<T> a, Var<T> b) {
  return detail::binary_op<T>(a, b, "minimum",
      [](T x, T y) { return x < y ? x : y; },
      [](T x, T y, T go, T& da, T& db) {
        if (x <= y) da = go; else db = go;
      });
}

// ---------------------------------------------------------------------------
// scalar-constant ops and elementwise unaries
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
Var<T> unary_op(Var<T> a, Tensor<T> out,
                std::function<void(const T*, const T*, const T*, T*, std::size_t)> bwd) {
  Graph<T>& g = *a.g;
  bool req = g.needs_grad(a.i);
  int ai = a.i;
  int self_hint = -1;
  (void)self_hint;
  auto back = [ai, bwd](Graph<T>& gr, int self) {
    T* ga = gr.gptr(ai);
    if (!ga) return;
    const T* go = gr.gbuf(self).data();
    bwd(gr.vptr(ai), gr.vptr(self), go, ga, gr.vten(ai).numel());
  };
  return g.push(std::move(out), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}
}  // namespace detail

template <typename T>
Var<T> scale(Var<T> a, T c) {
  const Tensor<T>& ta = a.g->vten(a.i);
  Tensor<T> out(ta.shape);
  for (std::size_t k = 0; k < ta.numel(); ++k) out.data[k] = c * ta.data[k];
  return detail::unary_op<T>(a, std::move(out),
      [c](const T*, const T*, const T* go, T* ga, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) ga[k] += c * go[k];
      });
}

template <typename T>
Var<T> add_const(Var<T> a, T c) {
  const Tensor<T>& ta = a.g->vten(a.i);
  Tensor<T> out(ta.shape);
  for (std::size_t k = 0; k < ta.numel(); ++k) out.data[k] = ta.data[k] + c;
  return detail::unary_op<T>(a, std::move(out),
      [](const T*, const T*, const T* go, T* ga, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) ga[k] += go[k];
      });
}

template <typename T>
Var<T> relu(Var<T> a) {
  const Tensor<T>& ta = a.g->vten(a.i);
  Tensor<T> out(ta.shape);
  for (std::size_t k = 0; k < ta.numel(); ++k)
    out.data[k] = ta.data[k] > T(0) ? ta.data[k] : T(0);
  return detail::unary_op<T>(a, std::move(out),
      [](const T* x, const T*, const T* go, T* ga, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k)
          if (x[k] > T(0)) ga[k] += go[k];
      });
}

template <typename T>
Var<T> tanh_(Var<T> a) {
  const Tensor<T>& ta = a.g->vten(a.i);
  Tensor<T> out(ta.shape);
  for (std::size_t k = 0; k < ta.numel(); ++k) out.data[k] = std::tanh(ta.data[k]);
  return detail::unary_op<T>(a, std::move(out),
      [](const T*, const T* y, const T* go, T* ga, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) ga[k] += go[k] * (T(1) - y[k] * y[k]);
      });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  const Tensor<T>& ta = a.g->vten(a.i);
  Tensor<T> out(ta.shape);
  for (std::size_t k = 0; k < ta.numel(); ++k) {
    T x = ta.data[k];
    out.data[k] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                            : std::exp(x) / (T(1) + std::exp(x));
  }
  return detail::unary_op<T>(a, std::move(out),
      [](const T*, const T* y, const T* go, T* ga, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) ga[k] += go[k] * y[k] * (T(1) - y[k]);
      });
}

template <typename T>
Var<T> exp_(Var<T> a) {
  const Tensor<T>& ta = a.g->vten(a.i);
  Tensor<T> out(ta.shape);
  for (std::size_t k = 0; k < ta.numel(); ++k) out.data[k] = std::exp(ta.data[k]);
  return detail::unary_op<T>(a, std::move(out),
      [](const T*, const T* y, const T* go, T* ga, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) ga[k] += go[k] * y[k];
      });
}

template <typename T>
Var<T> log_(Var<T> a) {
  const Tensor<T>& ta = a.g->vten(a.i);
  Tensor<T> out(ta.shape);
  for (std::size_t k = 0; k < ta.numel(); ++k) out.data[k] = std::log(ta.data[k]);
  return detail::unary_op<T>(a, std::move(out),
      [](const T* x, const T*, const T* go, T* ga, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) ga[k] += go[k] / x[k];
      });
}

// clamp to [lo, hi]; zero gradient where the input is at or beyond a bound
template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  if (!(lo <= hi)) throw TensorError("clamp: lo > hi");
  const Tensor<T>& ta = a.g->vten(a.i);
  Tensor<T> out(ta.shape);
  for (std::size_t k = 0; k < ta.numel(); ++k)
    out.data[k] = std::min(hi, std::max(lo, ta.data[k]));
  return detail::unary_op<T>(a, std::move(out),
      [lo, hi](const T* x, const T*, const T* go, T* ga, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k)
          if (x[k] > lo && x[k] < hi) ga[k] += go[k];
      });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
Eigen::Map<const EigenRowMat<T>> as_mat(const Tensor<T>& t) {
  return Eigen::Map<const EigenRowMat<T>>(t.data.data(), t.shape[0], t.shape[1]);
}
template <typename T>
Eigen::Map<EigenRowMat<T>> as_mat(std::vector<T>& d, int r, int c) {
  return Eigen::Map<EigenRowMat<T>>(d.data(), r, c);
}
template <typename T>
Eigen::Map<const EigenRowMat<T>> as_cmat(const std::vector<T>& d, int r, int c) {
  return Eigen::Map<const EigenRowMat<T>>(d.data(), r, c);
}
}  // namespace detail

// a (n,k) x b (k,m) -> (n,m)
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  if (b.g != &g) throw TensorError("matmul: vars from different graphs");
  const Tensor<T>& ta = g.vten(a.i);
  const Tensor<T>& tb = g.vten(b.i);
  if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape[1] != tb.shape[0])
    throw TensorError("matmul: incompatible shapes " + shape_str(ta.shape) +
                      " x " + shape_str(tb.shape));
  int n = ta.shape[0], k = ta.shape[1], m = tb.shape[1];
  Tensor<T> out({n, m});
  detail::as_mat(out.data, n, m).noalias() =
      detail::as_mat(ta) * detail::as_mat(tb);
  bool req = g.needs_grad(a.i) || g.needs_grad(b.i);
  int ai = a.i, bi = b.i;
  auto back = [ai, bi, n, k, m](Graph<T>& gr, int self) {
    auto G = detail::as_cmat(gr.gbuf(self), n, m);
    if (T* ga = gr.gptr(ai)) {
      Eigen::Map<EigenRowMat<T>> A(ga, n, k);
      A.noalias() += G * detail::as_mat(gr.vten(bi)).transpose();
    }
    if (T* gb = gr.gptr(bi)) {
      Eigen::Map<EigenRowMat<T>> B(gb, k, m);
      B.noalias() += detail::as_mat(gr.vten(ai)).transpose() * G;
    }
  };
  return g.push(std::move(out), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}

// a (n,k) x b (m,k)^T -> (n,m)
template <typename T>
Var<T> matmul_t(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  if (b.g != &g) throw TensorError("matmul_t: vars from different graphs");
  const Tensor<T>& ta = g.vten(a.i);
  const Tensor<T>& tb = g.vten(b.i);
  if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape[1] != tb.shape[1])
    throw TensorError("matmul_t: incompatible shapes " + shape_str(ta.shape) +
                      " x " + shape_str(tb.shape) + "^T");
  int n = ta.shape[0], k = ta.shape[1], m = tb.shape[0];
  Tensor<T> out({n, m});
  detail::as_mat(out.data, n, m).noalias() =
      detail::as_mat(ta) * detail::as_mat(tb).transpose();
  bool req = g.needs_grad(a.i) || g.needs_grad(b.i);
  int ai = a.i, bi = b.i;
  auto back = [ai, bi, n, k, m](Graph<T>& gr, int self) {
    auto G = detail::as_cmat(gr.gbuf(self), n, m);
    if (T* ga = gr.gptr(ai)) {
      Eigen::Map<EigenRowMat<T>> A(ga, n, k);
      A.noalias() += G * detail::as_mat(gr.vten(bi));
    }
    if (T* gb = gr.gptr(bi)) {
      Eigen::Map<EigenRowMat<T>> B(gb, m, k);
      B.noalias() += G.transpose() * detail::as_mat(gr.vten(ai));
    }
  };
  return g.push(std::move(out), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}

// ---------------------------------------------------------------------------
// 2-D convolution, HWC layout, zero padding
// ---------------------------------------------------------------------------

// x (H,W,Cin), k (kh,kw,Cin,Cout) -> (Ho,Wo,Cout). Kernels are limited to 7x7.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> k, int stride, int pad) {
  Graph<T>& g = *x.g;
  if (k.g != &g) throw TensorError("conv2d: vars from different graphs");
  const Tensor<T>& tx = g.vten(x.i);
  const Tensor<T>& tk = g.vten(k.i);
  if (tx.ndim() != 3 || tk.ndim() != 4)
    throw TensorError("conv2d: expected input (H,W,C) and kernel (kh,kw,Cin,Cout), got " +
                      shape_str(tx.shape) + " and " + shape_str(tk.shape));
  int H = tx.shape[0], W = tx.shape[1], Cin = tx.shape[2];
  int kh = tk.shape[0], kw = tk.shape[1];
  if (tk.shape[2] != Cin)
    throw TensorError("conv2d: kernel Cin " + std::to_string(tk.shape[2]) +
                      " does not match input channels " + std::to_string(Cin));
  if (kh > 7 || kw > 7) throw TensorError("conv2d: kernel size > 7 unsupported");
  if (stride < 1) throw TensorError("conv2d: stride must be >= 1");
  int Cout = tk.shape[3];
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho < 1 || Wo < 1)
    throw TensorError("conv2d: kernel larger than padded input");

  int cols = kh * kw * Cin;
  std::vector<T> col(std::size_t(Ho) * Wo * cols, T(0));
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      T* row = col.data() + (std::size_t(oy) * Wo + ox) * cols;
      int c = 0;
      for (int ky = 0; ky < kh; ++ky) {
        int y = oy * stride + ky - pad;
        for (int kx = 0; kx < kw; ++kx) {
          int xx = ox * stride + kx - pad;
          if (y >= 0 && y < H && xx >= 0 && xx < W) {
            const T* src = tx.data.data() + (std::size_t(y) * W + xx) * Cin;
            for (int ci = 0; ci < Cin; ++ci) row[c++] = src[ci];
          } else {
            c += Cin;
          }
        }
      }
    }

  Tensor<T> out({Ho, Wo, Cout});
  detail::as_mat(out.data, Ho * Wo, Cout).noalias() =
      detail::as_cmat(col, Ho * Wo, cols) *
      detail::as_cmat(tk.data, cols, Cout);

  bool req = g.needs_grad(x.i) || g.needs_grad(k.i);
  int xi = x.i, ki = k.i;
  auto back = [xi, ki, H, W, Cin, kh, kw, Cout, Ho, Wo, stride, pad, cols,
               col = std::move(col)](Graph<T>& gr, int self) {
    auto G = detail::as_cmat(gr.gbuf(self), Ho * Wo, Cout);
    if (T* gk = gr.gptr(ki)) {
      Eigen::Map<EigenRowMat<T>> K(gk, cols, Cout);
      K.noalias() += detail::as_cmat(col, Ho * Wo, cols).transpose() * G;
    }
    if (T* gx = gr.gptr(xi)) {
      EigenRowMat<T> dcol = G * detail::as_cmat(gr.vten(ki).data, cols, Cout).transpose();
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const T* row = dcol.data() + (std::size_t(oy) * Wo + ox) * cols;
          int c = 0;
          for (int ky = 0; ky < kh; ++ky) {
            int y = oy * stride + ky - pad;
            for (int kx = 0; kx < kw; ++kx) {
              int xx = ox * stride + kx - pad;
              if (y >= 0 && y < H && xx >= 0 && xx < W) {
                T* dst = gx + (std::size_t(y) * W + xx) * Cin;
                for (int ci = 0; ci < Cin; ++ci) dst[ci] += row[c++];
              } else {
                c += Cin;
              }
            }
          }
        }
    }
  };
  return g.push(std::move(out), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}

// ---------------------------------------------------------------------------
// reductions, softmax family
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> a) {
  const Tensor<T>& ta = a.g->vten(a.i);
  T s = T(0);
  for (T v : ta.data) s += v;
  return detail::unary_op<T>(a, Tensor<T>::scalar(s),
      [](const T*, const T*, const T* go, T* ga, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) ga[k] += go[0];
      });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const Tensor<T>& ta = a.g->vten(a.i);
  if (ta.numel() == 0) throw TensorError("mean: empty tensor");
  T s = T(0);
  for (T v : ta.data) s += v;
  T inv = T(1) / T(ta.numel());
  return detail::unary_op<T>(a, Tensor<T>::scalar(s * inv),
      [inv](const T*, const T*, const T* go, T* ga, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) ga[k] += go[0] * inv;
      });
}

// softmax over the last axis
template <typename T>
Var<T> softmax(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& ta = g.vten(a.i);
  if (ta.ndim() < 1) throw TensorError("softmax: rank-0 input");
  int K = ta.shape.back();
  std::size_t rows = ta.numel() / std::size_t(K);
  Tensor<T> out(ta.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = ta.data.data() + r * K;
    T* p = out.data.data() + r * K;
    T m = z[0];
    for (int j = 1; j < K; ++j) m = std::max(m, z[j]);
    T s = T(0);
    for (int j = 0; j < K; ++j) { p[j] = std::exp(z[j] - m); s += p[j]; }
    for (int j = 0; j < K; ++j) p[j] /= s;
  }
  bool req = g.needs_grad(a.i);
  int ai = a.i;
  auto back = [ai, K, rows](Graph<T>& gr, int self) {
    T* ga = gr.gptr(ai);
    if (!ga) return;
    const T* go = gr.gbuf(self).data();
    const T* p = gr.vptr(self);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* pr = p + r * K;
      const T* gr_ = go + r * K;
      T dot = T(0);
      for (int j = 0; j < K; ++j) dot += gr_[j] * pr[j];
      T* out_g = ga + r * K;
      for (int j = 0; j < K; ++j) out_g[j] += pr[j] * (gr_[j] - dot);
    }
  };
  return g.push(std::move(out), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}

// log(sum(exp(.))) over the last axis; keeps the reduced axis with extent 1
template <typename T>
Var<T> logsumexp(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& ta = g.vten(a.i);
  if (ta.ndim() < 1) throw TensorError("logsumexp: rank-0 input");
  int K = ta.shape.back();
  std::size_t rows = ta.numel() / std::size_t(K);
  std::vector<int> os = ta.shape;
  os.back() = 1;
  Tensor<T> out(os);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = ta.data.data() + r * K;
    T m = z[0];
    for (int j = 1; j < K; ++j) m = std::max(m, z[j]);
    T s = T(0);
    for (int j = 0; j < K; ++j) s += std::exp(z[j] - m);
    out.data[r] = m + std::log(s);
  }
  bool req = g.needs_grad(a.i);
  int ai = a.i;
  auto back = [ai, K, rows](Graph<T>& gr, int self) {
    T* ga = gr.gptr(ai);
    if (!ga) return;
    const T* go = gr.gbuf(self).data();
    const T* z = gr.vptr(ai);
    const T* l = gr.vptr(self);
    for (std::size_t r = 0; r < rows; ++r)
      for (int j = 0; j < K; ++j)
        ga[r * K + j] += go[r] * std::exp(z[r * K + j] - l[r]);
  };
  return g.push(std::move(out), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, std::vector<int> shape) {
  Graph<T>& g = *a.g;
  const Tensor<T>& ta = g.vten(a.i);
  if (Tensor<T>::numel_of(shape) != ta.numel())
    throw TensorError("reshape: cannot view " + shape_str(ta.shape) + " as " +
                      shape_str(shape));
  Tensor<T> out(shape, ta.data);
  return detail::unary_op<T>(a, std::move(out),
      [](const T*, const T*, const T* go, T* ga, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) ga[k] += go[k];
      });
}

// concat along an axis; other dims must match
template <typename T>
Var<T> concat(Var<T> a, Var<T> b, int axis) {
  Graph<T>& g = *a.g;
  if (b.g != &g) throw TensorError("concat: vars from different graphs");
  const Tensor<T>& ta = g.vten(a.i);
  const Tensor<T>& tb = g.vten(b.i);
  if (ta.ndim() != tb.ndim() || axis < 0 || axis >= ta.ndim())
    throw TensorError("concat: incompatible ranks " + shape_str(ta.shape) + " / " +
                      shape_str(tb.shape) + " at axis " + std::to_string(axis));
  for (int d = 0; d < ta.ndim(); ++d)
    if (d != axis && ta.shape[d] != tb.shape[d])
      throw TensorError("concat: shapes " + shape_str(ta.shape) + " and " +
                        shape_str(tb.shape) + " differ off-axis");
  std::vector<int> os = ta.shape;
  os[axis] += tb.shape[axis];
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= std::size_t(ta.shape[d]);
  for (int d = axis + 1; d < ta.ndim(); ++d) inner *= std::size_t(ta.shape[d]);
  std::size_t na = std::size_t(ta.shape[axis]) * inner;
  std::size_t nb = std::size_t(tb.shape[axis]) * inner;
  Tensor<T> out(os);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(ta.data.data() + o * na, na, out.data.data() + o * (na + nb));
    std::copy_n(tb.data.data() + o * nb, nb, out.data.data() + o * (na + nb) + na);
  }
  bool req = g.needs_grad(a.i) || g.needs_grad(b.i);
  int ai = a.i, bi = b.i;
  auto back = [ai, bi, outer, na, nb](Graph<T>& gr, int self) {
    const T* go = gr.gbuf(self).data();
    T* ga = gr.gptr(ai);
    T* gb = gr.gptr(bi);
    for (std::size_t o = 0; o < outer; ++o) {
      if (ga)
        for (std::size_t k = 0; k < na; ++k) ga[o * na + k] += go[o * (na + nb) + k];
      if (gb)
        for (std::size_t k = 0; k < nb; ++k) gb[o * nb + k] += go[o * (na + nb) + na + k];
    }
  };
  return g.push(std::move(out), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}

// mat (N,D) gathered by row indices -> (M,D); backward scatter-adds
template <typename T>
Var<T> gather_rows(Var<T> mat, std::vector<int> idx) {
  Graph<T>& g = *mat.g;
  const Tensor<T>& tm = g.vten(mat.i);
  if (tm.ndim() != 2) throw TensorError("gather_rows: expected 2-D, got " + shape_str(tm.shape));
  int N = tm.shape[0], D = tm.shape[1];
  for (int r : idx)
    if (r < 0 || r >= N)
      throw TensorError("gather_rows: index " + std::to_string(r) + " out of range [0," +
                        std::to_string(N) + ")");
  Tensor<T> out({int(idx.size()), D});
  for (std::size_t m = 0; m < idx.size(); ++m)
    std::copy_n(tm.data.data() + std::size_t(idx[m]) * D, D,
                out.data.data() + m * D);
  bool req = g.needs_grad(mat.i);
  int mi = mat.i;
  auto back = [mi, D, idx = std::move(idx)](Graph<T>& gr, int self) {
    T* gm = gr.gptr(mi);
    if (!gm) return;
    const T* go = gr.gbuf(self).data();
    for (std::size_t m = 0; m < idx.size(); ++m)
      for (int d = 0; d < D; ++d)
        gm[std::size_t(idx[m]) * D + d] += go[m * D + d];
  };
  return g.push(std::move(out), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}

// ---------------------------------------------------------------------------
// texture ops
// ---------------------------------------------------------------------------

// Bilinear sampling from tex (H,W,C) at fractional (row, col) coordinates.
// Coordinates are data, not graph nodes: the gradient flows to the texture
// only. Samples with valid=0 produce the fill color and no gradient. Valid
// coordinates must lie inside [0, H-1] x [0, W-1].
template <typename T>
Var<T> bilinear_sample(Var<T> tex, const std::vector<double>& rows,
                       const std::vector<double>& cols,
                       const std::vector<std::uint8_t>& valid,
                       const std::vector<T>& fill) {
  Graph<T>& g = *tex.g;
  const Tensor<T>& tt = g.vten(tex.i);
  if (tt.ndim() != 3) throw TensorError("bilinear_sample: texture must be (H,W,C)");
  int H = tt.shape[0], W = tt.shape[1], C = tt.shape[2];
  if (rows.size() != cols.size() || rows.size() != valid.size())
    throw TensorError("bilinear_sample: coordinate array sizes differ");
  if (int(fill.size()) != C)
    throw TensorError("bilinear_sample: fill size does not match channels");
  std::size_t n = rows.size();

  struct Tap { int i0, j0; T w00, w01, w10, w11; };
  std::vector<Tap> taps(n);
  Tensor<T> out({int(n), C});
  for (std::size_t s = 0; s < n; ++s) {
    if (!valid[s]) {
      for (int c = 0; c < C; ++c) out.data[s * C + c] = fill[c];
      taps[s].i0 = -1;
      continue;
    }
    double r = rows[s], cc = cols[s];
    if (r < 0.0 || r > double(H - 1) || cc < 0.0 || cc > double(W - 1))
      throw TensorError("bilinear_sample: coordinate (" + std::to_string(r) + "," +
                        std::to_string(cc) + ") outside texture " + shape_str(tt.shape));
    int i0 = std::min(int(r), H >= 2 ? H - 2 : 0);
    int j0 = std::min(int(cc), W >= 2 ? W - 2 : 0);
    T fr = T(r - double(i0)), fc = T(cc - double(j0));
    Tap& tp = taps[s];
    tp.i0 = i0; tp.j0 = j0;
    tp.w00 = (T(1) - fr) * (T(1) - fc);
    tp.w01 = (T(1) - fr) * fc;
    tp.w10 = fr * (T(1) - fc);
    tp.w11 = fr * fc;
    int i1 = std::min(i0 + 1, H - 1), j1 = std::min(j0 + 1, W - 1);
    const T* p = tt.data.data();
    for (int c = 0; c < C; ++c) {
      out.data[s * C + c] =
          tp.w00 * p[(std::size_t(i0) * W + j0) * C + c] +
          tp.w01 * p[(std::size_t(i0) * W + j1) * C + c] +
          tp.w10 * p[(std::size_t(i1) * W + j0) * C + c] +
          tp.w11 * p[(std::size_t(i1) * W + j1) * C + c];
    }
  }
  bool req = g.needs_grad(tex.i);
  int ti = tex.i;
  auto back = [ti, H, W, C, taps = std::move(taps)](Graph<T>& gr, int self) {
    T* gt = gr.gptr(ti);
    if (!gt) return;
    const T* go = gr.gbuf(self).data();
    for (std::size_t s = 0; s < taps.size(); ++s) {
      const Tap& tp = taps[s];
      if (tp.i0 < 0) continue;
      int i1 = std::min(tp.i0 + 1, H - 1), j1 = std::min(tp.j0 + 1, W - 1);
      for (int c = 0; c < C; ++c) {
        T gv = go[s * C + c];
        gt[(std::size_t(tp.i0) * W + tp.j0) * C + c] += tp.w00 * gv;
        gt[(std::size_t(tp.i0) * W + j1) * C + c] += tp.w01 * gv;
        gt[(std::size_t(i1) * W + tp.j0) * C + c] += tp.w10 * gv;
        gt[(std::size_t(i1) * W + j1) * C + c] += tp.w11 * gv;
      }
    }
  };
  return g.push(std::move(out), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}

// Copies base (H,W,C) and overwrites the rectangle at (r0,c0) with patch
// (h,w,C). Gradient splits: patch receives the rectangle, base the rest.
template <typename T>
Var<T> overwrite_region(Var<T> base, Var<T> patch, int r0, int c0) {
  Graph<T>& g = *base.g;
  if (patch.g != &g) throw TensorError("overwrite_region: vars from different graphs");
  const Tensor<T>& tb = g.vten(base.i);
  const Tensor<T>& tp = g.vten(patch.i);
  if (tb.ndim() != 3 || tp.ndim() != 3 || tb.shape[2] != tp.shape[2])
    throw TensorError("overwrite_region: need (H,W,C) base and (h,w,C) patch, got " +
                      shape_str(tb.shape) + " and " + shape_str(tp.shape));
  int H = tb.shape[0], W = tb.shape[1], C = tb.shape[2];
  int h = tp.shape[0], w = tp.shape[1];
  if (r0 < 0 || c0 < 0 || r0 + h > H || c0 + w > W)
    throw TensorError("overwrite_region: patch " + shape_str(tp.shape) + " at (" +
                      std::to_string(r0) + "," + std::to_string(c0) +
                      ") exceeds texture " + shape_str(tb.shape));
  Tensor<T> out = tb;
  for (int i = 0; i < h; ++i)
    std::copy_n(tp.data.data() + std::size_t(i) * w * C, std::size_t(w) * C,
                out.data.data() + ((std::size_t(r0) + i) * W + c0) * C);
  bool req = g.needs_grad(base.i) || g.needs_grad(patch.i);
  int bi = base.i, pi = patch.i;
  auto back = [bi, pi, H, W, C, h, w, r0, c0](Graph<T>& gr, int self) {
    const T* go = gr.gbuf(self).data();
    if (T* gb = gr.gptr(bi)) {
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          if (i >= r0 && i < r0 + h && j >= c0 && j < c0 + w) continue;
          for (int c = 0; c < C; ++c)
            gb[(std::size_t(i) * W + j) * C + c] += go[(std::size_t(i) * W + j) * C + c];
        }
    }
    if (T* gp = gr.gptr(pi)) {
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          for (int c = 0; c < C; ++c)
            gp[(std::size_t(i) * w + j) * C + c] +=
                go[((std::size_t(r0) + i) * W + (c0 + j)) * C + c];
    }
  };
  return g.push(std::move(out), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}

// ---------------------------------------------------------------------------
// classification losses (fused, numerically stable)
// ---------------------------------------------------------------------------

// -log softmax(logits)[label]; logits treated as a flat vector
template <typename T>
Var<T> cross_entropy_logits(Var<T> logits, int label) {
  Graph<T>& g = *logits.g;
  const Tensor<T>& tz = g.vten(logits.i);
  int K = int(tz.numel());
  if (label < 0 || label >= K)
    throw TensorError("cross_entropy_logits: label " + std::to_string(label) +
                      " out of range [0," + std::to_string(K) + ")");
  const T* z = tz.data.data();
  T m = z[0];
  for (int j = 1; j < K; ++j) m = std::max(m, z[j]);
  T s = T(0);
  for (int j = 0; j < K; ++j) s += std::exp(z[j] - m);
  T loss = m + std::log(s) - z[label];
  bool req = g.needs_grad(logits.i);
  int zi = logits.i;
  auto back = [zi, K, label, m, s](Graph<T>& gr, int self) {
    T* gz = gr.gptr(zi);
    if (!gz) return;
    T go = gr.gbuf(self)[0];
    const T* z2 = gr.vptr(zi);
    for (int j = 0; j < K; ++j) {
      T p = std::exp(z2[j] - m) / s;
      gz[j] += go * (p - (j == label ? T(1) : T(0)));
    }
  };
  return g.push(Tensor<T>::scalar(loss), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}

// Shannon entropy (nats) of softmax(logits)
template <typename T>
Var<T> entropy_logits(Var<T> logits) {
  Graph<T>& g = *logits.g;
  const Tensor<T>& tz = g.vten(logits.i);
  int K = int(tz.numel());
  const T* z = tz.data.data();
  T m = z[0];
  for (int j = 1; j < K; ++j) m = std::max(m, z[j]);
  T s = T(0);
  for (int j = 0; j < K; ++j) s += std::exp(z[j] - m);
  T ent = T(0);
  std::vector<T> p(K);
  for (int j = 0; j < K; ++j) {
    p[j] = std::exp(z[j] - m) / s;
    if (p[j] > T(0)) ent -= p[j] * std::log(p[j]);
  }
  bool req = g.needs_grad(logits.i);
  int zi = logits.i;
  auto back = [zi, K, ent, p = std::move(p)](Graph<T>& gr, int self) {
    T* gz = gr.gptr(zi);
    if (!gz) return;
    T go = gr.gbuf(self)[0];
    for (int j = 0; j < K; ++j) {
      T lp = p[j] > T(0) ? std::log(p[j]) : T(0);
      gz[j] += go * (-p[j] * (lp + ent));
    }
  };
  return g.push(Tensor<T>::scalar(ent), req, req ? typename Graph<T>::BackFn(back) : nullptr);
}

}  // namespace patchdef
