#pragma once

// Layers, parameter registry and the SGD-with-momentum optimizer.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchdef/graph.hpp"
#include "patchdef/rng.hpp"

namespace patchdef {

template <typename T>
class ParamSet {
 public:
  void add(Parameter<T>& p) {
    for (auto* q : params_)
      if (q->name == p.name)
        throw std::invalid_argument("ParamSet: duplicate parameter name " + p.name);
    params_.push_back(&p);
  }

  const std::vector<Parameter<T>*>& all() const { return params_; }

  Parameter<T>* find(const std::string& name) const {
    for (auto* p : params_)
      if (p->name == name) return p;
    return nullptr;
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  std::size_t total_elems() const {
    std::size_t n = 0;
    for (auto* p : params_) n += p->value.numel();
    return n;
  }

 private:
  std::vector<Parameter<T>*> params_;
};

namespace init {
// He-style normal init, scaled by fan-in
template <typename T>
Tensor<T> he(std::vector<int> shape, int fan_in, Rng& rng) {
  double std_ = std::sqrt(2.0 / double(fan_in));
  return Tensor<T>::normal(std::move(shape), rng, T(std_));
}
// Glorot-style for gates and heads
template <typename T>
Tensor<T> glorot(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
  double lim = std::sqrt(6.0 / double(fan_in + fan_out));
  return Tensor<T>::uniform(std::move(shape), rng, T(-lim), T(lim));
}
}  // namespace init

template <typename T>
struct DenseLayer {
  Parameter<T> w, b;

  void init_he(const std::string& name, int in, int out, Rng& rng) {
    w = Parameter<T>(name + ".w", init::he<T>({in, out}, in, rng));
    b = Parameter<T>(name + ".b", Tensor<T>::zeros({1, out}));
  }
  void init_glorot(const std::string& name, int in, int out, Rng& rng) {
    w = Parameter<T>(name + ".w", init::glorot<T>({in, out}, in, out, rng));
    b = Parameter<T>(name + ".b", Tensor<T>::zeros({1, out}));
  }
  Var<T> apply(Graph<T>& g, Var<T> x) {
    return add(matmul(x, g.param(w)), g.param(b));
  }
  void register_in(ParamSet<T>& ps) {
    ps.add(w);
    ps.add(b);
  }
};

template <typename T>
struct ConvLayer {
  Parameter<T> k, b;  // kernel (kh,kw,Cin,Cout), bias broadcast over (1,1,Cout)
  int stride = 1, pad = 1;

  void init(const std::string& name, int kh, int kw, int cin, int cout, int stride_,
            int pad_, Rng& rng) {
    stride = stride_;
    pad = pad_;
    k = Parameter<T>(name + ".k", init::he<T>({kh, kw, cin, cout}, kh * kw * cin, rng));
    b = Parameter<T>(name + ".b", Tensor<T>::zeros({1, 1, cout}));
  }
  Var<T> apply(Graph<T>& g, Var<T> x) {
    return add(conv2d(x, g.param(k), stride, pad), g.param(b));
  }
  void register_in(ParamSet<T>& ps) {
    ps.add(k);
    ps.add(b);
  }
};

// v <- mu * v + grad;  p <- p - lr * v
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), mu_(momentum) {}

  void step(ParamSet<T>& ps) {
    for (Parameter<T>* p : ps.all()) {
      Tensor<T>& v = vel_.try_emplace(p, Tensor<T>::zeros(p->value.shape)).first->second;
      for (std::size_t i = 0; i < v.numel(); ++i) {
        v.data[i] = T(mu_) * v.data[i] + p->grad.data[i];
        p->value.data[i] -= T(lr_) * v.data[i];
      }
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, mu_;
  std::map<Parameter<T>*, Tensor<T>> vel_;
};

}  // namespace patchdef
