#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchdef/rng.hpp"

namespace patchdef {

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor. Plain value type; autodiff lives in graph.hpp.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), T(0));
  }
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape))
      throw TensorError("tensor data size " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d < 0) throw TensorError("negative dimension in shape " + shape_str(s));
      n *= std::size_t(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int ndim() const { return int(shape.size()); }
  int dim(int i) const { return shape[std::size_t(i)]; }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  // 2-D accessor (row-major)
  T& at(int r, int c) { return data[std::size_t(r) * shape[1] + c]; }
  const T& at(int r, int c) const { return data[std::size_t(r) * shape[1] + c]; }
  // 3-D accessor (H,W,C row-major)
  T& at(int i, int j, int k) {
    return data[(std::size_t(i) * shape[1] + j) * shape[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return data[(std::size_t(i) * shape[1] + j) * shape[2] + k];
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor uniform(std::vector<int> s, Rng& rng, T lo = T(0), T hi = T(1)) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = T(rng.uniform(double(lo), double(hi)));
    return t;
  }

  static Tensor normal(std::vector<int> s, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = T(rng.normal() * double(stddev));
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename T>
inline void require_shape(const Tensor<T>& t, const std::vector<int>& want,
                          const char* who) {
  if (t.shape != want)
    throw TensorError(std::string(who) + ": expected shape " + shape_str(want) +
                      ", got " + shape_str(t.shape));
}

// NumPy-style broadcast of two shapes; throws with both shapes named on mismatch.
inline std::vector<int> broadcast_shape(const std::vector<int>& a,
                                        const std::vector<int>& b,
                                        const char* who) {
  std::size_t n = std::max(a.size(), b.size());
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    int da = i < a.size() ? a[a.size() - 1 - i] : 1;
    int db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw TensorError(std::string(who) + ": shapes " + shape_str(a) + " and " +
                        shape_str(b) + " are not broadcastable");
    out[n - 1 - i] = std::max(da, db);
  }
  return out;
}

// Row-major strides; broadcast dims (extent 1 against a larger extent) get stride 0.
inline std::vector<std::size_t> broadcast_strides(const std::vector<int>& shape,
                                                  const std::vector<int>& out_shape) {
  std::vector<std::size_t> strides(out_shape.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    std::size_t si = shape.size() - 1 - i;
    std::size_t oi = out_shape.size() - 1 - i;
    strides[oi] = (shape[si] == 1 && out_shape[oi] != 1) ? 0 : s;
    s *= std::size_t(shape[si]);
  }
  return strides;
}

}  // namespace patchdef
