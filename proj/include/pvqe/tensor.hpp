#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pvqe/common.hpp"

namespace pvqe {

// Dense row-major tensor. Plain value type: all model math lives on these.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), T(0));
  }
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape)) throw InvalidInput("tensor: data length does not match shape");
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw InvalidInput("tensor: non-positive dimension");
      n *= size_t(d);
    }
    return n;
  }

  size_t numel() const { return data.size(); }
  int rank() const { return int(shape.size()); }
  int dim(int i) const { return shape.at(size_t(i)); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator()(int i) { return data[size_t(i)]; }
  const T& operator()(int i) const { return data[size_t(i)]; }
  T& operator()(int i, int j) { return data[size_t(i) * shape[1] + j]; }
  const T& operator()(int i, int j) const { return data[size_t(i) * shape[1] + j]; }
  T& operator()(int i, int j, int k) {
    return data[(size_t(i) * shape[1] + j) * shape[2] + k];
  }
  const T& operator()(int i, int j, int k) const {
    return data[(size_t(i) * shape[1] + j) * shape[2] + k];
  }
  T& operator()(int i, int j, int k, int l) {
    return data[((size_t(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  const T& operator()(int i, int j, int k, int l) const {
    return data[((size_t(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  // Row pointer into the last axis for a rank-2 or rank-3 tensor.
  T* row(int i) { return data.data() + size_t(i) * shape.back(); }
  const T* row(int i) const { return data.data() + size_t(i) * shape.back(); }

  Tensor reshaped(std::vector<int> s) const {
    if (numel_of(s) != numel()) throw InvalidInput("tensor: reshape changes element count");
    return Tensor(std::move(s), data);
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }
};

// [O, I] -> [I, O]. Forward passes want the transposed layout so the inner
// loop writes unit-stride accumulators.
template <class T>
Tensor<T> transposed(const Tensor<T>& w) {
  if (w.rank() != 2) throw InvalidInput("transposed: rank-2 tensor required");
  const int r = w.shape[0], c = w.shape[1];
  Tensor<T> out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out(j, i) = w(i, j);
  return out;
}

// Named parameter collection. std::map keeps iteration order sorted, which
// the file format and all reductions rely on for determinism.
template <class T>
using ParamStore = std::map<std::string, Tensor<T>>;

template <class T>
const Tensor<T>& param(const ParamStore<T>& ps, const std::string& name) {
  auto it = ps.find(name);
  if (it == ps.end()) throw InvalidState("missing parameter: " + name);
  return it->second;
}

template <class T>
size_t param_count(const ParamStore<T>& ps) {
  size_t n = 0;
  for (const auto& [k, v] : ps) n += v.numel();
  return n;
}

}  // namespace pvqe
