#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "unimot/rng.hpp"

namespace unimot {

// Dense row-major tensor. Rank is dynamic but almost everything here is
// rank-1 or rank-2.
template <class Real>
struct Tensor {
  std::vector<int> shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), Real(0));
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dim");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, Real v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(Real v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  static Tensor randn(std::vector<int> s, Rng& rng, double stddev) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = Real(rng.normal(0.0, stddev));
    return t;
  }

  int64_t numel() const { return int64_t(data.size()); }
  int ndim() const { return int(shape.size()); }

  int rows() const { return shape.at(0); }
  int cols() const {
    if (shape.size() != 2) throw std::invalid_argument("tensor: not rank-2");
    return shape[1];
  }

  Real& at(int r, int c) { return data[size_t(r) * shape[1] + c]; }
  Real at(int r, int c) const { return data[size_t(r) * shape[1] + c]; }
  Real* row_ptr(int r) { return data.data() + size_t(r) * shape[1]; }
  const Real* row_ptr(int r) const { return data.data() + size_t(r) * shape[1]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void zero() { std::fill(data.begin(), data.end(), Real(0)); }

  Tensor<double> to_double() const {
    Tensor<double> t;
    t.shape = shape;
    t.data.assign(data.begin(), data.end());
    return t;
  }

  Tensor<float> to_float() const {
    Tensor<float> t;
    t.shape = shape;
    t.data.assign(data.begin(), data.end());
    return t;
  }
};

template <class Real>
std::string shape_str(const Tensor<Real>& t) {
  std::string s = "[";
  for (size_t i = 0; i < t.shape.size(); i++) {
    if (i) s += "x";
    s += std::to_string(t.shape[i]);
  }
  return s + "]";
}

}  // namespace unimot
