#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "attriq/errors.hpp"

namespace attriq {

// Dense row-major tensor of doubles. Training runs in 64-bit throughout;
// 32-bit appears only as a checkpoint payload dtype.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(t.count(t.shape), 0.0);
    return t;
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor from(std::vector<std::size_t> shape,
                     std::vector<double> values) {
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    if (t.data.size() != t.count(t.shape))
      throw ShapeError("tensor data length " + std::to_string(t.data.size()) +
                       " does not match shape " + shape_str(t.shape));
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  std::size_t size() const { return data.size(); }
  bool is_scalar() const { return data.size() == 1; }

  std::size_t rows() const {
    return shape.size() == 2 ? shape[0] : (shape.empty() ? 0 : 1);
  }
  std::size_t cols() const {
    return shape.size() == 2 ? shape[1] : (shape.empty() ? 0 : shape.back());
  }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const {
    return data[r * shape[1] + c];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "{";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) os << ",";
      os << s[i];
    }
    os << "}";
    return os.str();
  }

  std::string shape_str() const { return shape_str(shape); }
};

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
}

}  // namespace attriq
