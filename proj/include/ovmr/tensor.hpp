#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ovmr/common.hpp"
#include "ovmr/rng.hpp"

namespace ovmr {

/// Dense real vector. Invariants: len > 0 for anything fed to the math
/// kernels, entries finite.
struct Vec {
  std::vector<double> data;

  Vec() = default;
  explicit Vec(std::size_t n, double fill = 0.0) : data(n, fill) {}
  explicit Vec(std::vector<double> d) : data(std::move(d)) {}

  std::size_t len() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

/// Dense row-major matrix.
struct Mat {
  std::vector<double> data;
  std::size_t rows = 0, cols = 0;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : data(r * c, fill), rows(r), cols(c) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
  double* row(std::size_t r) { return data.data() + r * cols; }

  Vec row_vec(std::size_t r) const {
    return Vec(std::vector<double>(row(r), row(r) + cols));
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}
inline bool all_finite(const Vec& v) { return all_finite(v.data); }
inline bool all_finite(const Mat& m) { return all_finite(m.data); }

/// A learnable tensor: value plus gradient accumulator of identical shape.
/// Gradients are logically scratch state, hence mutable; the optimizer zeroes
/// them after each step.
struct Param {
  Mat value;
  mutable Mat grad;
  std::string id;

  Param() = default;
  Param(std::string name, std::size_t r, std::size_t c)
      : value(r, c), grad(r, c), id(std::move(name)) {}

  std::size_t size() const { return value.data.size(); }

  void zero_grad() const {
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
  }

  /// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  void init_uniform(Rng& rng, std::size_t fan_in) {
    const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : value.data) x = rng.uniform(-b, b);
  }
};

}  // namespace ovmr
