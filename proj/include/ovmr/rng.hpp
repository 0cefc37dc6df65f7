#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace ovmr {

/// Deterministic 64-bit generator with a splitmix-style update, fixed here so
/// that alternate implementations can reproduce every stream bit-for-bit:
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   output = z ^ (z >> 31)
///
/// Derived draws are defined on top of the raw stream, in draw order:
///   uniform01: (next() >> 11) * 2^-53, in [0, 1)
///   below(n):  next() % n
///   normal:    Box-Muller on two uniform01 draws (u1, u2);
///              r = sqrt(-2 ln(1 - u1)); returns r cos(2 pi u2) first,
///              then the cached r sin(2 pi u2).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  std::uint64_t below(std::uint64_t n) { return n <= 1 ? 0 : next() % n; }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  std::vector<double> normal_vec(std::size_t n, double sigma = 1.0) {
    std::vector<double> out(n);
    for (auto& x : out) x = sigma * normal();
    return out;
  }

  /// Unit vector uniform on the sphere: normalized Gaussian draw.
  std::vector<double> unit_vec(std::size_t n) {
    std::vector<double> v = normal_vec(n);
    double s = 0.0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    if (s == 0.0) {
      v.assign(n, 0.0);
      v[0] = 1.0;
      return v;
    }
    for (auto& x : v) x /= s;
    return v;
  }

  /// Fisher-Yates, descending index, swap target drawn with below(i + 1).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace ovmr
