#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ovmr/common.hpp"
#include "ovmr/tensor.hpp"

namespace ovmr {

// ---------------------------------------------------------------------------
// Dense kernels
// ---------------------------------------------------------------------------

inline Vec matvec(const Mat& m, const Vec& v) {
  OVMR_CHECK_SHAPE(m.cols == v.len(), "matvec: cols " + std::to_string(m.cols) +
                                          " != len " + std::to_string(v.len()));
  Vec out(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* mr = m.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) acc += mr[c] * v[c];
    out[r] = acc;
  }
  return out;
}

/// m^T v.
inline Vec tmatvec(const Mat& m, const Vec& v) {
  OVMR_CHECK_SHAPE(m.rows == v.len(), "tmatvec: rows " +
                                          std::to_string(m.rows) + " != len " +
                                          std::to_string(v.len()));
  Vec out(m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* mr = m.row(r);
    const double s = v[r];
    for (std::size_t c = 0; c < m.cols; ++c) out[c] += mr[c] * s;
  }
  return out;
}

inline double dot(const Vec& a, const Vec& b) {
  OVMR_CHECK_SHAPE(a.len() == b.len(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.len(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec tanh_vec(const Vec& x) {
  Vec out(x.len());
  for (std::size_t i = 0; i < x.len(); ++i) out[i] = std::tanh(x[i]);
  return out;
}

inline Vec sigmoid_vec(const Vec& x) {
  Vec out(x.len());
  for (std::size_t i = 0; i < x.len(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

/// Max-subtracted softmax; output entries positive and summing to 1.
inline Vec softmax_vec(const Vec& x) {
  OVMR_CHECK_SHAPE(x.len() >= 1, "softmax: empty input");
  OVMR_CHECK_NUMERIC(all_finite(x), "softmax: non-finite input");
  Vec out(x.len());
  const double mx = *std::max_element(x.data.begin(), x.data.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.len(); ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  for (auto& v : out.data) v /= sum;
  return out;
}

enum class Activation { Tanh, Sigmoid, Softmax };

inline Vec activations(const Vec& x, Activation kind) {
  OVMR_CHECK_NUMERIC(all_finite(x), "activations: non-finite input");
  switch (kind) {
    case Activation::Tanh: return tanh_vec(x);
    case Activation::Sigmoid: return sigmoid_vec(x);
    case Activation::Softmax: return softmax_vec(x);
  }
  throw ContractError("activations: unknown kind");
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Standard Adam with bias correction. Non-finite gradient entries are
/// clamped to zero and counted; gradients are zeroed after every step.
struct AdamState {
  double lr = 0.0008;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step_count = 0;
  std::int64_t nonfinite_grads = 0;

  AdamState() = default;
  explicit AdamState(double lr_) : lr(lr_) {}

  struct Moments {
    std::vector<double> m, v;
  };
  std::unordered_map<std::string, Moments> moments;
};

inline void adam_step(AdamState& state, const std::vector<Param*>& params) {
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (Param* p : params) {
    auto& mom = state.moments[p->id];
    if (mom.m.size() != p->size()) {
      mom.m.assign(p->size(), 0.0);
      mom.v.assign(p->size(), 0.0);
    }
    for (std::size_t i = 0; i < p->size(); ++i) {
      double g = p->grad.data[i];
      if (!std::isfinite(g)) {
        g = 0.0;
        state.nonfinite_grads += 1;
      }
      mom.m[i] = state.beta1 * mom.m[i] + (1.0 - state.beta1) * g;
      mom.v[i] = state.beta2 * mom.v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      p->value.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    p->zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Central-difference check of an analytic gradient.
///
/// `loss_value` evaluates the scalar objective at the current parameter
/// values; `loss_grad` evaluates it and accumulates analytic gradients into
/// each Param's grad buffer (which this routine zeroes first and after).
/// Checks up to `max_coords_per_param` coordinates per parameter and returns
/// max |analytic - central| / max(1, |central|).
inline double grad_check(const std::function<double()>& loss_value,
                         const std::function<double()>& loss_grad,
                         const std::vector<Param*>& params, double eps = 1e-5,
                         std::size_t max_coords_per_param = 64) {
  OVMR_CHECK_CONTRACT(eps >= 1e-6 && eps <= 1e-3,
                      "grad_check: eps outside [1e-6, 1e-3]");
  for (Param* p : params) p->zero_grad();
  const double f0 = loss_grad();
  OVMR_CHECK_NUMERIC(std::isfinite(f0), "grad_check: non-finite objective");

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad.data);

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param* p = params[pi];
    const std::size_t n = p->size();
    const std::size_t step = std::max<std::size_t>(1, n / max_coords_per_param);
    for (std::size_t i = 0; i < n; i += step) {
      const double saved = p->value.data[i];
      p->value.data[i] = saved + eps;
      const double fp = loss_value();
      p->value.data[i] = saved - eps;
      const double fm = loss_value();
      p->value.data[i] = saved;
      OVMR_CHECK_NUMERIC(std::isfinite(fp) && std::isfinite(fm),
                         "grad_check: non-finite objective at perturbation");
      const double central = (fp - fm) / (2.0 * eps);
      const double rel = std::abs(analytic[pi][i] - central) /
                         std::max(1.0, std::abs(central));
      worst = std::max(worst, rel);
    }
  }
  for (Param* p : params) p->zero_grad();
  return worst;
}

}  // namespace ovmr
