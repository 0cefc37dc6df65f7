#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ovmr/autodiff.hpp"
#include "ovmr/numerics.hpp"
#include "ovmr/tensor.hpp"

namespace ovmr {

/// Execution contexts. Model forwards are templates over one of these, so the
/// same code runs as plain arithmetic (inference, oracles) or recorded onto a
/// Tape (training). V = vector value, S = scalar value, M = matrix handle.

struct PlainExec {
  using V = Vec;
  using S = double;
  using M = const Mat*;

  M pmat(const Param& p) { return &p.value; }
  V pvec(const Param& p) {
    OVMR_CHECK_SHAPE(p.value.cols == 1, "pvec: param is not a column");
    return Vec(p.value.data);
  }
  V leaf(const Vec& v) { return v; }
  M leafm(const Mat& m) { return &m; }
  S sconst(double x) { return x; }

  V matvec(M m, const V& x) { return ovmr::matvec(*m, x); }
  V tmatvec(M m, const V& x) { return ovmr::tmatvec(*m, x); }
  V add(const V& a, const V& b) {
    OVMR_CHECK_SHAPE(a.len() == b.len(), "add: shape mismatch");
    V out(a.len());
    for (std::size_t i = 0; i < a.len(); ++i) out[i] = a[i] + b[i];
    return out;
  }
  V sub(const V& a, const V& b) {
    OVMR_CHECK_SHAPE(a.len() == b.len(), "sub: shape mismatch");
    V out(a.len());
    for (std::size_t i = 0; i < a.len(); ++i) out[i] = a[i] - b[i];
    return out;
  }
  V mul(const V& a, const V& b) {
    OVMR_CHECK_SHAPE(a.len() == b.len(), "mul: shape mismatch");
    V out(a.len());
    for (std::size_t i = 0; i < a.len(); ++i) out[i] = a[i] * b[i];
    return out;
  }
  V scale(const V& a, double c) {
    V out(a.len());
    for (std::size_t i = 0; i < a.len(); ++i) out[i] = c * a[i];
    return out;
  }
  V tanh(const V& a) { return tanh_vec(a); }
  V sigmoid(const V& a) { return sigmoid_vec(a); }
  V softmax(const V& a) { return softmax_vec(a); }
  V exp(const V& a) {
    V out(a.len());
    for (std::size_t i = 0; i < a.len(); ++i) out[i] = std::exp(a[i]);
    return out;
  }
  V relu(const V& a) {
    V out(a.len());
    for (std::size_t i = 0; i < a.len(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return out;
  }
  V clamp(const V& a, double lo, double hi) {
    V out(a.len());
    for (std::size_t i = 0; i < a.len(); ++i) out[i] = std::clamp(a[i], lo, hi);
    return out;
  }
  S dot(const V& a, const V& b) { return ovmr::dot(a, b); }
  S sum(const V& a) {
    double s = 0.0;
    for (double x : a.data) s += x;
    return s;
  }
  V mul_scalar(const V& a, S s) { return scale(a, s); }
  S pick(const V& a, int i) { return a[static_cast<std::size_t>(i)]; }
  V stack(const std::vector<S>& xs) { return Vec(xs); }
  S logsumexp(const V& a) {
    const double mx = *std::max_element(a.data.begin(), a.data.end());
    double acc = 0.0;
    for (double x : a.data) acc += std::exp(x - mx);
    return mx + std::log(acc);
  }
  S cosine(const V& a, const V& b) {
    const double na = norm2(a), nb = norm2(b);
    OVMR_CHECK_CONTRACT(na > 0.0 && nb > 0.0, "cosine: zero vector");
    return ovmr::dot(a, b) / (na * nb);
  }
  S smooth_l1(S x, double target) {
    const double u = x - target;
    return std::abs(u) < 1.0 ? 0.5 * u * u : std::abs(u) - 0.5;
  }
  V slice(const V& a, int start, int len) {
    return Vec(std::vector<double>(a.data.begin() + start,
                                   a.data.begin() + start + len));
  }
  V concat2(const V& a, const V& b) {
    std::vector<double> d(a.data);
    d.insert(d.end(), b.data.begin(), b.data.end());
    return Vec(std::move(d));
  }
  V mean_vars(const std::vector<V>& xs) {
    OVMR_CHECK_SHAPE(!xs.empty(), "mean_vars: empty");
    V out(xs[0].len());
    for (const V& v : xs)
      for (std::size_t i = 0; i < out.len(); ++i) out[i] += v[i];
    const double inv = 1.0 / static_cast<double>(xs.size());
    for (auto& x : out.data) x *= inv;
    return out;
  }

  S add_s(S a, S b) { return a + b; }
  S sub_s(S a, S b) { return a - b; }
  S mul_s(S a, S b) { return a * b; }
  S div_s(S a, S b) { return a / b; }
  S scale_s(S a, double c) { return c * a; }
  S add_const_s(S a, double c) { return a + c; }
  S tanh_s(S a) { return std::tanh(a); }
  S sigmoid_s(S a) { return ovmr::sigmoid(a); }
  S relu_s(S a) { return a > 0.0 ? a : 0.0; }
  S clamp_s(S a, double lo, double hi) { return std::clamp(a, lo, hi); }
  S log_s(S a) { return std::log(a); }
  S sqrt_s(S a) { return std::sqrt(a); }
  S min2(S a, S b) { return std::min(a, b); }
  S max2(S a, S b) { return std::max(a, b); }

  double val(S s) const { return s; }
};

struct TapeExec {
  using V = ad::Var;
  using S = ad::Var;
  using M = ad::Var;

  ad::Tape& t;
  explicit TapeExec(ad::Tape& tape) : t(tape) {}

  M pmat(const Param& p) { return t.param(p); }
  V pvec(const Param& p) {
    OVMR_CHECK_SHAPE(p.value.cols == 1, "pvec: param is not a column");
    return t.param(p);
  }
  V leaf(const Vec& v) { return t.leaf(v); }
  M leafm(const Mat& m) { return t.leaf(m); }
  S sconst(double x) { return t.leaf_scalar(x); }

  V matvec(M m, V x) { return t.matvec(m, x); }
  V tmatvec(M m, V x) { return t.tmatvec(m, x); }
  V add(V a, V b) { return t.add(a, b); }
  V sub(V a, V b) { return t.sub(a, b); }
  V mul(V a, V b) { return t.mul(a, b); }
  V scale(V a, double c) { return t.scale(a, c); }
  V tanh(V a) { return t.tanh(a); }
  V sigmoid(V a) { return t.sigmoid(a); }
  V softmax(V a) { return t.softmax(a); }
  V exp(V a) { return t.exp(a); }
  V relu(V a) { return t.relu(a); }
  V clamp(V a, double lo, double hi) { return t.clamp(a, lo, hi); }
  S dot(V a, V b) { return t.dot(a, b); }
  S sum(V a) { return t.sum(a); }
  V mul_scalar(V a, S s) { return t.mul_scalar(a, s); }
  S pick(V a, int i) { return t.pick(a, i); }
  V stack(const std::vector<S>& xs) { return t.stack(xs); }
  S logsumexp(V a) { return t.logsumexp(a); }
  S cosine(V a, V b) { return t.cosine(a, b); }
  S smooth_l1(S x, double target) { return t.smooth_l1(x, target); }
  V slice(V a, int start, int len) { return t.slice(a, start, len); }
  V concat2(V a, V b) { return t.concat2(a, b); }
  V mean_vars(const std::vector<V>& xs) { return t.mean_vars(xs); }

  S add_s(S a, S b) { return t.add(a, b); }
  S sub_s(S a, S b) { return t.sub(a, b); }
  S mul_s(S a, S b) { return t.mul(a, b); }
  S div_s(S a, S b) { return t.div(a, b); }
  S scale_s(S a, double c) { return t.scale(a, c); }
  S add_const_s(S a, double c) { return t.add_const(a, c); }
  S tanh_s(S a) { return t.tanh(a); }
  S sigmoid_s(S a) { return t.sigmoid(a); }
  S relu_s(S a) { return t.relu(a); }
  S clamp_s(S a, double lo, double hi) { return t.clamp(a, lo, hi); }
  S log_s(S a) { return t.log(a); }
  S sqrt_s(S a) { return t.sqrt(a); }
  S min2(S a, S b) { return t.min2(a, b); }
  S max2(S a, S b) { return t.max2(a, b); }

  double val(S s) const { return t.scalar(s); }
};

}  // namespace ovmr
