#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ovmr/common.hpp"
#include "ovmr/numerics.hpp"
#include "ovmr/tensor.hpp"

namespace ovmr::ad {

/// Handle into a Tape. Scalars are 1x1, vectors n x 1.
struct Var {
  std::int32_t id = -1;
  std::int32_t rows = 0, cols = 0;
  std::int32_t size() const { return rows * cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }
};

/// Reverse-mode tape over the fixed primitive set used by the model.
/// Values are computed eagerly as operations are recorded; backward() walks
/// the record in reverse. Storage is two flat arenas (values, gradients), so
/// clear() retains capacity across training steps.
class Tape {
  enum class Op : std::uint8_t {
    Leaf, Add, Sub, Mul, ScaleC, AddC, MatVec, TMatVec, Tanh, Sigmoid, Relu,
    Exp, Log, Sqrt, Softmax, ClampC, Dot, Sum, Div, MulS, Pick, Stack,
    LogSumExp, Cosine, SmoothL1C, Min2, Max2, Slice, Concat2, MeanVars,
  };

  struct Slot {
    std::size_t off;
    std::int32_t rows, cols;
  };
  struct Rec {
    Op op;
    std::int32_t out, a, b;
    std::int32_t p0, p1;  // payload range or integer args
    double c0, c1;
  };

 public:
  void clear() {
    slots_.clear();
    recs_.clear();
    vals_.clear();
    ipool_.clear();
    leases_.clear();
    lease_cache_.clear();
  }

  std::size_t num_ops() const { return recs_.size(); }

  double scalar(Var v) const {
    OVMR_CHECK_SHAPE(v.is_scalar(), "scalar: var is not 1x1");
    return vals_[slots_[v.id].off];
  }
  const double* data(Var v) const { return vals_.data() + slots_[v.id].off; }
  const double* grad_data(Var v) const {
    return grads_.data() + slots_[v.id].off;
  }
  Vec value_vec(Var v) const {
    const double* p = data(v);
    return Vec(std::vector<double>(p, p + v.size()));
  }

  // -- leaves ---------------------------------------------------------------

  Var leaf(const Vec& v) {
    Var out = alloc(static_cast<std::int32_t>(v.len()), 1);
    std::copy(v.data.begin(), v.data.end(), vals_.begin() + slots_[out.id].off);
    push({Op::Leaf, out.id, -1, -1, 0, 0, 0.0, 0.0});
    return out;
  }

  Var leaf(const Mat& m) {
    Var out = alloc(static_cast<std::int32_t>(m.rows),
                    static_cast<std::int32_t>(m.cols));
    std::copy(m.data.begin(), m.data.end(), vals_.begin() + slots_[out.id].off);
    push({Op::Leaf, out.id, -1, -1, 0, 0, 0.0, 0.0});
    return out;
  }

  Var leaf_scalar(double x) {
    Var out = alloc(1, 1);
    vals_[slots_[out.id].off] = x;
    push({Op::Leaf, out.id, -1, -1, 0, 0, 0.0, 0.0});
    return out;
  }

  /// Lease a parameter: one leaf per distinct Param per tape; after
  /// backward(), the slot gradient is accumulated into p.grad.
  Var param(const Param& p) {
    auto it = lease_cache_.find(&p);
    if (it != lease_cache_.end()) return it->second;
    Var out = leaf(p.value);
    lease_cache_.emplace(&p, out);
    leases_.push_back({&p, out});
    return out;
  }

  // -- elementwise ----------------------------------------------------------

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    Var out = alloc(a.rows, a.cols);
    binary_loop(out, a, b, [](double x, double y) { return x + y; });
    push({Op::Add, out.id, a.id, b.id, 0, 0, 0.0, 0.0});
    return out;
  }

  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    Var out = alloc(a.rows, a.cols);
    binary_loop(out, a, b, [](double x, double y) { return x - y; });
    push({Op::Sub, out.id, a.id, b.id, 0, 0, 0.0, 0.0});
    return out;
  }

  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    Var out = alloc(a.rows, a.cols);
    binary_loop(out, a, b, [](double x, double y) { return x * y; });
    push({Op::Mul, out.id, a.id, b.id, 0, 0, 0.0, 0.0});
    return out;
  }

  Var div(Var a, Var b) {
    same_shape(a, b, "div");
    Var out = alloc(a.rows, a.cols);
    binary_loop(out, a, b, [](double x, double y) { return x / y; });
    push({Op::Div, out.id, a.id, b.id, 0, 0, 0.0, 0.0});
    return out;
  }

  Var scale(Var a, double c) {
    Var out = alloc(a.rows, a.cols);
    unary_loop(out, a, [c](double x) { return c * x; });
    push({Op::ScaleC, out.id, a.id, -1, 0, 0, c, 0.0});
    return out;
  }

  Var add_const(Var a, double c) {
    Var out = alloc(a.rows, a.cols);
    unary_loop(out, a, [c](double x) { return x + c; });
    push({Op::AddC, out.id, a.id, -1, 0, 0, c, 0.0});
    return out;
  }

  Var tanh(Var a) {
    Var out = alloc(a.rows, a.cols);
    unary_loop(out, a, [](double x) { return std::tanh(x); });
    push({Op::Tanh, out.id, a.id, -1, 0, 0, 0.0, 0.0});
    return out;
  }

  Var sigmoid(Var a) {
    Var out = alloc(a.rows, a.cols);
    unary_loop(out, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    push({Op::Sigmoid, out.id, a.id, -1, 0, 0, 0.0, 0.0});
    return out;
  }

  Var relu(Var a) {
    Var out = alloc(a.rows, a.cols);
    unary_loop(out, a, [](double x) { return x > 0.0 ? x : 0.0; });
    push({Op::Relu, out.id, a.id, -1, 0, 0, 0.0, 0.0});
    return out;
  }

  Var exp(Var a) {
    Var out = alloc(a.rows, a.cols);
    unary_loop(out, a, [](double x) { return std::exp(x); });
    push({Op::Exp, out.id, a.id, -1, 0, 0, 0.0, 0.0});
    return out;
  }

  Var log(Var a) {
    Var out = alloc(a.rows, a.cols);
    unary_loop(out, a, [](double x) { return std::log(x); });
    push({Op::Log, out.id, a.id, -1, 0, 0, 0.0, 0.0});
    return out;
  }

  Var sqrt(Var a) {
    Var out = alloc(a.rows, a.cols);
    unary_loop(out, a, [](double x) { return std::sqrt(x); });
    push({Op::Sqrt, out.id, a.id, -1, 0, 0, 0.0, 0.0});
    return out;
  }

  /// Clamp to [lo, hi]; gradient passes only where the input is strictly
  /// inside the interval.
  Var clamp(Var a, double lo, double hi) {
    Var out = alloc(a.rows, a.cols);
    unary_loop(out, a, [lo, hi](double x) { return std::clamp(x, lo, hi); });
    push({Op::ClampC, out.id, a.id, -1, 0, 0, lo, hi});
    return out;
  }

  Var softmax(Var a) {
    OVMR_CHECK_SHAPE(a.size() >= 1, "softmax: empty");
    Var out = alloc(a.rows, a.cols);
    const double* x = data_of(a);
    double* y = mut(out);
    const double mx = *std::max_element(x, x + a.size());
    double sum = 0.0;
    for (std::int32_t i = 0; i < a.size(); ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (std::int32_t i = 0; i < a.size(); ++i) y[i] /= sum;
    push({Op::Softmax, out.id, a.id, -1, 0, 0, 0.0, 0.0});
    return out;
  }

  // -- linear algebra ---------------------------------------------------------

  Var matvec(Var m, Var x) {
    OVMR_CHECK_SHAPE(x.cols == 1 && m.cols == x.rows,
                     "matvec: shape mismatch");
    Var out = alloc(m.rows, 1);
    const double* md = data_of(m);
    const double* xd = data_of(x);
    double* y = mut(out);
    for (std::int32_t r = 0; r < m.rows; ++r) {
      const double* row = md + static_cast<std::size_t>(r) * m.cols;
      double acc = 0.0;
      for (std::int32_t c = 0; c < m.cols; ++c) acc += row[c] * xd[c];
      y[r] = acc;
    }
    push({Op::MatVec, out.id, m.id, x.id, 0, 0, 0.0, 0.0});
    return out;
  }

  /// m^T x.
  Var tmatvec(Var m, Var x) {
    OVMR_CHECK_SHAPE(x.cols == 1 && m.rows == x.rows,
                     "tmatvec: shape mismatch");
    Var out = alloc(m.cols, 1);
    const double* md = data_of(m);
    const double* xd = data_of(x);
    double* y = mut(out);
    for (std::int32_t c = 0; c < m.cols; ++c) y[c] = 0.0;
    for (std::int32_t r = 0; r < m.rows; ++r) {
      const double* row = md + static_cast<std::size_t>(r) * m.cols;
      const double s = xd[r];
      for (std::int32_t c = 0; c < m.cols; ++c) y[c] += row[c] * s;
    }
    push({Op::TMatVec, out.id, m.id, x.id, 0, 0, 0.0, 0.0});
    return out;
  }

  Var dot(Var a, Var b) {
    same_shape(a, b, "dot");
    Var out = alloc(1, 1);
    const double* x = data_of(a);
    const double* y = data_of(b);
    double acc = 0.0;
    for (std::int32_t i = 0; i < a.size(); ++i) acc += x[i] * y[i];
    *mut(out) = acc;
    push({Op::Dot, out.id, a.id, b.id, 0, 0, 0.0, 0.0});
    return out;
  }

  Var sum(Var a) {
    Var out = alloc(1, 1);
    const double* x = data_of(a);
    double acc = 0.0;
    for (std::int32_t i = 0; i < a.size(); ++i) acc += x[i];
    *mut(out) = acc;
    push({Op::Sum, out.id, a.id, -1, 0, 0, 0.0, 0.0});
    return out;
  }

  /// Vector scaled by a scalar var.
  Var mul_scalar(Var a, Var s) {
    OVMR_CHECK_SHAPE(s.is_scalar(), "mul_scalar: scale is not 1x1");
    Var out = alloc(a.rows, a.cols);
    const double sv = vals_[slots_[s.id].off];
    const double* x = data_of(a);
    double* y = mut(out);
    for (std::int32_t i = 0; i < a.size(); ++i) y[i] = sv * x[i];
    push({Op::MulS, out.id, a.id, s.id, 0, 0, 0.0, 0.0});
    return out;
  }

  Var pick(Var a, std::int32_t i) {
    OVMR_CHECK_SHAPE(i >= 0 && i < a.size(), "pick: index out of range");
    Var out = alloc(1, 1);
    *mut(out) = data_of(a)[i];
    push({Op::Pick, out.id, a.id, -1, i, 0, 0.0, 0.0});
    return out;
  }

  Var stack(const std::vector<Var>& xs) {
    OVMR_CHECK_SHAPE(!xs.empty(), "stack: empty");
    Var out = alloc(static_cast<std::int32_t>(xs.size()), 1);
    double* y = mut(out);
    const std::int32_t p0 = static_cast<std::int32_t>(ipool_.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      OVMR_CHECK_SHAPE(xs[i].is_scalar(), "stack: non-scalar element");
      y[i] = vals_[slots_[xs[i].id].off];
      ipool_.push_back(xs[i].id);
    }
    push({Op::Stack, out.id, -1, -1, p0,
          static_cast<std::int32_t>(xs.size()), 0.0, 0.0});
    return out;
  }

  Var logsumexp(Var a) {
    Var out = alloc(1, 1);
    const double* x = data_of(a);
    const double mx = *std::max_element(x, x + a.size());
    double acc = 0.0;
    for (std::int32_t i = 0; i < a.size(); ++i) acc += std::exp(x[i] - mx);
    *mut(out) = mx + std::log(acc);
    push({Op::LogSumExp, out.id, a.id, -1, 0, 0, 0.0, 0.0});
    return out;
  }

  /// Fused cosine similarity a.b / (|a||b|). Callers must not pass zero
  /// vectors; checked here once rather than via epsilon fudging.
  Var cosine(Var a, Var b) {
    same_shape(a, b, "cosine");
    const double* x = data_of(a);
    const double* y = data_of(b);
    double dd = 0.0, na = 0.0, nb = 0.0;
    for (std::int32_t i = 0; i < a.size(); ++i) {
      dd += x[i] * y[i];
      na += x[i] * x[i];
      nb += y[i] * y[i];
    }
    OVMR_CHECK_CONTRACT(na > 0.0 && nb > 0.0, "cosine: zero vector");
    Var out = alloc(1, 1);
    *mut(out) = dd / std::sqrt(na * nb);
    push({Op::Cosine, out.id, a.id, b.id, 0, 0, 0.0, 0.0});
    return out;
  }

  /// smooth-L1(x - target): 0.5 u^2 for |u| < 1, |u| - 0.5 otherwise.
  Var smooth_l1(Var x, double target) {
    OVMR_CHECK_SHAPE(x.is_scalar(), "smooth_l1: non-scalar");
    const double u = vals_[slots_[x.id].off] - target;
    Var out = alloc(1, 1);
    *mut(out) = std::abs(u) < 1.0 ? 0.5 * u * u : std::abs(u) - 0.5;
    push({Op::SmoothL1C, out.id, x.id, -1, 0, 0, target, 0.0});
    return out;
  }

  Var min2(Var a, Var b) {
    OVMR_CHECK_SHAPE(a.is_scalar() && b.is_scalar(), "min2: non-scalar");
    Var out = alloc(1, 1);
    const double av = vals_[slots_[a.id].off], bv = vals_[slots_[b.id].off];
    *mut(out) = std::min(av, bv);
    push({Op::Min2, out.id, a.id, b.id, 0, 0, 0.0, 0.0});
    return out;
  }

  Var max2(Var a, Var b) {
    OVMR_CHECK_SHAPE(a.is_scalar() && b.is_scalar(), "max2: non-scalar");
    Var out = alloc(1, 1);
    const double av = vals_[slots_[a.id].off], bv = vals_[slots_[b.id].off];
    *mut(out) = std::max(av, bv);
    push({Op::Max2, out.id, a.id, b.id, 0, 0, 0.0, 0.0});
    return out;
  }

  /// Contiguous sub-vector [start, start+len).
  Var slice(Var a, std::int32_t start, std::int32_t len) {
    OVMR_CHECK_SHAPE(start >= 0 && len >= 1 && start + len <= a.size(),
                     "slice: range out of bounds");
    Var out = alloc(len, 1);
    const double* x = data_of(a);
    std::copy(x + start, x + start + len, mut(out));
    push({Op::Slice, out.id, a.id, -1, start, len, 0.0, 0.0});
    return out;
  }

  Var concat2(Var a, Var b) {
    OVMR_CHECK_SHAPE(a.cols == 1 && b.cols == 1, "concat2: vectors only");
    Var out = alloc(a.rows + b.rows, 1);
    double* y = mut(out);
    std::copy(data_of(a), data_of(a) + a.size(), y);
    std::copy(data_of(b), data_of(b) + b.size(), y + a.size());
    push({Op::Concat2, out.id, a.id, b.id, 0, 0, 0.0, 0.0});
    return out;
  }

  /// Mean of same-shaped vars (window pooling over per-frame vectors).
  Var mean_vars(const std::vector<Var>& xs) {
    OVMR_CHECK_SHAPE(!xs.empty(), "mean_vars: empty");
    Var out = alloc(xs[0].rows, xs[0].cols);
    double* y = mut(out);
    std::fill(y, y + out.size(), 0.0);
    const std::int32_t p0 = static_cast<std::int32_t>(ipool_.size());
    for (const Var& v : xs) {
      same_shape(v, xs[0], "mean_vars");
      const double* x = data_of(v);
      for (std::int32_t i = 0; i < out.size(); ++i) y[i] += x[i];
      ipool_.push_back(v.id);
    }
    const double inv = 1.0 / static_cast<double>(xs.size());
    for (std::int32_t i = 0; i < out.size(); ++i) y[i] *= inv;
    push({Op::MeanVars, out.id, -1, -1, p0,
          static_cast<std::int32_t>(xs.size()), 0.0, 0.0});
    return out;
  }

  // -- backward ----------------------------------------------------------------

  /// Seed d(loss)/d(loss) = 1, sweep the record in reverse and flush leased
  /// parameter gradients into their Param::grad buffers (accumulating).
  void backward(Var loss) {
    OVMR_CHECK_SHAPE(loss.is_scalar(), "backward: loss is not 1x1");
    OVMR_CHECK_NUMERIC(std::isfinite(scalar(loss)),
                       "backward: non-finite loss");
    grads_.assign(vals_.size(), 0.0);
    grads_[slots_[loss.id].off] = 1.0;

    for (std::size_t ri = recs_.size(); ri-- > 0;) {
      const Rec& r = recs_[ri];
      if (r.op == Op::Leaf) continue;
      const Slot& so = slots_[r.out];
      const double* g = grads_.data() + so.off;
      const double* yv = vals_.data() + so.off;
      const std::int32_t n = so.rows * so.cols;
      switch (r.op) {
        case Op::Add: {
          double* ga = gslot(r.a);
          double* gb = gslot(r.b);
          for (std::int32_t i = 0; i < n; ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
          }
          break;
        }
        case Op::Sub: {
          double* ga = gslot(r.a);
          double* gb = gslot(r.b);
          for (std::int32_t i = 0; i < n; ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
          }
          break;
        }
        case Op::Mul: {
          double* ga = gslot(r.a);
          double* gb = gslot(r.b);
          const double* av = vslot(r.a);
          const double* bv = vslot(r.b);
          for (std::int32_t i = 0; i < n; ++i) {
            ga[i] += g[i] * bv[i];
            gb[i] += g[i] * av[i];
          }
          break;
        }
        case Op::Div: {
          double* ga = gslot(r.a);
          double* gb = gslot(r.b);
          const double* bv = vslot(r.b);
          for (std::int32_t i = 0; i < n; ++i) {
            ga[i] += g[i] / bv[i];
            gb[i] -= g[i] * yv[i] / bv[i];
          }
          break;
        }
        case Op::ScaleC: {
          double* ga = gslot(r.a);
          for (std::int32_t i = 0; i < n; ++i) ga[i] += g[i] * r.c0;
          break;
        }
        case Op::AddC: {
          double* ga = gslot(r.a);
          for (std::int32_t i = 0; i < n; ++i) ga[i] += g[i];
          break;
        }
        case Op::Tanh: {
          double* ga = gslot(r.a);
          for (std::int32_t i = 0; i < n; ++i)
            ga[i] += g[i] * (1.0 - yv[i] * yv[i]);
          break;
        }
        case Op::Sigmoid: {
          double* ga = gslot(r.a);
          for (std::int32_t i = 0; i < n; ++i)
            ga[i] += g[i] * yv[i] * (1.0 - yv[i]);
          break;
        }
        case Op::Relu: {
          double* ga = gslot(r.a);
          const double* av = vslot(r.a);
          for (std::int32_t i = 0; i < n; ++i)
            if (av[i] > 0.0) ga[i] += g[i];
          break;
        }
        case Op::Exp: {
          double* ga = gslot(r.a);
          for (std::int32_t i = 0; i < n; ++i) ga[i] += g[i] * yv[i];
          break;
        }
        case Op::Log: {
          double* ga = gslot(r.a);
          const double* av = vslot(r.a);
          for (std::int32_t i = 0; i < n; ++i) ga[i] += g[i] / av[i];
          break;
        }
        case Op::Sqrt: {
          double* ga = gslot(r.a);
          for (std::int32_t i = 0; i < n; ++i)
            ga[i] += g[i] * 0.5 / yv[i];
          break;
        }
        case Op::ClampC: {
          double* ga = gslot(r.a);
          const double* av = vslot(r.a);
          for (std::int32_t i = 0; i < n; ++i)
            if (av[i] > r.c0 && av[i] < r.c1) ga[i] += g[i];
          break;
        }
        case Op::Softmax: {
          double* ga = gslot(r.a);
          double gy = 0.0;
          for (std::int32_t i = 0; i < n; ++i) gy += g[i] * yv[i];
          for (std::int32_t i = 0; i < n; ++i)
            ga[i] += yv[i] * (g[i] - gy);
          break;
        }
        case Op::MatVec: {
          const Slot& sm = slots_[r.a];
          double* gm = gslot(r.a);
          double* gx = gslot(r.b);
          const double* mv = vslot(r.a);
          const double* xv = vslot(r.b);
          for (std::int32_t rr = 0; rr < sm.rows; ++rr) {
            const double gr = g[rr];
            double* gmr = gm + static_cast<std::size_t>(rr) * sm.cols;
            const double* mr = mv + static_cast<std::size_t>(rr) * sm.cols;
            for (std::int32_t cc = 0; cc < sm.cols; ++cc) {
              gmr[cc] += gr * xv[cc];
              gx[cc] += mr[cc] * gr;
            }
          }
          break;
        }
        case Op::TMatVec: {
          const Slot& sm = slots_[r.a];
          double* gm = gslot(r.a);
          double* gx = gslot(r.b);
          const double* mv = vslot(r.a);
          const double* xv = vslot(r.b);
          for (std::int32_t rr = 0; rr < sm.rows; ++rr) {
            double* gmr = gm + static_cast<std::size_t>(rr) * sm.cols;
            const double* mr = mv + static_cast<std::size_t>(rr) * sm.cols;
            const double xr = xv[rr];
            double acc = 0.0;
            for (std::int32_t cc = 0; cc < sm.cols; ++cc) {
              gmr[cc] += xr * g[cc];
              acc += mr[cc] * g[cc];
            }
            gx[rr] += acc;
          }
          break;
        }
        case Op::Dot: {
          double* ga = gslot(r.a);
          double* gb = gslot(r.b);
          const double* av = vslot(r.a);
          const double* bv = vslot(r.b);
          const double gs = g[0];
          const std::int32_t m = slots_[r.a].rows * slots_[r.a].cols;
          for (std::int32_t i = 0; i < m; ++i) {
            ga[i] += gs * bv[i];
            gb[i] += gs * av[i];
          }
          break;
        }
        case Op::Sum: {
          double* ga = gslot(r.a);
          const double gs = g[0];
          const std::int32_t m = slots_[r.a].rows * slots_[r.a].cols;
          for (std::int32_t i = 0; i < m; ++i) ga[i] += gs;
          break;
        }
        case Op::MulS: {
          double* ga = gslot(r.a);
          double* gs = gslot(r.b);
          const double* av = vslot(r.a);
          const double sv = vslot(r.b)[0];
          double acc = 0.0;
          for (std::int32_t i = 0; i < n; ++i) {
            ga[i] += g[i] * sv;
            acc += g[i] * av[i];
          }
          gs[0] += acc;
          break;
        }
        case Op::Pick: {
          gslot(r.a)[r.p0] += g[0];
          break;
        }
        case Op::Stack: {
          for (std::int32_t i = 0; i < r.p1; ++i)
            gslot(ipool_[r.p0 + i])[0] += g[i];
          break;
        }
        case Op::LogSumExp: {
          double* ga = gslot(r.a);
          const double* av = vslot(r.a);
          const double z = yv[0];
          const double gs = g[0];
          const std::int32_t m = slots_[r.a].rows * slots_[r.a].cols;
          for (std::int32_t i = 0; i < m; ++i)
            ga[i] += gs * std::exp(av[i] - z);
          break;
        }
        case Op::Cosine: {
          double* ga = gslot(r.a);
          double* gb = gslot(r.b);
          const double* av = vslot(r.a);
          const double* bv = vslot(r.b);
          const std::int32_t m = slots_[r.a].rows * slots_[r.a].cols;
          double na2 = 0.0, nb2 = 0.0;
          for (std::int32_t i = 0; i < m; ++i) {
            na2 += av[i] * av[i];
            nb2 += bv[i] * bv[i];
          }
          const double inv_ab = 1.0 / std::sqrt(na2 * nb2);
          const double c = yv[0];
          const double gs = g[0];
          for (std::int32_t i = 0; i < m; ++i) {
            ga[i] += gs * (bv[i] * inv_ab - c * av[i] / na2);
            gb[i] += gs * (av[i] * inv_ab - c * bv[i] / nb2);
          }
          break;
        }
        case Op::SmoothL1C: {
          const double u = vslot(r.a)[0] - r.c0;
          const double d = std::abs(u) < 1.0 ? u : (u > 0.0 ? 1.0 : -1.0);
          gslot(r.a)[0] += g[0] * d;
          break;
        }
        case Op::Min2: {
          const double av = vslot(r.a)[0], bv = vslot(r.b)[0];
          gslot(av <= bv ? r.a : r.b)[0] += g[0];
          break;
        }
        case Op::Max2: {
          const double av = vslot(r.a)[0], bv = vslot(r.b)[0];
          gslot(av >= bv ? r.a : r.b)[0] += g[0];
          break;
        }
        case Op::Slice: {
          double* ga = gslot(r.a);
          for (std::int32_t i = 0; i < r.p1; ++i) ga[r.p0 + i] += g[i];
          break;
        }
        case Op::Concat2: {
          double* ga = gslot(r.a);
          double* gb = gslot(r.b);
          const std::int32_t na = slots_[r.a].rows * slots_[r.a].cols;
          for (std::int32_t i = 0; i < na; ++i) ga[i] += g[i];
          for (std::int32_t i = 0; i < n - na; ++i) gb[i] += g[na + i];
          break;
        }
        case Op::MeanVars: {
          const double inv = 1.0 / static_cast<double>(r.p1);
          for (std::int32_t k = 0; k < r.p1; ++k) {
            double* gx = gslot(ipool_[r.p0 + k]);
            for (std::int32_t i = 0; i < n; ++i) gx[i] += g[i] * inv;
          }
          break;
        }
        case Op::Leaf:
          break;
      }
    }

    for (const auto& [p, var] : leases_) {
      const double* g = grads_.data() + slots_[var.id].off;
      for (std::size_t i = 0; i < p->size(); ++i) p->grad.data[i] += g[i];
    }
  }

 private:
  Var alloc(std::int32_t rows, std::int32_t cols) {
    Var v;
    v.id = static_cast<std::int32_t>(slots_.size());
    v.rows = rows;
    v.cols = cols;
    slots_.push_back({vals_.size(), rows, cols});
    vals_.resize(vals_.size() + static_cast<std::size_t>(rows) * cols, 0.0);
    return v;
  }

  void push(Rec r) { recs_.push_back(r); }

  double* mut(Var v) { return vals_.data() + slots_[v.id].off; }
  const double* data_of(Var v) const { return vals_.data() + slots_[v.id].off; }
  double* gslot(std::int32_t id) { return grads_.data() + slots_[id].off; }
  const double* vslot(std::int32_t id) const {
    return vals_.data() + slots_[id].off;
  }

  static void same_shape(Var a, Var b, const char* who) {
    OVMR_CHECK_SHAPE(a.rows == b.rows && a.cols == b.cols,
                     std::string(who) + ": shape mismatch");
  }

  template <typename F>
  void unary_loop(Var out, Var a, F f) {
    const double* x = data_of(a);
    double* y = mut(out);
    for (std::int32_t i = 0; i < a.size(); ++i) y[i] = f(x[i]);
  }
  template <typename F>
  void binary_loop(Var out, Var a, Var b, F f) {
    const double* x = data_of(a);
    const double* yb = data_of(b);
    double* y = mut(out);
    for (std::int32_t i = 0; i < a.size(); ++i) y[i] = f(x[i], yb[i]);
  }

  std::vector<Slot> slots_;
  std::vector<Rec> recs_;
  std::vector<double> vals_, grads_;
  std::vector<std::int32_t> ipool_;
  std::vector<std::pair<const Param*, Var>> leases_;
  std::unordered_map<const Param*, Var> lease_cache_;
};

}  // namespace ovmr::ad
