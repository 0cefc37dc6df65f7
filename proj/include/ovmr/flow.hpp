#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ovmr/exec.hpp"
#include "ovmr/rng.hpp"
#include "ovmr/tensor.hpp"

namespace ovmr {

inline constexpr double kLog2Pi = 1.8378770664093454836;

/// Two-hidden-layer perceptron used for the coupling scale/shift functions.
struct CouplingNet {
  Param w1, b1, w2, b2, w3, b3;

  CouplingNet() = default;
  CouplingNet(const std::string& name, std::size_t in, std::size_t hidden,
              std::size_t out)
      : w1(name + ".w1", hidden, in),
        b1(name + ".b1", hidden, 1),
        w2(name + ".w2", hidden, hidden),
        b2(name + ".b2", hidden, 1),
        w3(name + ".w3", out, hidden),
        b3(name + ".b3", out, 1) {}

  /// Hidden layers get fan-in uniform init; the output layer stays zero so a
  /// fresh flow starts at the identity map.
  void init(Rng& rng) {
    w1.init_uniform(rng, w1.value.cols);
    w2.init_uniform(rng, w2.value.cols);
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&w1);
    out.push_back(&b1);
    out.push_back(&w2);
    out.push_back(&b2);
    out.push_back(&w3);
    out.push_back(&b3);
  }
};

template <class E>
typename E::V coupling_net_forward(E& ex, const CouplingNet& net,
                                   const typename E::V& in) {
  auto h1 = ex.tanh(ex.add(ex.matvec(ex.pmat(net.w1), in), ex.pvec(net.b1)));
  auto h2 = ex.tanh(ex.add(ex.matvec(ex.pmat(net.w2), h1), ex.pvec(net.b2)));
  return ex.add(ex.matvec(ex.pmat(net.w3), h2), ex.pvec(net.b3));
}

/// Affine coupling layer. The coordinate range [pass_start, pass_start +
/// pass_len) passes through unchanged and conditions an elementwise affine
/// transform of the complementary range. Layers alternate which half passes.
/// For d = 1 there is nothing to condition on: the nets see a constant input
/// and act as learnable per-layer affine constants.
struct CouplingLayer {
  CouplingNet scale_net, shift_net;
  int pass_start = 0, pass_len = 0;
  int act_start = 0, act_len = 0;
  double scale_cap = 2.0;

  bool pass_first() const { return pass_start == 0; }
};

struct FlowModel {
  std::vector<CouplingLayer> layers;
  int d = 0;

  void collect(std::vector<Param*>& out) {
    for (auto& l : layers) {
      l.scale_net.collect(out);
      l.shift_net.collect(out);
    }
  }
  std::vector<Param*> params() {
    std::vector<Param*> out;
    collect(out);
    return out;
  }
};

/// Build a C-layer flow on R^d. The split point is ceil(d/2); even-indexed
/// layers pass the first part through, odd-indexed layers the second, so
/// every coordinate is transformed by some layer.
inline FlowModel make_flow(int d, int num_layers, int hidden, double scale_cap,
                           Rng& rng) {
  OVMR_CHECK_CONTRACT(d >= 1, "make_flow: d must be >= 1");
  OVMR_CHECK_CONTRACT(num_layers >= 1, "make_flow: need at least one layer");
  FlowModel m;
  m.d = d;
  const int split = (d + 1) / 2;
  for (int c = 0; c < num_layers; ++c) {
    CouplingLayer layer;
    if (d == 1) {
      layer.pass_start = 0;
      layer.pass_len = 0;
      layer.act_start = 0;
      layer.act_len = 1;
    } else if (c % 2 == 0) {
      layer.pass_start = 0;
      layer.pass_len = split;
      layer.act_start = split;
      layer.act_len = d - split;
    } else {
      layer.pass_start = split;
      layer.pass_len = d - split;
      layer.act_start = 0;
      layer.act_len = split;
    }
    layer.scale_cap = scale_cap;
    const std::string base = "flow.l" + std::to_string(c);
    const int in_dim = std::max(layer.pass_len, 1);
    layer.scale_net = CouplingNet(base + ".scale", in_dim, hidden,
                                  layer.act_len);
    layer.shift_net = CouplingNet(base + ".shift", in_dim, hidden,
                                  layer.act_len);
    layer.scale_net.init(rng);
    layer.shift_net.init(rng);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

/// Forward pass through all coupling layers. Returns the latent vector and
/// the accumulated log|det J|, which for affine coupling is the sum of the
/// active log-scale outputs.
template <class E>
std::pair<typename E::V, typename E::S> flow_forward_on(
    E& ex, const FlowModel& m, const typename E::V& q) {
  using V = typename E::V;
  const Vec unit_cond(1, 1.0);
  V cur = q;
  typename E::S logdet = ex.sconst(0.0);
  for (const CouplingLayer& l : m.layers) {
    const bool degenerate = l.pass_len == 0;
    V pass = degenerate ? ex.leaf(unit_cond)
                        : ex.slice(cur, l.pass_start, l.pass_len);
    V act = ex.slice(cur, l.act_start, l.act_len);
    V s = ex.scale(ex.tanh(coupling_net_forward(ex, l.scale_net, pass)),
                   l.scale_cap);
    V t = coupling_net_forward(ex, l.shift_net, pass);
    V y = ex.add(ex.mul(act, ex.exp(s)), t);
    if (degenerate)
      cur = y;
    else
      cur = l.pass_first() ? ex.concat2(pass, y) : ex.concat2(y, pass);
    logdet = ex.add_s(logdet, ex.sum(s));
  }
  return {cur, logdet};
}

inline std::pair<Vec, double> flow_forward(const FlowModel& m, const Vec& q) {
  OVMR_CHECK_SHAPE(static_cast<int>(q.len()) == m.d,
                   "flow_forward: dimension mismatch");
  OVMR_CHECK_NUMERIC(all_finite(q), "flow_forward: non-finite input");
  PlainExec ex;
  return flow_forward_on(ex, m, q);
}

/// Closed-form inverse: x_act = (y_act - t(pass)) * exp(-s(pass)).
inline Vec flow_inverse(const FlowModel& m, const Vec& x) {
  OVMR_CHECK_SHAPE(static_cast<int>(x.len()) == m.d,
                   "flow_inverse: dimension mismatch");
  PlainExec ex;
  const Vec unit_cond(1, 1.0);
  Vec cur = x;
  for (auto it = m.layers.rbegin(); it != m.layers.rend(); ++it) {
    const CouplingLayer& l = *it;
    const bool degenerate = l.pass_len == 0;
    Vec pass = degenerate ? unit_cond : ex.slice(cur, l.pass_start, l.pass_len);
    Vec y = ex.slice(cur, l.act_start, l.act_len);
    Vec s = ex.scale(ex.tanh(coupling_net_forward(ex, l.scale_net, pass)),
                     l.scale_cap);
    Vec t = coupling_net_forward(ex, l.shift_net, pass);
    Vec act(y.len());
    for (std::size_t i = 0; i < y.len(); ++i)
      act[i] = (y[i] - t[i]) * std::exp(-s[i]);
    if (degenerate)
      cur = act;
    else
      cur = l.pass_first() ? ex.concat2(pass, act) : ex.concat2(act, pass);
  }
  return cur;
}

/// Exact log-density under the standard-normal prior, constant included so
/// densities integrate to 1.
template <class E>
typename E::S log_likelihood_on(E& ex, const FlowModel& m,
                                const typename E::V& q) {
  auto [x, logdet] = flow_forward_on(ex, m, q);
  auto half_xx = ex.scale_s(ex.dot(x, x), 0.5);
  return ex.add_const_s(ex.sub_s(logdet, half_xx),
                        -0.5 * static_cast<double>(m.d) * kLog2Pi);
}

inline double log_likelihood(const FlowModel& m, const Vec& q) {
  OVMR_CHECK_SHAPE(static_cast<int>(q.len()) == m.d,
                   "log_likelihood: dimension mismatch");
  PlainExec ex;
  const double ll = log_likelihood_on(ex, m, q);
  OVMR_CHECK_NUMERIC(std::isfinite(ll), "log_likelihood: non-finite result");
  return ll;
}

/// Maximum-likelihood objective: mean over the batch of
/// 1/2 |Phi(q)|^2 - sum log|det J|. The d/2 log(2pi) constant is dropped.
template <class E>
typename E::S loss_l1_on(E& ex, const FlowModel& m,
                         const std::vector<typename E::V>& batch) {
  OVMR_CHECK_CONTRACT(!batch.empty(), "loss_L1: empty batch");
  std::vector<typename E::S> terms;
  terms.reserve(batch.size());
  for (const auto& q : batch) {
    auto [x, logdet] = flow_forward_on(ex, m, q);
    terms.push_back(ex.sub_s(ex.scale_s(ex.dot(x, x), 0.5), logdet));
  }
  return ex.scale_s(ex.sum(ex.stack(terms)),
                    1.0 / static_cast<double>(terms.size()));
}

inline double loss_L1(const FlowModel& m, const std::vector<Vec>& batch) {
  PlainExec ex;
  return loss_l1_on(ex, m, batch);
}

}  // namespace ovmr
