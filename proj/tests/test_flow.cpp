#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "ovmr/flow.hpp"
#include "ovmr/numerics.hpp"
#include "ovmr/rng.hpp"

using namespace ovmr;

namespace {

Vec random_vec(Rng& rng, std::size_t d, double lo = -2.0, double hi = 2.0) {
  Vec v(d);
  for (auto& x : v.data) x = rng.uniform(lo, hi);
  return v;
}

void randomize_all(FlowModel& m, Rng& rng, double amp) {
  for (Param* p : m.params())
    for (auto& x : p->value.data) x = rng.uniform(-amp, amp);
}

// log|det| by Gaussian elimination with partial pivoting.
double log_abs_det(Mat a) {
  const std::size_t n = a.rows;
  double acc = 0.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a.at(r, col)) > std::abs(a.at(piv, col))) piv = r;
    if (piv != col)
      for (std::size_t c = 0; c < n; ++c)
        std::swap(a.at(piv, c), a.at(col, c));
    const double d = a.at(col, col);
    REQUIRE(d != 0.0);
    acc += std::log(std::abs(d));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a.at(r, col) / d;
      for (std::size_t c = col; c < n; ++c) a.at(r, c) -= f * a.at(col, c);
    }
  }
  return acc;
}

}  // namespace

TEST_CASE("zero-initialized flow is the identity") {
  Rng rng(5);
  FlowModel m = make_flow(6, 6, 16, 2.0, rng);
  Vec q = random_vec(rng, 6);
  auto [x, logdet] = flow_forward(m, q);
  CHECK(x.data == q.data);
  CHECK(logdet == 0.0);
  CHECK(flow_inverse(m, q).data == q.data);
}

TEST_CASE("single layer with constant log-scale") {
  Rng rng(6);
  FlowModel m = make_flow(2, 1, 8, 2.0, rng);
  const double s = 0.37, t = -0.21;
  // Output layers are zero-initialized, so the biases set the outputs.
  m.layers[0].scale_net.b3.value.data[0] = std::atanh(s / 2.0);
  m.layers[0].shift_net.b3.value.data[0] = t;

  Vec q(std::vector<double>{1.3, -0.8});
  auto [x, logdet] = flow_forward(m, q);
  CHECK(logdet == Catch::Approx(s).margin(1e-12));
  CHECK(x[0] == q[0]);  // pass-through half
  CHECK(x[1] == Catch::Approx(q[1] * std::exp(s) + t).margin(1e-12));

  // Hand-derived inverse of the transformed coordinate: (x - t) e^{-s}.
  Vec back = flow_inverse(m, x);
  CHECK(back[0] == Catch::Approx(q[0]).margin(1e-12));
  CHECK(back[1] == Catch::Approx((x[1] - t) * std::exp(-s)).margin(1e-12));
  CHECK(back[1] == Catch::Approx(q[1]).margin(1e-12));
}

TEST_CASE("roundtrip on random flows stays under 1e-9") {
  Rng rng(7);
  FlowModel m = make_flow(8, 6, 16, 2.0, rng);
  randomize_all(m, rng, 0.5);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Vec q = random_vec(rng, 8, -3.0, 3.0);
    auto [x, logdet] = flow_forward(m, q);
    Vec back = flow_inverse(m, x);
    for (std::size_t k = 0; k < q.len(); ++k)
      worst = std::max(worst, std::abs(back[k] - q[k]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("odd dimension transforms every coordinate") {
  Rng rng(8);
  FlowModel m = make_flow(5, 2, 8, 2.0, rng);
  randomize_all(m, rng, 0.5);
  Vec q = random_vec(rng, 5);
  auto [x, logdet] = flow_forward(m, q);
  for (std::size_t k = 0; k < q.len(); ++k) CHECK(x[k] != q[k]);
  Vec back = flow_inverse(m, x);
  for (std::size_t k = 0; k < q.len(); ++k)
    CHECK(back[k] == Catch::Approx(q[k]).margin(1e-10));
}

TEST_CASE("logdet matches the finite-difference Jacobian") {
  Rng rng(9);
  FlowModel m = make_flow(4, 6, 12, 2.0, rng);
  randomize_all(m, rng, 0.4);
  const double fd_eps = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    Vec q = random_vec(rng, 4);
    auto [x0, logdet] = flow_forward(m, q);
    Mat jac(4, 4);
    for (std::size_t j = 0; j < 4; ++j) {
      Vec qp = q, qm = q;
      qp[j] += fd_eps;
      qm[j] -= fd_eps;
      Vec xp = flow_forward(m, qp).first;
      Vec xm = flow_forward(m, qm).first;
      for (std::size_t i = 0; i < 4; ++i)
        jac.at(i, j) = (xp[i] - xm[i]) / (2.0 * fd_eps);
    }
    const double oracle = log_abs_det(jac);
    CHECK(std::abs(logdet - oracle) / std::max(1e-12, std::abs(oracle)) <
          1e-5);
  }
}

TEST_CASE("log-likelihood at the origin of an identity flow") {
  Rng rng(10);
  FlowModel m = make_flow(2, 2, 8, 2.0, rng);  // zero-init outputs: identity
  Vec zero(2);
  CHECK(log_likelihood(m, zero) == Catch::Approx(-kLog2Pi).margin(1e-9));
  Vec e1(std::vector<double>{1.0, 0.0});
  CHECK(log_likelihood(m, e1) == Catch::Approx(-kLog2Pi - 0.5).margin(1e-9));
}

TEST_CASE("1D density integrates to one") {
  Rng rng(11);
  FlowModel m = make_flow(1, 2, 8, 2.0, rng);
  // Nonzero log-scales and shifts, oriented so the support stays inside the
  // integration window.
  for (auto& l : m.layers) {
    l.scale_net.b3.value.data[0] = rng.uniform(0.05, 0.35);
    l.shift_net.b3.value.data[0] = rng.uniform(-0.4, 0.4);
  }
  auto [x_probe, logdet_probe] = flow_forward(m, Vec(std::vector<double>{0.3}));
  REQUIRE(logdet_probe > 0.0);  // the crafted flow is not the identity

  const int n = 10000;
  const double lo = -8.0, hi = 8.0;
  const double h = (hi - lo) / (n - 1);
  double integral = 0.0;
  for (int i = 0; i < n; ++i) {
    const double q = lo + h * i;
    const double p = std::exp(log_likelihood(m, Vec(std::vector<double>{q})));
    integral += (i == 0 || i == n - 1) ? 0.5 * p : p;
  }
  integral *= h;
  CHECK(integral == Catch::Approx(1.0).margin(1e-3));
}

TEST_CASE("2D density integrates to one") {
  Rng rng(12);
  FlowModel m = make_flow(2, 2, 8, 2.0, rng);
  for (auto& l : m.layers) {
    for (auto& x : l.scale_net.b3.value.data) x = rng.uniform(0.05, 0.35);
    for (auto& x : l.shift_net.b3.value.data) x = rng.uniform(-0.4, 0.4);
  }
  const int n = 400;
  const double lo = -8.0, hi = 8.0;
  const double h = (hi - lo) / (n - 1);
  double integral = 0.0;
  Vec q(2);
  for (int i = 0; i < n; ++i) {
    q[0] = lo + h * i;
    const double wi = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    for (int j = 0; j < n; ++j) {
      q[1] = lo + h * j;
      const double wj = (j == 0 || j == n - 1) ? 0.5 : 1.0;
      integral += wi * wj * std::exp(log_likelihood(m, q));
    }
  }
  integral *= h * h;
  CHECK(integral == Catch::Approx(1.0).margin(1e-3));
}

TEST_CASE("loss_L1 identity cases") {
  Rng rng(13);
  FlowModel m = make_flow(2, 2, 8, 2.0, rng);
  CHECK(loss_L1(m, {Vec(2)}) == 0.0);
  CHECK(loss_L1(m, {Vec(std::vector<double>{1.0, 1.0})}) ==
        Catch::Approx(1.0).margin(1e-12));
  CHECK_THROWS_AS(loss_L1(m, {}), ContractError);
}

TEST_CASE("loss_L1 plus mean log-likelihood is the dropped constant") {
  Rng rng(14);
  FlowModel m = make_flow(6, 4, 12, 2.0, rng);
  randomize_all(m, rng, 0.4);
  std::vector<Vec> batch;
  for (int i = 0; i < 17; ++i) batch.push_back(random_vec(rng, 6));
  double mean_ll = 0.0;
  for (const auto& q : batch) mean_ll += log_likelihood(m, q);
  mean_ll /= static_cast<double>(batch.size());
  const double expect = -0.5 * 6 * kLog2Pi;
  CHECK(loss_L1(m, batch) + mean_ll == Catch::Approx(expect).margin(1e-10));
}

TEST_CASE("loss_L1 gradient passes the finite-difference check") {
  Rng rng(15);
  FlowModel m = make_flow(4, 2, 6, 2.0, rng);
  randomize_all(m, rng, 0.4);
  std::vector<Vec> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(random_vec(rng, 4));

  ad::Tape tape;
  auto build = [&](TapeExec& ex) {
    std::vector<ad::Var> qs;
    for (const auto& q : batch) qs.push_back(ex.leaf(q));
    return loss_l1_on(ex, m, qs);
  };
  auto value = [&]() {
    tape.clear();
    TapeExec ex(tape);
    return tape.scalar(build(ex));
  };
  auto grad = [&]() {
    tape.clear();
    TapeExec ex(tape);
    ad::Var l = build(ex);
    tape.backward(l);
    return tape.scalar(l);
  };
  CHECK(grad_check(value, grad, m.params(), 1e-5) < 1e-4);
}

TEST_CASE("training reduces loss_L1 on a two-mode mixture") {
  Rng rng(16);
  FlowModel m = make_flow(8, 6, 16, 2.0, rng);

  std::vector<Vec> samples;
  Rng data_rng(99);
  for (int i = 0; i < 512; ++i) {
    Vec q(8);
    const double sign = data_rng.below(2) == 0 ? 1.0 : -1.0;
    for (int k = 0; k < 8; ++k)
      q[k] = sign * (k % 2 == 0 ? 1.5 : -1.0) + 0.5 * data_rng.normal();
    samples.push_back(q);
  }

  const double initial = loss_L1(m, samples);
  AdamState opt(0.01);
  auto params = m.params();
  ad::Tape tape;
  for (int step = 0; step < 200; ++step) {
    tape.clear();
    TapeExec ex(tape);
    std::vector<ad::Var> qs;
    qs.reserve(samples.size());
    for (const auto& q : samples) qs.push_back(ex.leaf(q));
    ad::Var loss = loss_l1_on(ex, m, qs);
    tape.backward(loss);
    adam_step(opt, params);
  }
  const double trained = loss_L1(m, samples);
  INFO("initial " << initial << " trained " << trained);
  CHECK(trained <= 0.8 * initial);
}
