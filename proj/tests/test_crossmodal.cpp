#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "ovmr/crossmodal.hpp"
#include "ovmr/numerics.hpp"
#include "ovmr/rng.hpp"

using namespace ovmr;

namespace {
Mat random_mat(Rng& rng, std::size_t r, std::size_t c, double amp = 1.0) {
  Mat m(r, c);
  for (auto& x : m.data) x = rng.uniform(-amp, amp);
  return m;
}
}  // namespace

TEST_CASE("attentive_pool basics") {
  SECTION("identical rows pool to that row") {
    Mat x(3, 4);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c) x.at(r, c) = 0.3 * (c + 1);
    Rng rng(1);
    Mat m = random_mat(rng, 4, 1);
    auto [pooled, w] = attentive_pool(x, m);
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(pooled[c] == Catch::Approx(0.3 * (c + 1)).margin(1e-12));
  }
  SECTION("zero pooling matrix gives uniform weights and the row mean") {
    Rng rng(2);
    Mat x = random_mat(rng, 5, 3);
    Mat m(3, 1);
    auto [pooled, w] = attentive_pool(x, m);
    for (double wi : w.data) CHECK(wi == Catch::Approx(0.2).margin(1e-12));
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < 5; ++r) mean += x.at(r, c) / 5.0;
      CHECK(pooled[c] == Catch::Approx(mean).margin(1e-12));
    }
  }
  SECTION("softmax arithmetic: logits (ln 3, 0)") {
    Mat x(2, 1);
    x.at(0, 0) = std::log(3.0);
    x.at(1, 0) = 0.0;
    Mat m(1, 1);
    m.at(0, 0) = 1.0;
    auto [pooled, w] = attentive_pool(x, m);
    CHECK(w[0] == Catch::Approx(0.75).margin(1e-12));
    CHECK(w[1] == Catch::Approx(0.25).margin(1e-12));
  }
}

TEST_CASE("attentive_pool weights sum to one, pooled stays in the hull") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(6), d = 2 + rng.below(5);
    Mat x = random_mat(rng, n, d, 2.0);
    Mat m = random_mat(rng, d, 1, 2.0);
    auto [pooled, w] = attentive_pool(x, m);
    double sum = 0.0;
    for (double wi : w.data) sum += wi;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    for (std::size_t c = 0; c < d; ++c) {
      double lo = x.at(0, c), hi = x.at(0, c);
      for (std::size_t r = 1; r < n; ++r) {
        lo = std::min(lo, x.at(r, c));
        hi = std::max(hi, x.at(r, c));
      }
      CHECK(pooled[c] >= lo - 1e-12);
      CHECK(pooled[c] <= hi + 1e-12);
    }
  }
}

TEST_CASE("cosine_sim endpoints") {
  Vec a(std::vector<double>{1.0, 2.0, -3.0});
  CHECK(cosine_sim(a, a) == Catch::Approx(1.0).margin(1e-12));
  Vec b(std::vector<double>{2.0, -1.0, 0.0});
  CHECK(cosine_sim(a, b) == Catch::Approx(0.0).margin(1e-12));
  Vec na(std::vector<double>{-1.0, -2.0, 3.0});
  CHECK(cosine_sim(a, na) == Catch::Approx(-1.0).margin(1e-12));
  CHECK_THROWS_AS(cosine_sim(a, Vec(3)), ContractError);
}

TEST_CASE("loss_L3 closed forms") {
  SECTION("all pairwise sims equal gives log Nb") {
    Vec v(std::vector<double>{1.0, 1.0});
    std::vector<std::pair<Vec, Vec>> pairs(4, {v, v});
    CHECK(loss_L3(pairs, 0.2) ==
          Catch::Approx(std::log(4.0)).margin(1e-12));
  }
  SECTION("diag 1, off-diag -1, eta 0.2") {
    Vec e1(std::vector<double>{1.0, 0.0});
    Vec ne1(std::vector<double>{-1.0, 0.0});
    std::vector<std::pair<Vec, Vec>> pairs{{e1, e1}, {ne1, ne1}};
    CHECK(loss_L3(pairs, 0.2) ==
          Catch::Approx(std::log(1.0 + std::exp(-10.0))).epsilon(1e-9));
  }
  SECTION("large eta washes out to log Nb") {
    Rng rng(4);
    std::vector<std::pair<Vec, Vec>> pairs;
    for (int i = 0; i < 3; ++i) {
      Vec v(4), q(4);
      for (auto& x : v.data) x = rng.uniform(-1, 1);
      for (auto& x : q.data) x = rng.uniform(-1, 1);
      pairs.push_back({v, q});
    }
    CHECK(loss_L3(pairs, 1e7) == Catch::Approx(std::log(3.0)).margin(1e-6));
  }
  SECTION("contract: at least two pairs") {
    Vec v(std::vector<double>{1.0});
    CHECK_THROWS_AS(loss_L3({{v, v}}, 0.2), ContractError);
    CHECK_THROWS_AS(loss_L3({{v, v}, {v, v}}, 0.0), ContractError);
  }
}

TEST_CASE("loss_L3 is permutation invariant and drops as a match improves") {
  // Orthogonal construction: sim(v_i, q_j) = cos(theta_j) when i == j else 0,
  // so one matched similarity can move with everything else pinned.
  auto build = [](const std::vector<double>& thetas) {
    const std::size_t nb = thetas.size();
    std::vector<std::pair<Vec, Vec>> pairs;
    for (std::size_t i = 0; i < nb; ++i) {
      Vec v(2 * nb), q(2 * nb);
      v[i] = 1.0;
      q[i] = std::cos(thetas[i]);
      q[nb + i] = std::sin(thetas[i]);
      pairs.push_back({v, q});
    }
    return pairs;
  };

  const std::vector<double> thetas{0.3, 1.1, 0.7};
  const double base = loss_L3(build(thetas), 0.2);

  auto permuted = build(thetas);
  std::swap(permuted[0], permuted[2]);
  CHECK(loss_L3(permuted, 0.2) == Catch::Approx(base).margin(1e-12));

  std::vector<double> better = thetas;
  better[1] = 0.9;  // cos up: sim_11 rises, all other sims unchanged
  CHECK(loss_L3(build(better), 0.2) < base);
}

TEST_CASE("fqm_score closed forms and range") {
  const std::size_t d = 4;
  CrossmodalParams p(d);
  Rng rng(5);
  p.init(rng);
  Vec f(std::vector<double>{0.5, -0.2, 0.9, 0.1});
  Vec q(std::vector<double>{0.3, 0.8, -0.5, 0.2});

  SECTION("zero M1 or zero M2 gives 0.5") {
    CrossmodalParams z1(d);
    z1.init(rng);
    std::fill(z1.M1.value.data.begin(), z1.M1.value.data.end(), 0.0);
    CHECK(fqm_score(f, q, z1) == 0.5);
    CrossmodalParams z2(d);
    z2.init(rng);
    std::fill(z2.M2.value.data.begin(), z2.M2.value.data.end(), 0.0);
    CHECK(fqm_score(f, q, z2) == 0.5);
  }
  SECTION("saturated tanh with q'M2 = ln 3 gives 0.75") {
    CrossmodalParams c(d);
    // f.M1 large -> tanh term 1 to double precision; q.M2 = ln 3.
    c.M1.value.data = {100.0, 0.0, 0.0, 0.0};
    c.M2.value.data = {std::log(3.0), 0.0, 0.0, 0.0};
    Vec fe(std::vector<double>{1.0, 0.0, 0.0, 0.0});
    Vec qe(std::vector<double>{1.0, 0.0, 0.0, 0.0});
    CHECK(fqm_score(fe, qe, c) == Catch::Approx(0.75).margin(1e-12));
  }
  SECTION("always strictly inside (0, 1)") {
    for (int trial = 0; trial < 50; ++trial) {
      Vec fr(d), qr(d);
      for (auto& x : fr.data) x = rng.uniform(-10, 10);
      for (auto& x : qr.data) x = rng.uniform(-10, 10);
      const double s = fqm_score(fr, qr, p);
      CHECK(s > 0.0);
      CHECK(s < 1.0);
    }
  }
}

TEST_CASE("fuse_frames attention and broadcast semantics") {
  const std::size_t d = 4;
  Rng rng(6);

  SECTION("equal frame probabilities give uniform attention") {
    CrossmodalParams p(d);
    p.init(rng);
    std::fill(p.M1.value.data.begin(), p.M1.value.data.end(), 0.0);
    Mat video = random_mat(rng, 5, d);
    Mat words = random_mat(rng, 2, d);
    Vec q(std::vector<double>{1, 0, 0, 0});
    FusedFrames fused = fuse_frames(video, words, q, p);
    for (double a : fused.attention.data)
      CHECK(a == Catch::Approx(0.2).margin(1e-12));
  }
  SECTION("zero M3 removes all frame dependence") {
    CrossmodalParams p(d);
    p.init(rng);
    std::fill(p.M3.value.data.begin(), p.M3.value.data.end(), 0.0);
    Mat video = random_mat(rng, 4, d);
    Mat words = random_mat(rng, 2, d);
    Vec q(std::vector<double>{0.5, -1, 0, 2});
    FusedFrames fused = fuse_frames(video, words, q, p);
    for (std::size_t i = 1; i < 4; ++i)
      for (std::size_t c = 0; c < d; ++c)
        CHECK(fused.features.at(i, c) ==
              Catch::Approx(fused.features.at(0, c)).margin(1e-12));
  }
  SECTION("a_i scales the whole frame vector (ln 3 offset -> 0.75)") {
    // The broadcast rule a_i * f_i, using the quoted softmax numbers.
    Vec a = softmax_vec(Vec(std::vector<double>{std::log(3.0), 0.0}));
    REQUIRE(a[0] == Catch::Approx(0.75).margin(1e-12));
    Vec e1(std::vector<double>{1, 0, 0, 0});
    PlainExec ex;
    Vec fhat = ex.mul_scalar(e1, a[0]);
    CHECK(fhat[0] == Catch::Approx(0.75).margin(1e-12));
    for (std::size_t c = 1; c < d; ++c) CHECK(fhat[c] == 0.0);
  }
  SECTION("attention matches softmax of the fqm scores") {
    CrossmodalParams p(d);
    p.init(rng);
    Mat video = random_mat(rng, 6, d);
    Mat words = random_mat(rng, 3, d);
    Vec q(std::vector<double>{0.2, 0.4, -0.1, 0.9});
    FusedFrames fused = fuse_frames(video, words, q, p);
    Vec probs(6);
    for (std::size_t i = 0; i < 6; ++i)
      probs[i] = fqm_score(video.row_vec(i), q, p);
    Vec expect = softmax_vec(probs);
    double asum = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(fused.attention[i] == Catch::Approx(expect[i]).margin(1e-12));
      asum += fused.attention[i];
    }
    CHECK(std::abs(asum - 1.0) <= 1e-12);
  }
}

TEST_CASE("loss_L3 gradient through pooling passes the check") {
  Rng rng(7);
  const std::size_t d = 5;
  CrossmodalParams p(d);
  p.init(rng);
  std::vector<Mat> videos, words;
  for (int i = 0; i < 3; ++i) {
    videos.push_back(random_mat(rng, 4, d));
    words.push_back(random_mat(rng, 3, d));
  }

  std::vector<Param*> params{&p.M_v, &p.M_q};
  ad::Tape tape;
  auto build = [&](TapeExec& ex) {
    std::vector<ad::Var> vp, qp;
    for (int i = 0; i < 3; ++i) {
      vp.push_back(attentive_pool_on(ex, ex.leafm(videos[i]), p.M_v).pooled);
      qp.push_back(attentive_pool_on(ex, ex.leafm(words[i]), p.M_q).pooled);
    }
    return loss_l3_on(ex, vp, qp, 0.2);
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
  CHECK(grad_check(value, grad, params, 1e-5) < 1e-4);
}

TEST_CASE("fused-feature losses backpropagate into all fusion weights") {
  Rng rng(8);
  const std::size_t d = 4;
  CrossmodalParams p(d);
  p.init(rng);
  Mat video = random_mat(rng, 3, d);
  Mat words = random_mat(rng, 2, d);
  Vec target(d, 0.3);

  std::vector<Param*> params{&p.M1, &p.M2, &p.M3, &p.M4, &p.M5, &p.M_q};
  ad::Tape tape;
  auto build = [&](TapeExec& ex) {
    auto q = attentive_pool_on(ex, ex.leafm(words), p.M_q).pooled;
    auto fused = fuse_frames_on(ex, video, words, q, p);
    std::vector<ad::Var> terms;
    for (const auto& fr : fused.frames) {
      auto diff = ex.sub(fr, ex.leaf(target));
      terms.push_back(ex.dot(diff, diff));
    }
    return ex.sum(ex.stack(terms));
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
  CHECK(grad_check(value, grad, params, 1e-5) < 1e-4);
}
