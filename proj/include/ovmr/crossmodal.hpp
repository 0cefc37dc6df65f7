#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ovmr/exec.hpp"
#include "ovmr/tensor.hpp"

namespace ovmr {

/// Learnable weights for video-query and frame-query matching.
struct CrossmodalParams {
  Param M_v, M_q;      // attentive pooling, d x 1
  Param M1, M2;        // frame-query matching, d x 1
  Param M3, M4, M5;    // fusion, d x d
  double eta = 0.2;    // alignment temperature

  CrossmodalParams() = default;
  explicit CrossmodalParams(std::size_t d)
      : M_v("xm.Mv", d, 1),
        M_q("xm.Mq", d, 1),
        M1("xm.M1", d, 1),
        M2("xm.M2", d, 1),
        M3("xm.M3", d, d),
        M4("xm.M4", d, d),
        M5("xm.M5", d, d) {}

  void init(Rng& rng) {
    const std::size_t d = M_v.value.rows;
    for (Param* p : {&M_v, &M_q, &M1, &M2, &M3, &M4, &M5})
      p->init_uniform(rng, d);
  }

  void collect(std::vector<Param*>& out) {
    for (Param* p : {&M_v, &M_q, &M1, &M2, &M3, &M4, &M5}) out.push_back(p);
  }
};

/// Per-frame fused features and the frame attention that produced them.
/// `weighted` keeps the attention-scaled raw frames a_i * f_i; proposal
/// scoring compares their window means against the query.
struct FusedFrames {
  Mat features;   // Nv x d, f_fuse
  Mat weighted;   // Nv x d, a_i * f_i
  Vec attention;  // Nv, positive, sums to 1
};

// ---------------------------------------------------------------------------
// Attentive pooling
// ---------------------------------------------------------------------------

template <class E>
struct PooledOn {
  typename E::V pooled;   // d
  typename E::V weights;  // N
};

template <class E>
PooledOn<E> attentive_pool_on(E& ex, typename E::M rows, const Param& m) {
  auto w = ex.softmax(ex.matvec(rows, ex.pvec(m)));
  return {ex.tmatvec(rows, w), w};
}

/// weights = softmax(X M); pooled = sum_i weights_i X_i.
inline std::pair<Vec, Vec> attentive_pool(const Mat& X, const Mat& M) {
  OVMR_CHECK_SHAPE(X.rows >= 1, "attentive_pool: empty input");
  OVMR_CHECK_SHAPE(M.cols == 1 && M.rows == X.cols,
                   "attentive_pool: pooling matrix must be d x 1");
  Vec w = softmax_vec(matvec(X, Vec(M.data)));
  return {tmatvec(X, w), w};
}

inline double cosine_sim(const Vec& a, const Vec& b) {
  PlainExec ex;
  return ex.cosine(a, b);
}

// ---------------------------------------------------------------------------
// Alignment loss
// ---------------------------------------------------------------------------

/// InfoNCE-style alignment over a batch of pooled (video, query) pairs:
/// -1/Nb sum_i log[ exp(sim_ii/eta) / sum_j exp(sim_ij/eta) ], denominator
/// over all j including the diagonal, so the loss is nonnegative.
template <class E>
typename E::S loss_l3_on(E& ex, const std::vector<typename E::V>& v_pooled,
                         const std::vector<typename E::V>& q_pooled,
                         double eta) {
  const std::size_t nb = v_pooled.size();
  OVMR_CHECK_CONTRACT(nb >= 2 && q_pooled.size() == nb,
                      "loss_L3: need at least 2 pairs");
  OVMR_CHECK_CONTRACT(eta > 0.0, "loss_L3: eta must be positive");
  std::vector<typename E::S> terms;
  terms.reserve(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    std::vector<typename E::S> row;
    row.reserve(nb);
    for (std::size_t j = 0; j < nb; ++j)
      row.push_back(ex.scale_s(ex.cosine(v_pooled[i], q_pooled[j]), 1.0 / eta));
    auto row_v = ex.stack(row);
    terms.push_back(
        ex.sub_s(ex.logsumexp(row_v), ex.pick(row_v, static_cast<int>(i))));
  }
  return ex.scale_s(ex.sum(ex.stack(terms)), 1.0 / static_cast<double>(nb));
}

inline double loss_L3(const std::vector<std::pair<Vec, Vec>>& pairs,
                      double eta) {
  std::vector<Vec> v, q;
  for (const auto& [vi, qi] : pairs) {
    v.push_back(vi);
    q.push_back(qi);
  }
  PlainExec ex;
  return loss_l3_on(ex, v, q, eta);
}

// ---------------------------------------------------------------------------
// Frame-query matching and fusion
// ---------------------------------------------------------------------------

/// p_i = sigmoid( tanh(f_i . M1) * (q' . M2) ), in (0, 1).
template <class E>
typename E::S fqm_score_on(E& ex, const typename E::V& frame,
                           const typename E::V& q_pooled,
                           const CrossmodalParams& p) {
  auto t = ex.tanh_s(ex.dot(frame, ex.pvec(p.M1)));
  auto u = ex.dot(q_pooled, ex.pvec(p.M2));
  return ex.sigmoid_s(ex.mul_s(t, u));
}

inline double fqm_score(const Vec& frame, const Vec& q_pooled,
                        const CrossmodalParams& p) {
  OVMR_CHECK_SHAPE(frame.len() == p.M1.value.rows &&
                       q_pooled.len() == p.M2.value.rows,
                   "fqm_score: dimension mismatch");
  PlainExec ex;
  return fqm_score_on(ex, frame, q_pooled, p);
}

template <class E>
struct FusedOn {
  std::vector<typename E::V> frames;    // Nv vectors of length d, f_fuse
  std::vector<typename E::V> weighted;  // Nv vectors, a_i * f_i
  typename E::V attention;              // Nv
};

/// Frame attention a = softmax(p_1..p_Nv); f_hat_i = a_i f_i; fused_i =
/// M3 f_hat_i + M4 sum_j w_j + M5 q'.
template <class E>
FusedOn<E> fuse_frames_on(E& ex, const Mat& video, const Mat& words,
                          const typename E::V& q_pooled,
                          const CrossmodalParams& p) {
  OVMR_CHECK_SHAPE(video.cols == p.M1.value.rows && words.cols == video.cols,
                   "fuse_frames: dimension mismatch");
  const std::size_t nv = video.rows;
  std::vector<typename E::V> frame_vals;
  frame_vals.reserve(nv);
  std::vector<typename E::S> probs;
  probs.reserve(nv);
  auto m1 = ex.pvec(p.M1);
  auto m2 = ex.pvec(p.M2);
  auto qm2 = ex.dot(q_pooled, m2);
  for (std::size_t i = 0; i < nv; ++i) {
    auto f = ex.leaf(video.row_vec(i));
    frame_vals.push_back(f);
    probs.push_back(ex.sigmoid_s(ex.mul_s(ex.tanh_s(ex.dot(f, m1)), qm2)));
  }
  auto attention = ex.softmax(ex.stack(probs));

  Vec word_sum(words.cols);
  for (std::size_t j = 0; j < words.rows; ++j)
    for (std::size_t c = 0; c < words.cols; ++c)
      word_sum[c] += words.at(j, c);

  auto m3 = ex.pmat(p.M3);
  auto base = ex.add(ex.matvec(ex.pmat(p.M4), ex.leaf(word_sum)),
                     ex.matvec(ex.pmat(p.M5), q_pooled));
  FusedOn<E> out;
  out.attention = attention;
  out.frames.reserve(nv);
  out.weighted.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    auto fhat =
        ex.mul_scalar(frame_vals[i], ex.pick(attention, static_cast<int>(i)));
    out.weighted.push_back(fhat);
    out.frames.push_back(ex.add(ex.matvec(m3, fhat), base));
  }
  return out;
}

inline FusedFrames fuse_frames(const Mat& video, const Mat& words,
                               const Vec& q_pooled,
                               const CrossmodalParams& p) {
  PlainExec ex;
  FusedOn<PlainExec> f = fuse_frames_on(ex, video, words, q_pooled, p);
  FusedFrames out;
  out.features = Mat(video.rows, video.cols);
  out.weighted = Mat(video.rows, video.cols);
  for (std::size_t i = 0; i < video.rows; ++i) {
    std::copy(f.frames[i].data.begin(), f.frames[i].data.end(),
              out.features.row(i));
    std::copy(f.weighted[i].data.begin(), f.weighted[i].data.end(),
              out.weighted.row(i));
  }
  out.attention = f.attention;
  return out;
}

}  // namespace ovmr
