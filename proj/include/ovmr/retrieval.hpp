#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "ovmr/crossmodal.hpp"
#include "ovmr/exec.hpp"
#include "ovmr/tensor.hpp"

namespace ovmr {

/// Candidate temporal segment over frame indices [start, end), with its
/// matching score and regressed normalized boundaries.
struct Proposal {
  int start = 0, end = 0;
  double score = 0.0;
  double reg_start = 0.0, reg_end = 0.0;

  int length() const { return end - start; }
};

/// Ground-truth moment in normalized timestamps.
struct MomentLabel {
  double t_s = 0.0, t_e = 0.0;
};

inline double proposal_iou(const Proposal& a, const Proposal& b) {
  const int inter =
      std::max(0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const int uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

// ---------------------------------------------------------------------------
// Proposal generation
// ---------------------------------------------------------------------------

/// Multi-scale sliding windows: for each anchor frame k (step = stride) and
/// scale l, the window [k, min(k + l, Nv)), deduplicated and ordered by
/// (start, end).
inline std::vector<Proposal> gen_proposals(int nv,
                                           const std::vector<int>& scales,
                                           int stride) {
  OVMR_CHECK_CONTRACT(nv >= 1, "gen_proposals: Nv must be >= 1");
  OVMR_CHECK_CONTRACT(stride >= 1, "gen_proposals: stride must be >= 1");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    OVMR_CHECK_CONTRACT(scales[i] >= 1, "gen_proposals: scales must be >= 1");
    OVMR_CHECK_CONTRACT(i == 0 || scales[i - 1] < scales[i],
                        "gen_proposals: scales must be ascending");
  }
  std::vector<Proposal> out;
  for (int k = 0; k < nv; k += stride)
    for (int scale : scales) {
      Proposal p;
      p.start = k;
      p.end = std::min(k + scale, nv);
      out.push_back(p);
    }
  std::sort(out.begin(), out.end(), [](const Proposal& a, const Proposal& b) {
    return a.start != b.start ? a.start < b.start : a.end < b.end;
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const Proposal& a, const Proposal& b) {
                          return a.start == b.start && a.end == b.end;
                        }),
            out.end());
  return out;
}

/// Cap the proposal count at a budget, dropping lowest-scale (shortest)
/// windows first; among equal lengths, later starts go first.
inline std::vector<Proposal> apply_budget(std::vector<Proposal> props,
                                          std::size_t budget) {
  if (props.size() <= budget) return props;
  std::sort(props.begin(), props.end(),
            [](const Proposal& a, const Proposal& b) {
              if (a.length() != b.length()) return a.length() > b.length();
              return a.start < b.start;
            });
  props.resize(budget);
  std::sort(props.begin(), props.end(),
            [](const Proposal& a, const Proposal& b) {
              return a.start != b.start ? a.start < b.start : a.end < b.end;
            });
  return props;
}

// ---------------------------------------------------------------------------
// Scoring heads
// ---------------------------------------------------------------------------

/// Scoring and regression heads over mean-pooled fused window features.
///
/// The score is a calibrated window-query similarity: the cosine between the
/// attention-weighted window content and the pooled query, scaled by a
/// learnable gain, plus a 1-hidden-layer perceptron correction over the
/// pooled fused features. The positive initial gain orients the
/// positive-unlabeled polarization toward query-matching windows. Both heads
/// also see the window's normalized extent, since content carries no
/// absolute position.
struct RetrievalHead {
  Param w_hidden, b_hidden;  // hidden x (d + 2)
  Param w_score, b_score;    // 1 x hidden, 1 x 1
  Param kappa;               // similarity gain, 1 x 1
  Param w_reg, b_reg;        // 2 x (d + 2), 2 x 1

  RetrievalHead() = default;
  RetrievalHead(std::size_t d, std::size_t hidden)
      : w_hidden("head.wh", hidden, d + 2),
        b_hidden("head.bh", hidden, 1),
        w_score("head.ws", 1, hidden),
        b_score("head.bs", 1, 1),
        kappa("head.kappa", 1, 1),
        w_reg("head.wr", 2, d + 2),
        b_reg("head.br", 2, 1) {}

  void init(Rng& rng) {
    w_hidden.init_uniform(rng, w_hidden.value.cols);
    b_hidden.init_uniform(rng, w_hidden.value.cols);
    w_score.init_uniform(rng, w_score.value.cols);
    w_reg.init_uniform(rng, w_reg.value.cols);
    b_reg.init_uniform(rng, w_reg.value.cols);
    kappa.value.data[0] = 2.0;
    b_score.value.data[0] = -1.0;
  }

  void collect(std::vector<Param*>& out) {
    for (Param* p : {&w_hidden, &b_hidden, &w_score, &b_score, &kappa, &w_reg,
                     &b_reg})
      out.push_back(p);
  }
};

template <class E>
struct ScoredOn {
  typename E::S score;
  typename E::S t_start, t_end;
};

/// Score one proposal. The fused frames are mean-pooled over [start, end)
/// and extended with the normalized extent; the score combines the gained
/// window-query cosine with a 1-hidden-layer perceptron correction through a
/// sigmoid, and a parallel linear head (sigmoid, pair-sorted) regresses the
/// boundaries.
template <class E>
ScoredOn<E> score_proposal_on(E& ex,
                              const std::vector<typename E::V>& fused_frames,
                              const std::vector<typename E::V>& weighted,
                              const typename E::V& q_pooled,
                              const Proposal& prop, int nv,
                              const RetrievalHead& head) {
  OVMR_CHECK_CONTRACT(prop.start < prop.end, "score_proposals: empty span");
  OVMR_CHECK_CONTRACT(prop.end <= static_cast<int>(fused_frames.size()),
                      "score_proposals: proposal exceeds frame count");
  std::vector<typename E::V> window(fused_frames.begin() + prop.start,
                                    fused_frames.begin() + prop.end);
  std::vector<typename E::V> content(weighted.begin() + prop.start,
                                     weighted.begin() + prop.end);
  Vec extent(2);
  extent[0] = static_cast<double>(prop.start) / nv;
  extent[1] = static_cast<double>(prop.end) / nv;
  auto input = ex.concat2(ex.mean_vars(window), ex.leaf(extent));

  auto h = ex.tanh(
      ex.add(ex.matvec(ex.pmat(head.w_hidden), input), ex.pvec(head.b_hidden)));
  auto correction = ex.add_s(ex.pick(ex.matvec(ex.pmat(head.w_score), h), 0),
                             ex.pick(ex.pvec(head.b_score), 0));
  auto sim = ex.cosine(ex.mean_vars(content), q_pooled);
  auto gained = ex.mul_s(sim, ex.pick(ex.pvec(head.kappa), 0));
  auto reg = ex.sigmoid(
      ex.add(ex.matvec(ex.pmat(head.w_reg), input), ex.pvec(head.b_reg)));
  auto r0 = ex.pick(reg, 0);
  auto r1 = ex.pick(reg, 1);
  ScoredOn<E> out;
  out.score = ex.sigmoid_s(ex.add_s(gained, correction));
  out.t_start = ex.min2(r0, r1);
  out.t_end = ex.max2(r0, r1);
  return out;
}

inline std::vector<Proposal> score_proposals(const FusedFrames& fused,
                                             const Vec& q_pooled,
                                             std::vector<Proposal> props,
                                             const RetrievalHead& head) {
  PlainExec ex;
  std::vector<Vec> frames, weighted;
  frames.reserve(fused.features.rows);
  weighted.reserve(fused.weighted.rows);
  for (std::size_t i = 0; i < fused.features.rows; ++i) {
    frames.push_back(fused.features.row_vec(i));
    weighted.push_back(fused.weighted.row_vec(i));
  }
  for (Proposal& p : props) {
    auto s =
        score_proposal_on(ex, frames, weighted, q_pooled, p,
                          static_cast<int>(fused.features.rows), head);
    p.score = s.score;
    p.reg_start = s.t_start;
    p.reg_end = s.t_end;
  }
  return props;
}

// ---------------------------------------------------------------------------
// Positive-unlabeled split and losses
// ---------------------------------------------------------------------------

/// Index sets over a score list: positives (s >= 0.5), unlabeled (s < 0.5)
/// and the min(|P|, |U|) lowest-scoring unlabeled as pseudo-negatives.
struct PUSplit {
  std::vector<int> positives, unlabeled, negatives;
};

inline PUSplit pu_split(const std::vector<double>& scores) {
  PUSplit out;
  for (int i = 0; i < static_cast<int>(scores.size()); ++i) {
    if (scores[i] >= 0.5)
      out.positives.push_back(i);
    else
      out.unlabeled.push_back(i);
  }
  const std::size_t ns = std::min(out.positives.size(), out.unlabeled.size());
  std::vector<int> sorted_u = out.unlabeled;
  std::stable_sort(sorted_u.begin(), sorted_u.end(), [&](int a, int b) {
    return scores[a] < scores[b];
  });
  out.negatives.assign(sorted_u.begin(), sorted_u.begin() + ns);
  return out;
}

inline constexpr double kScoreEps = 1e-7;

/// Eq-style positive-unlabeled BCE: -mean log s over positives minus
/// mean log(1 - s) over pseudo-negatives, scores clamped away from {0, 1}.
template <class E>
typename E::S loss_bce_on(E& ex, const PUSplit& split,
                          const std::vector<typename E::S>& scores) {
  std::vector<typename E::S> terms;
  if (!split.positives.empty()) {
    std::vector<typename E::S> pos;
    for (int i : split.positives)
      pos.push_back(
          ex.log_s(ex.clamp_s(scores[i], kScoreEps, 1.0 - kScoreEps)));
    terms.push_back(ex.scale_s(ex.sum(ex.stack(pos)),
                               -1.0 / static_cast<double>(pos.size())));
  }
  if (!split.negatives.empty()) {
    std::vector<typename E::S> neg;
    for (int i : split.negatives) {
      auto one_minus = ex.add_const_s(ex.scale_s(scores[i], -1.0), 1.0);
      neg.push_back(
          ex.log_s(ex.clamp_s(one_minus, kScoreEps, 1.0 - kScoreEps)));
    }
    terms.push_back(ex.scale_s(ex.sum(ex.stack(neg)),
                               -1.0 / static_cast<double>(neg.size())));
  }
  if (terms.empty()) return ex.sconst(0.0);
  return ex.sum(ex.stack(terms));
}

inline double loss_bce(const PUSplit& split, const std::vector<double>& scores) {
  PlainExec ex;
  return loss_bce_on(ex, split, scores);
}

/// Smooth-L1 regression of positives' boundaries against the ground truth.
template <class E>
typename E::S loss_reg_on(E& ex, const PUSplit& split,
                          const std::vector<ScoredOn<E>>& scored,
                          const MomentLabel& label) {
  if (split.positives.empty()) return ex.sconst(0.0);
  std::vector<typename E::S> terms;
  for (int i : split.positives) {
    terms.push_back(ex.smooth_l1(scored[i].t_start, label.t_s));
    terms.push_back(ex.smooth_l1(scored[i].t_end, label.t_e));
  }
  return ex.scale_s(ex.sum(ex.stack(terms)),
                    1.0 / static_cast<double>(split.positives.size()));
}

inline double loss_reg(const PUSplit& split, const std::vector<Proposal>& props,
                       const MomentLabel& label) {
  OVMR_CHECK_CONTRACT(label.t_s >= 0.0 && label.t_s < label.t_e &&
                          label.t_e <= 1.0,
                      "loss_reg: invalid moment label");
  if (split.positives.empty()) return 0.0;
  PlainExec ex;
  double acc = 0.0;
  for (int i : split.positives) {
    acc += ex.smooth_l1(props[i].reg_start, label.t_s);
    acc += ex.smooth_l1(props[i].reg_end, label.t_e);
  }
  return acc / static_cast<double>(split.positives.size());
}

inline double loss_L4(double bce, double reg) {
  OVMR_CHECK_NUMERIC(std::isfinite(bce) && std::isfinite(reg),
                     "loss_L4: non-finite component");
  return bce + reg;
}

// ---------------------------------------------------------------------------
// Non-maximum suppression
// ---------------------------------------------------------------------------

/// Greedy NMS: repeatedly keep the highest-score remaining proposal and
/// discard proposals whose temporal IoU with it strictly exceeds the
/// threshold. Ties break by earlier start, then earlier original index.
inline std::vector<Proposal> nms_select(const std::vector<Proposal>& props,
                                        int n, double iou_thresh) {
  OVMR_CHECK_CONTRACT(n >= 1, "nms_select: n must be >= 1");
  OVMR_CHECK_CONTRACT(iou_thresh > 0.0 && iou_thresh < 1.0,
                      "nms_select: threshold outside (0, 1)");
  std::vector<int> order(props.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (props[a].score != props[b].score) return props[a].score > props[b].score;
    if (props[a].start != props[b].start) return props[a].start < props[b].start;
    return a < b;
  });
  std::vector<Proposal> kept;
  std::vector<bool> suppressed(props.size(), false);
  for (int idx : order) {
    if (suppressed[idx]) continue;
    kept.push_back(props[idx]);
    if (static_cast<int>(kept.size()) >= n) break;
    for (int other : order)
      if (!suppressed[other] && other != idx &&
          proposal_iou(props[idx], props[other]) > iou_thresh)
        suppressed[other] = true;
  }
  return kept;
}

}  // namespace ovmr
