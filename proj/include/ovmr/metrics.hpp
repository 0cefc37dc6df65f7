#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "ovmr/boundary.hpp"
#include "ovmr/retrieval.hpp"

namespace ovmr {

inline double temporal_iou(const MomentLabel& a, const MomentLabel& b) {
  const double inter =
      std::max(0.0, std::min(a.t_e, b.t_e) - std::max(a.t_s, b.t_s));
  const double uni = (a.t_e - a.t_s) + (b.t_e - b.t_s) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Fraction of queries whose top-n predictions contain at least one moment
/// with IoU strictly greater than m. Queries with no predictions (e.g.
/// wrongly rejected as OOD) count as misses.
inline double recall_at(const std::vector<std::vector<MomentLabel>>& preds,
                        const std::vector<MomentLabel>& gts, int n, double m) {
  OVMR_CHECK_CONTRACT(preds.size() == gts.size(),
                      "recall_at: prediction/ground-truth count mismatch");
  if (gts.empty()) return 0.0;
  int hits = 0;
  for (std::size_t q = 0; q < gts.size(); ++q) {
    const std::size_t upto =
        std::min<std::size_t>(preds[q].size(), static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < upto; ++i)
      if (temporal_iou(preds[q][i], gts[q]) > m) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(gts.size());
}

/// Mann-Whitney AUROC: P(ID score > OOD score) + 0.5 P(tie), computed
/// exactly via sorting with midranks. Higher score means more ID.
inline double auroc(const std::vector<double>& scores,
                    const std::vector<QueryLabel>& labels) {
  OVMR_CHECK_CONTRACT(scores.size() == labels.size(), "auroc: size mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (QueryLabel l : labels) (l == QueryLabel::ID ? n_pos : n_neg) += 1;
  OVMR_CHECK_CONTRACT(n_pos >= 1 && n_neg >= 1,
                      "auroc: need at least one of each label");

  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == QueryLabel::ID) rank_sum_pos += midrank;
    i = j;
  }
  const double n_pos_d = static_cast<double>(n_pos);
  return (rank_sum_pos - n_pos_d * (n_pos_d + 1.0) / 2.0) /
         (n_pos_d * static_cast<double>(n_neg));
}

/// Average precision by threshold sweep over descending scores. Tied scores
/// collapse into a single step, so a tied group is judged at its combined
/// precision (the pessimistic reading: no threshold can split a tie).
inline double aupr(const std::vector<double>& scores,
                   const std::vector<QueryLabel>& labels) {
  OVMR_CHECK_CONTRACT(scores.size() == labels.size(), "aupr: size mismatch");
  std::size_t n_pos = 0;
  for (QueryLabel l : labels)
    if (l == QueryLabel::ID) ++n_pos;
  OVMR_CHECK_CONTRACT(n_pos >= 1, "aupr: need at least one positive");

  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k)
      (labels[order[k]] == QueryLabel::ID ? tp : fp) += 1;
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision =
        static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

/// Evaluation summary for one run.
struct EvalReport {
  // (n, m) -> recall
  std::map<std::pair<int, double>, double> recalls;
  double auroc_value = 0.0;
  double aupr_value = 0.0;
  std::size_t n_id_queries = 0;
  std::size_t n_ood_queries = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

}  // namespace ovmr
