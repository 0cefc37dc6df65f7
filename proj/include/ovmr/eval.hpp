#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovmr/metrics.hpp"
#include "ovmr/model.hpp"
#include "ovmr/train.hpp"

namespace ovmr {

struct MomentPrediction {
  double t_s = 0.0, t_e = 0.0;
  double score = 0.0;
};

/// One line of the prediction output.
struct PredictionRecord {
  int query_id = 0;
  QueryLabel verdict = QueryLabel::OOD;
  double loglik = 0.0;  // raw, before h_id normalization
  std::vector<MomentPrediction> moments;
};

struct EvalOutcome {
  EvalReport report;
  std::vector<PredictionRecord> records;
};

/// ID/OOD verdict plus, for ID verdicts, the top-n moments after NMS with
/// regressed boundaries.
inline PredictionRecord predict_one(const OpenVmrModel& m,
                                    const EpisodeSample& ep, int query_id,
                                    const RunConfig& cfg,
                                    ProposalCache& proposals) {
  OVMR_CHECK_CONTRACT(static_cast<int>(ep.sentence.len()) == m.d,
                      "predict: query dimension does not match the model");
  OVMR_CHECK_CONTRACT(m.cal.calibrated, "predict: model is not calibrated");
  PredictionRecord rec;
  rec.query_id = query_id;
  rec.loglik = log_likelihood(m.flow, ep.sentence);
  const double norm = normalize_loglik(rec.loglik, m.cal.h_id);
  rec.verdict = classify_query(norm, m.cal);
  if (rec.verdict == QueryLabel::ID) {
    auto [q_pooled, q_weights] =
        attentive_pool(ep.words, m.crossmodal.M_q.value);
    FusedFrames fused = fuse_frames(ep.video, ep.words, q_pooled, m.crossmodal);
    auto scored = score_proposals(
        fused, q_pooled, proposals.get(static_cast<int>(ep.video.rows)),
        m.head);
    auto kept = nms_select(scored, cfg.nms_top_n, cfg.nms_iou);
    for (const Proposal& p : kept)
      rec.moments.push_back({p.reg_start, p.reg_end, p.score});
  }
  return rec;
}

/// Full evaluation pass over the given episode indices: verdicts, moments,
/// AUROC/AUPR over normalized log-likelihood scores, and R@n at the
/// configured IoU thresholds (wrongly rejected ID queries count as misses).
inline EvalOutcome evaluate(const OpenVmrModel& m, const Dataset& ds,
                            const std::vector<int>& indices,
                            const RunConfig& cfg) {
  EvalOutcome out;
  ProposalCache proposals(cfg);

  std::vector<double> ood_scores;
  std::vector<QueryLabel> true_labels;
  std::vector<std::vector<MomentLabel>> id_preds;
  std::vector<MomentLabel> id_gts;

  for (int idx : indices) {
    const EpisodeSample& ep = ds[idx];
    PredictionRecord rec = predict_one(m, ep, idx, cfg, proposals);
    ood_scores.push_back(normalize_loglik(rec.loglik, m.cal.h_id));
    true_labels.push_back(ep.label);
    if (ep.label == QueryLabel::ID) {
      OVMR_CHECK_CONTRACT(ep.has_moment, "evaluate: ID episode lacks a moment");
      id_gts.push_back(ep.moment);
      std::vector<MomentLabel> preds;
      for (const auto& mp : rec.moments) preds.push_back({mp.t_s, mp.t_e});
      id_preds.push_back(std::move(preds));
    }
    out.records.push_back(std::move(rec));
  }

  EvalReport& rep = out.report;
  rep.n_id_queries = id_gts.size();
  rep.n_ood_queries = indices.size() - id_gts.size();
  rep.config_hash = m.config_hash;
  rep.seed = m.seed;
  if (rep.n_id_queries >= 1 && rep.n_ood_queries >= 1) {
    rep.auroc_value = auroc(ood_scores, true_labels);
    rep.aupr_value = aupr(ood_scores, true_labels);
  } else {
    rep.auroc_value = std::nan("");
    rep.aupr_value = std::nan("");
  }
  for (int n : {1, 5})
    for (double iou : cfg.eval_ious)
      rep.recalls[{n, iou}] =
          id_gts.empty() ? 0.0 : recall_at(id_preds, id_gts, n, iou);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline std::string recall_key(int n, double iou) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "R@%d,IoU=%.2f", n, iou);
  return buf;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json recalls;
  for (const auto& [key, value] : r.recalls)
    recalls[recall_key(key.first, key.second)] = value;
  nlohmann::json j{
      {"n_id_queries", r.n_id_queries},
      {"n_ood_queries", r.n_ood_queries},
      {"recalls", recalls},
      {"config_hash", r.config_hash},
      {"seed", r.seed},
  };
  if (std::isfinite(r.auroc_value)) {
    j["auroc"] = r.auroc_value;
    j["aupr"] = r.aupr_value;
  } else {
    j["auroc"] = nullptr;
    j["aupr"] = nullptr;
  }
  return j;
}

inline std::string report_to_text(const EvalReport& r) {
  char line[128];
  std::string out;
  std::snprintf(line, sizeof(line), "%-16s %10zu\n", "ID queries",
                r.n_id_queries);
  out += line;
  std::snprintf(line, sizeof(line), "%-16s %10zu\n", "OOD queries",
                r.n_ood_queries);
  out += line;
  if (std::isfinite(r.auroc_value)) {
    std::snprintf(line, sizeof(line), "%-16s %10.4f\n", "AUROC",
                  r.auroc_value);
    out += line;
    std::snprintf(line, sizeof(line), "%-16s %10.4f\n", "AUPR", r.aupr_value);
    out += line;
  } else {
    std::snprintf(line, sizeof(line), "%-16s %10s\n", "AUROC/AUPR", "n/a");
    out += line;
  }
  for (const auto& [key, value] : r.recalls) {
    std::snprintf(line, sizeof(line), "%-16s %10.4f\n",
                  recall_key(key.first, key.second).c_str(), value);
    out += line;
  }
  return out;
}

inline nlohmann::json prediction_to_json(const PredictionRecord& rec) {
  nlohmann::json moments = nlohmann::json::array();
  for (const auto& m : rec.moments)
    moments.push_back(
        {{"t_s", m.t_s}, {"t_e", m.t_e}, {"score", m.score}});
  return nlohmann::json{
      {"query_id", rec.query_id},
      {"verdict", rec.verdict == QueryLabel::ID ? "ID" : "OOD"},
      {"loglik", rec.loglik},
      {"moments", moments},
  };
}

inline void write_predictions_jsonl(std::ostream& os,
                                    const std::vector<PredictionRecord>& recs) {
  for (const auto& rec : recs) os << prediction_to_json(rec).dump() << "\n";
}

}  // namespace ovmr
