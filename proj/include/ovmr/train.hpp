#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovmr/checkpoint.hpp"
#include "ovmr/config.hpp"
#include "ovmr/data.hpp"
#include "ovmr/model.hpp"

namespace ovmr {

/// Proposal grids are a pure function of the frame count; memoized per Nv.
struct ProposalCache {
  std::vector<int> scales;
  int stride = 4;
  std::size_t budget = 384;
  std::map<int, std::vector<Proposal>> by_nv;

  ProposalCache() = default;
  explicit ProposalCache(const RunConfig& cfg)
      : scales(cfg.proposal_scales),
        stride(cfg.proposal_stride),
        budget(static_cast<std::size_t>(cfg.proposal_budget)) {}

  const std::vector<Proposal>& get(int nv) {
    auto it = by_nv.find(nv);
    if (it == by_nv.end())
      it = by_nv.emplace(nv, apply_budget(gen_proposals(nv, scales, stride),
                                          budget))
               .first;
    return it->second;
  }
};

struct SplitIndices {
  std::vector<int> train_id, train_ood, val_id, val_ood;
};

/// Deterministic held-out split. Validation gets floor(val_fraction * N) of
/// each pool, but only if both sides keep at least 2 ID items (the alignment
/// loss needs pairs); otherwise everything trains.
inline SplitIndices split_dataset(const Dataset& ds, double val_fraction,
                                  std::uint64_t seed) {
  std::vector<int> ids, oods;
  for (int i = 0; i < static_cast<int>(ds.size()); ++i)
    (ds[i].label == QueryLabel::ID ? ids : oods).push_back(i);
  Rng rng(seed ^ 0x73706c6974ULL);
  rng.shuffle(ids);
  rng.shuffle(oods);

  SplitIndices s;
  std::size_t n_val_id =
      static_cast<std::size_t>(val_fraction * static_cast<double>(ids.size()));
  std::size_t n_val_ood = static_cast<std::size_t>(
      val_fraction * static_cast<double>(oods.size()));
  if (n_val_id < 2 || ids.size() - n_val_id < 2) {
    n_val_id = 0;
    n_val_ood = 0;
  }
  s.val_id.assign(ids.begin(), ids.begin() + n_val_id);
  s.train_id.assign(ids.begin() + n_val_id, ids.end());
  s.val_ood.assign(oods.begin(), oods.begin() + n_val_ood);
  s.train_ood.assign(oods.begin() + n_val_ood, oods.end());
  return s;
}

template <class E>
struct BatchLoss {
  typename E::S total{};
  double l1 = 0, l2 = 0, l3 = 0, l4 = 0, total_value = 0;
};

/// One batch of the joint objective L1 + l1 L2 + l2 L3 + l3 L4. Terms whose
/// weight is zero (or that the stage excludes) are skipped entirely, so a
/// run with all lambdas zero is exactly flow-only training.
template <class E>
BatchLoss<E> batch_loss_on(E& ex, OpenVmrModel& model, const Dataset& ds,
                           const Batch& batch, const RunConfig& cfg,
                           ProposalCache& proposals, bool include_flow,
                           bool include_head) {
  using S = typename E::S;
  BatchLoss<E> out;
  std::vector<S> total_terms;
  const double ll_const = -0.5 * static_cast<double>(model.d) * kLog2Pi;
  const bool use_l2 = include_flow && cfg.lambda1 > 0.0;

  if (include_flow) {
    std::vector<S> l1_terms, l2_terms;
    for (int idx : batch.id_items) {
      auto q = ex.leaf(ds[idx].sentence);
      auto [x, logdet] = flow_forward_on(ex, model.flow, q);
      auto half = ex.scale_s(ex.dot(x, x), 0.5);
      l1_terms.push_back(ex.sub_s(half, logdet));
      if (use_l2) {
        auto ll = ex.add_const_s(ex.sub_s(logdet, half), ll_const);
        auto norm = normalize_loglik_on(ex, ll, model.cal.h_id);
        l2_terms.push_back(
            loss_l2_term_on(ex, norm, QueryLabel::ID, model.cal));
      }
    }
    if (use_l2) {
      for (int idx : batch.ood_items) {
        auto q = ex.leaf(ds[idx].sentence);
        auto [x, logdet] = flow_forward_on(ex, model.flow, q);
        auto half = ex.scale_s(ex.dot(x, x), 0.5);
        auto ll = ex.add_const_s(ex.sub_s(logdet, half), ll_const);
        auto norm = normalize_loglik_on(ex, ll, model.cal.h_id);
        l2_terms.push_back(
            loss_l2_term_on(ex, norm, QueryLabel::OOD, model.cal));
      }
    }
    auto l1 = ex.scale_s(ex.sum(ex.stack(l1_terms)),
                         1.0 / static_cast<double>(l1_terms.size()));
    out.l1 = ex.val(l1);
    OVMR_CHECK_NUMERIC(std::isfinite(out.l1), "loss L1 is non-finite");
    total_terms.push_back(l1);
    if (use_l2 && !l2_terms.empty()) {
      auto l2 = ex.sum(ex.stack(l2_terms));
      out.l2 = ex.val(l2);
      OVMR_CHECK_NUMERIC(std::isfinite(out.l2), "loss L2 is non-finite");
      total_terms.push_back(ex.scale_s(l2, cfg.lambda1));
    }
  }

  if (include_head && (cfg.lambda2 > 0.0 || cfg.lambda3 > 0.0)) {
    std::vector<typename E::V> v_pooled, q_pooled;
    v_pooled.reserve(batch.id_items.size());
    q_pooled.reserve(batch.id_items.size());
    for (int idx : batch.id_items) {
      v_pooled.push_back(
          attentive_pool_on(ex, ex.leafm(ds[idx].video), model.crossmodal.M_v)
              .pooled);
      q_pooled.push_back(
          attentive_pool_on(ex, ex.leafm(ds[idx].words), model.crossmodal.M_q)
              .pooled);
    }
    if (cfg.lambda2 > 0.0) {
      auto l3 = loss_l3_on(ex, v_pooled, q_pooled, model.crossmodal.eta);
      out.l3 = ex.val(l3);
      OVMR_CHECK_NUMERIC(std::isfinite(out.l3), "loss L3 is non-finite");
      total_terms.push_back(ex.scale_s(l3, cfg.lambda2));
    }
    if (cfg.lambda3 > 0.0) {
      std::vector<S> l4_terms;
      for (std::size_t bi = 0; bi < batch.id_items.size(); ++bi) {
        const EpisodeSample& ep = ds[batch.id_items[bi]];
        OVMR_CHECK_CONTRACT(ep.has_moment,
                            "training episode lacks a ground-truth moment");
        auto fused = fuse_frames_on(ex, ep.video, ep.words, q_pooled[bi],
                                    model.crossmodal);
        const auto& props = proposals.get(static_cast<int>(ep.video.rows));
        std::vector<ScoredOn<E>> scored;
        std::vector<double> values;
        scored.reserve(props.size());
        for (const Proposal& pr : props) {
          scored.push_back(score_proposal_on(
              ex, fused.frames, fused.weighted, q_pooled[bi], pr,
              static_cast<int>(ep.video.rows), model.head));
          values.push_back(ex.val(scored.back().score));
        }
        PUSplit split = pu_split(values);
        std::vector<S> score_vars;
        score_vars.reserve(scored.size());
        for (auto& sc : scored) score_vars.push_back(sc.score);
        auto bce = loss_bce_on(ex, split, score_vars);
        auto reg = loss_reg_on(ex, split, scored, ep.moment);
        l4_terms.push_back(ex.add_s(bce, reg));
      }
      auto l4 = ex.scale_s(ex.sum(ex.stack(l4_terms)),
                           1.0 / static_cast<double>(l4_terms.size()));
      out.l4 = ex.val(l4);
      OVMR_CHECK_NUMERIC(std::isfinite(out.l4), "loss L4 is non-finite");
      total_terms.push_back(ex.scale_s(l4, cfg.lambda3));
    }
  }

  OVMR_CHECK_CONTRACT(!total_terms.empty(),
                      "batch loss: no loss terms are active");
  out.total = ex.sum(ex.stack(total_terms));
  out.total_value = ex.val(out.total);
  OVMR_CHECK_NUMERIC(std::isfinite(out.total_value),
                     "total loss is non-finite");
  return out;
}

struct EpochLog {
  int epoch = 0;
  double l1 = 0, l2 = 0, l3 = 0, l4 = 0, total = 0;
  double b_id = 0;
  double val_total = 0;
};

inline nlohmann::json epoch_log_to_json(const EpochLog& e) {
  return nlohmann::json{{"epoch", e.epoch},   {"L1", e.l1},
                        {"L2", e.l2},         {"L3", e.l3},
                        {"L4", e.l4},         {"total", e.total},
                        {"b_id", e.b_id},     {"val_total", e.val_total}};
}

struct TrainOutcome {
  std::vector<EpochLog> logs;
  int best_epoch = 0;
  int epochs_run = 0;
};

namespace detail {

inline std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch));
}

inline BoundaryCalibration recalibrate(const OpenVmrModel& model,
                                       const Dataset& ds,
                                       const std::vector<int>& train_id,
                                       const RunConfig& cfg) {
  std::vector<double> normalized;
  normalized.reserve(train_id.size());
  double max_ll = -std::numeric_limits<double>::infinity();
  for (int idx : train_id) {
    const double ll = log_likelihood(model.flow, ds[idx].sentence);
    max_ll = std::max(max_ll, ll);
    normalized.push_back(normalize_loglik(ll, cfg.h_id));
  }
  BoundaryCalibration cal =
      calibrate_boundary(normalized, cfg.alpha, cfg.delta);
  cal.h_id = cfg.h_id;
  cal.max_loglik = max_ll;
  return cal;
}

}  // namespace detail

/// Joint training of Eq.-10 style total loss with per-epoch boundary
/// recalibration, per-epoch JSON logging and early stopping on a held-out
/// split (restoring the best parameters). Two-stage mode trains the flow
/// losses for the first half of the epochs and the matching heads for the
/// second half.
inline TrainOutcome train_model(OpenVmrModel& model, const Dataset& ds,
                                const RunConfig& cfg,
                                std::ostream* log_stream = nullptr) {
  OVMR_CHECK_CONTRACT(!ds.empty(), "train: empty dataset");
  for (const auto& ep : ds)
    OVMR_CHECK_CONTRACT(static_cast<int>(ep.sentence.len()) == model.d,
                        "train: dataset dimension does not match the model");

  SplitIndices split = split_dataset(ds, cfg.val_fraction, cfg.seed);
  OVMR_CHECK_CONTRACT(split.train_id.size() >= 2,
                      "train: need at least 2 ID training episodes");

  auto params = model.all_params();
  AdamState opt(cfg.lr);
  ProposalCache proposals(cfg);
  ad::Tape tape;

  const int stage1_end = cfg.two_stage ? std::max(1, cfg.epochs / 2) : 0;
  const bool has_val = split.val_id.size() >= 2;

  TrainOutcome out;
  ParamSnapshot best;
  double best_val = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const bool include_flow = !cfg.two_stage || epoch <= stage1_end;
    const bool include_head = !cfg.two_stage || epoch > stage1_end;

    if (cfg.recalibrate_each_epoch || epoch == 1)
      model.cal = detail::recalibrate(model, ds, split.train_id, cfg);

    auto batches = make_batches(split.train_id, split.train_ood,
                                cfg.batch_size,
                                detail::epoch_seed(cfg.seed, epoch));
    EpochLog log;
    log.epoch = epoch;
    log.b_id = model.cal.b_id;
    for (const Batch& batch : batches) {
      tape.clear();
      TapeExec ex(tape);
      auto bl = batch_loss_on(ex, model, ds, batch, cfg, proposals,
                              include_flow, include_head);
      tape.backward(bl.total);
      adam_step(opt, params);
      log.l1 += bl.l1;
      log.l2 += bl.l2;
      log.l3 += bl.l3;
      log.l4 += bl.l4;
      log.total += bl.total_value;
    }
    const double nb = static_cast<double>(batches.size());
    log.l1 /= nb;
    log.l2 /= nb;
    log.l3 /= nb;
    log.l4 /= nb;
    log.total /= nb;

    if (has_val) {
      auto val_batches = make_batches(split.val_id, split.val_ood,
                                      cfg.batch_size, cfg.seed ^ 0x76616cULL);
      PlainExec pex;
      double val_total = 0.0;
      for (const Batch& batch : val_batches)
        val_total += batch_loss_on(pex, model, ds, batch, cfg, proposals,
                                   include_flow, include_head)
                         .total_value;
      log.val_total = val_total / static_cast<double>(val_batches.size());
    } else {
      log.val_total = log.total;
    }

    out.logs.push_back(log);
    out.epochs_run = epoch;
    if (log_stream) *log_stream << epoch_log_to_json(log).dump() << "\n";

    // Early stopping bookkeeping; stage switches reset the baseline since
    // the monitored objective changes.
    if (cfg.two_stage && epoch == stage1_end) {
      best_val = std::numeric_limits<double>::infinity();
      bad_epochs = 0;
    }
    if (log.val_total < best_val - 1e-12) {
      best_val = log.val_total;
      best = ParamSnapshot::take(model);
      out.best_epoch = epoch;
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.patience && !cfg.two_stage) {
      break;
    }
  }

  if (!best.values.empty()) best.restore(model);
  model.cal = detail::recalibrate(model, ds, split.train_id, cfg);
  return out;
}

}  // namespace ovmr
