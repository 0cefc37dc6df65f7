#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovmr/common.hpp"
#include "ovmr/data.hpp"

namespace ovmr {

/// Hyperparameters for training, inference and evaluation. Defaults follow
/// the reference configuration; every artifact echoes the full config plus
/// its hash for provenance.
struct RunConfig {
  double lambda1 = 0.6;
  double lambda2 = 0.3;
  double lambda3 = 0.7;
  double eta = 0.2;
  double alpha = 5.0;
  double delta = 0.04;
  double h_id = 100.0;
  int coupling_layers = 6;
  int coupling_hidden = 64;
  double scale_cap = 2.0;
  int head_hidden = 32;
  double lr = 0.0008;
  int batch_size = 128;
  int epochs = 200;
  int patience = 20;
  double val_fraction = 0.2;
  std::uint64_t seed = 1;
  std::vector<int> proposal_scales{8, 16, 32};
  int proposal_stride = 4;
  int proposal_budget = 384;
  int nms_top_n = 5;
  double nms_iou = 0.5;
  std::vector<double> eval_ious{0.3, 0.5, 0.7};
  bool two_stage = false;
  bool recalibrate_each_epoch = true;

  void validate() const {
    OVMR_CHECK_CONTRACT(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0,
                        "config: lambdas must be >= 0");
    OVMR_CHECK_CONTRACT(eta > 0, "config: eta must be > 0");
    OVMR_CHECK_CONTRACT(alpha > 0 && alpha < 100,
                        "config: alpha outside (0, 100)");
    OVMR_CHECK_CONTRACT(delta > 0, "config: delta must be > 0");
    OVMR_CHECK_CONTRACT(h_id > 0, "config: h_id must be > 0");
    OVMR_CHECK_CONTRACT(coupling_layers >= 1, "config: C must be >= 1");
    OVMR_CHECK_CONTRACT(coupling_hidden >= 1 && head_hidden >= 1,
                        "config: hidden widths must be >= 1");
    OVMR_CHECK_CONTRACT(scale_cap > 0, "config: scale_cap must be > 0");
    OVMR_CHECK_CONTRACT(lr > 0, "config: lr must be > 0");
    OVMR_CHECK_CONTRACT(batch_size >= 2, "config: batch_size must be >= 2");
    OVMR_CHECK_CONTRACT(epochs >= 1, "config: epochs must be >= 1");
    OVMR_CHECK_CONTRACT(patience >= 1, "config: patience must be >= 1");
    OVMR_CHECK_CONTRACT(val_fraction >= 0 && val_fraction < 1,
                        "config: val_fraction outside [0, 1)");
    OVMR_CHECK_CONTRACT(!proposal_scales.empty(),
                        "config: proposal_scales empty");
    OVMR_CHECK_CONTRACT(proposal_stride >= 1,
                        "config: proposal_stride must be >= 1");
    OVMR_CHECK_CONTRACT(proposal_budget >= 1,
                        "config: proposal_budget must be >= 1");
    OVMR_CHECK_CONTRACT(nms_top_n >= 1, "config: nms_top_n must be >= 1");
    OVMR_CHECK_CONTRACT(nms_iou > 0 && nms_iou < 1,
                        "config: nms_iou outside (0, 1)");
  }
};

namespace detail {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ContractError(std::string("config: field '") + key +
                          "' has the wrong type");
    }
  }
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("config: " + path + " is not valid JSON: " + e.what());
  }
  return j;
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::maybe(j, "lambda1", c.lambda1);
  detail::maybe(j, "lambda2", c.lambda2);
  detail::maybe(j, "lambda3", c.lambda3);
  detail::maybe(j, "eta", c.eta);
  detail::maybe(j, "alpha", c.alpha);
  detail::maybe(j, "delta", c.delta);
  detail::maybe(j, "h_id", c.h_id);
  detail::maybe(j, "coupling_layers", c.coupling_layers);
  detail::maybe(j, "coupling_hidden", c.coupling_hidden);
  detail::maybe(j, "scale_cap", c.scale_cap);
  detail::maybe(j, "head_hidden", c.head_hidden);
  detail::maybe(j, "lr", c.lr);
  detail::maybe(j, "batch_size", c.batch_size);
  detail::maybe(j, "epochs", c.epochs);
  detail::maybe(j, "patience", c.patience);
  detail::maybe(j, "val_fraction", c.val_fraction);
  detail::maybe(j, "seed", c.seed);
  detail::maybe(j, "proposal_scales", c.proposal_scales);
  detail::maybe(j, "proposal_stride", c.proposal_stride);
  detail::maybe(j, "proposal_budget", c.proposal_budget);
  detail::maybe(j, "nms_top_n", c.nms_top_n);
  detail::maybe(j, "nms_iou", c.nms_iou);
  detail::maybe(j, "eval_ious", c.eval_ious);
  detail::maybe(j, "two_stage", c.two_stage);
  detail::maybe(j, "recalibrate_each_epoch", c.recalibrate_each_epoch);
  c.validate();
  return c;
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  return nlohmann::json{
      {"lambda1", c.lambda1},
      {"lambda2", c.lambda2},
      {"lambda3", c.lambda3},
      {"eta", c.eta},
      {"alpha", c.alpha},
      {"delta", c.delta},
      {"h_id", c.h_id},
      {"coupling_layers", c.coupling_layers},
      {"coupling_hidden", c.coupling_hidden},
      {"scale_cap", c.scale_cap},
      {"head_hidden", c.head_hidden},
      {"lr", c.lr},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"patience", c.patience},
      {"val_fraction", c.val_fraction},
      {"seed", c.seed},
      {"proposal_scales", c.proposal_scales},
      {"proposal_stride", c.proposal_stride},
      {"proposal_budget", c.proposal_budget},
      {"nms_top_n", c.nms_top_n},
      {"nms_iou", c.nms_iou},
      {"eval_ious", c.eval_ious},
      {"two_stage", c.two_stage},
      {"recalibrate_each_epoch", c.recalibrate_each_epoch},
  };
}

/// Hash of the canonical (key-sorted) JSON dump.
inline std::uint64_t config_hash(const RunConfig& c) {
  return fnv1a64(run_config_to_json(c).dump());
}

inline GenConfig gen_config_from_json(const nlohmann::json& j) {
  GenConfig c;
  detail::maybe(j, "d", c.d);
  detail::maybe(j, "nv", c.nv);
  detail::maybe(j, "nw", c.nw);
  detail::maybe(j, "k", c.k);
  detail::maybe(j, "noise_sigma", c.noise_sigma);
  detail::maybe(j, "ood_shift", c.ood_shift);
  detail::maybe(j, "seed", c.seed);
  detail::maybe(j, "n_id", c.n_id);
  detail::maybe(j, "n_ood", c.n_ood);
  c.validate();
  return c;
}

inline nlohmann::json gen_config_to_json(const GenConfig& c) {
  return nlohmann::json{
      {"d", c.d},          {"nv", c.nv},
      {"nw", c.nw},        {"k", c.k},
      {"noise_sigma", c.noise_sigma}, {"ood_shift", c.ood_shift},
      {"seed", c.seed},    {"n_id", c.n_id},
      {"n_ood", c.n_ood},
  };
}

inline std::uint64_t config_hash(const GenConfig& c) {
  return fnv1a64(gen_config_to_json(c).dump());
}

}  // namespace ovmr
