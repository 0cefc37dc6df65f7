#pragma once

#include <cstdint>
#include <vector>

#include "ovmr/boundary.hpp"
#include "ovmr/config.hpp"
#include "ovmr/crossmodal.hpp"
#include "ovmr/flow.hpp"
#include "ovmr/retrieval.hpp"

namespace ovmr {

/// Everything trainable plus the calibrated decision rule.
struct OpenVmrModel {
  int d = 0;
  FlowModel flow;
  CrossmodalParams crossmodal;
  RetrievalHead head;
  BoundaryCalibration cal;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;

  std::vector<Param*> all_params() {
    std::vector<Param*> out;
    flow.collect(out);
    crossmodal.collect(out);
    head.collect(out);
    return out;
  }
};

inline OpenVmrModel make_model(int d, const RunConfig& cfg) {
  OVMR_CHECK_CONTRACT(d >= 1, "make_model: d must be >= 1");
  OpenVmrModel m;
  m.d = d;
  Rng rng(cfg.seed ^ 0x6f70656e766d72ULL);  // independent of the data stream
  m.flow = make_flow(d, cfg.coupling_layers, cfg.coupling_hidden,
                     cfg.scale_cap, rng);
  m.crossmodal = CrossmodalParams(d);
  m.crossmodal.init(rng);
  m.crossmodal.eta = cfg.eta;
  m.head = RetrievalHead(d, cfg.head_hidden);
  m.head.init(rng);
  m.cal.alpha = cfg.alpha;
  m.cal.delta = cfg.delta;
  m.cal.h_id = cfg.h_id;
  m.config_hash = config_hash(cfg);
  m.seed = cfg.seed;
  m.val_fraction = cfg.val_fraction;
  return m;
}

/// Snapshot of parameter values (for early-stopping restores).
struct ParamSnapshot {
  std::vector<std::vector<double>> values;
  BoundaryCalibration cal;

  static ParamSnapshot take(OpenVmrModel& m) {
    ParamSnapshot s;
    for (Param* p : m.all_params()) s.values.push_back(p->value.data);
    s.cal = m.cal;
    return s;
  }
  void restore(OpenVmrModel& m) const {
    auto params = m.all_params();
    OVMR_CHECK_CONTRACT(params.size() == values.size(),
                        "snapshot: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i]->value.data = values[i];
    m.cal = cal;
  }
};

}  // namespace ovmr
