#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ovmr/common.hpp"
#include "ovmr/exec.hpp"

namespace ovmr {

/// The learned ID/OOD decision rule, in normalized log-likelihood units.
/// b_ood = b_id - delta; queries whose normalized log-likelihood falls in
/// [b_id, 0] are ID, everything else (including the margin) is OOD.
struct BoundaryCalibration {
  double b_id = 0.0;
  double b_ood = 0.0;
  double alpha = 5.0;
  double delta = 0.04;
  double h_id = 100.0;
  double max_loglik = 0.0;  // raw units; reference point for uncertainty
  bool calibrated = false;
};

enum class QueryLabel : std::uint8_t { ID = 0, OOD = 1 };

/// Log-likelihoods with their ID/OOD flags.
struct LoglikSet {
  std::vector<double> values;
  std::vector<QueryLabel> labels;
};

/// clamp(logp / h_id, -1, 0). Values below -1 after division are clamped;
/// they are treated as unambiguous OOD and carry no gradient.
inline double normalize_loglik(double logp, double h_id) {
  OVMR_CHECK_CONTRACT(h_id > 0.0, "normalize_loglik: h_id must be positive");
  return std::clamp(logp / h_id, -1.0, 0.0);
}

template <class E>
typename E::S normalize_loglik_on(E& ex, typename E::S logp, double h_id) {
  OVMR_CHECK_CONTRACT(h_id > 0.0, "normalize_loglik: h_id must be positive");
  return ex.clamp_s(ex.scale_s(logp, 1.0 / h_id), -1.0, 0.0);
}

/// u(q) = max over the reference set of exp(logp) minus exp(logp(q)).
/// Monotone-inverse to the log-likelihood, so rankings are reversed exactly.
inline double uncertainty_score(double logp, const LoglikSet& set) {
  OVMR_CHECK_CONTRACT(!set.values.empty(), "uncertainty_score: empty set");
  const double mx =
      *std::max_element(set.values.begin(), set.values.end());
  return std::exp(mx) - std::exp(logp);
}

/// Nearest-rank percentile boundary: b_id is the ceil(alpha/100 * N)-th
/// smallest normalized ID log-likelihood (1-based), which caps the fraction
/// of calibration items strictly below b_id at alpha%.
inline BoundaryCalibration calibrate_boundary(std::vector<double> id_logliks,
                                              double alpha, double delta) {
  OVMR_CHECK_CONTRACT(!id_logliks.empty(), "calibrate_boundary: empty set");
  OVMR_CHECK_CONTRACT(alpha > 0.0 && alpha < 100.0,
                      "calibrate_boundary: alpha outside (0, 100)");
  OVMR_CHECK_CONTRACT(delta > 0.0, "calibrate_boundary: delta must be > 0");
  std::sort(id_logliks.begin(), id_logliks.end());
  const std::size_t n = id_logliks.size();
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(alpha / 100.0 * static_cast<double>(n)));
  const std::size_t idx = std::max<std::size_t>(rank, 1) - 1;
  BoundaryCalibration cal;
  cal.b_id = id_logliks[idx];
  cal.delta = delta;
  cal.b_ood = cal.b_id - delta;
  cal.alpha = alpha;
  cal.calibrated = true;
  return cal;
}

/// Triplet refinement loss, Sum_ID |min(logp - b_id, 0)| +
/// Sum_OOD |max(logp - b_id + delta, 0)| over normalized log-likelihoods.
inline double loss_L2(const LoglikSet& set, const BoundaryCalibration& cal) {
  OVMR_CHECK_CONTRACT(cal.calibrated, "loss_L2: uncalibrated boundary");
  double acc = 0.0;
  for (std::size_t i = 0; i < set.values.size(); ++i) {
    const double v = set.values[i];
    if (set.labels[i] == QueryLabel::ID)
      acc += std::max(cal.b_id - v, 0.0);
    else
      acc += std::max(v - cal.b_ood, 0.0);
  }
  return acc;
}

/// Per-item contribution of loss_L2, usable on either exec. The boundary is
/// a constant: no gradient flows into b_id.
template <class E>
typename E::S loss_l2_term_on(E& ex, typename E::S norm_logp, QueryLabel label,
                              const BoundaryCalibration& cal) {
  OVMR_CHECK_CONTRACT(cal.calibrated, "loss_L2: uncalibrated boundary");
  if (label == QueryLabel::ID)
    return ex.relu_s(ex.add_const_s(ex.scale_s(norm_logp, -1.0), cal.b_id));
  return ex.relu_s(ex.add_const_s(norm_logp, -cal.b_ood));
}

inline QueryLabel classify_query(double logp_normalized,
                                 const BoundaryCalibration& cal) {
  OVMR_CHECK_CONTRACT(cal.calibrated, "classify_query: uncalibrated boundary");
  return (logp_normalized >= cal.b_id && logp_normalized <= 0.0)
             ? QueryLabel::ID
             : QueryLabel::OOD;
}

}  // namespace ovmr
