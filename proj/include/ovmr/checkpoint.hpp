#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include "ovmr/data.hpp"
#include "ovmr/model.hpp"

namespace ovmr {

// OVMRFLOW checkpoint:
//
//   magic "OVMRFLOW" | u32 version | u32 d | u32 C
//   per coupling layer: scale net then shift net, each as six tensors
//     (w1, b1, w2, b2, w3, b3) with u32 rows | u32 cols headers and f64 data
//   f64 scale_cap
//   calibration: u8 calibrated | f64 b_id | f64 b_ood | f64 alpha
//     | f64 delta | f64 h_id | f64 max_loglik
//   f64 eta | crossmodal tensors (M_v, M_q, M1, M2, M3, M4, M5)
//   head tensors (w_hidden, b_hidden, w_score, b_score, w_reg, b_reg)
//   provenance: u64 config_hash | u64 seed | f64 val_fraction
//
// All values little-endian; reals are 64-bit.

inline constexpr char kFlowMagic[8] = {'O', 'V', 'M', 'R', 'F', 'L', 'O', 'W'};
inline constexpr std::uint32_t kFlowVersion = 1;

namespace detail {

inline void write_tensor(ByteWriter& w, const Mat& m) {
  w.write<std::uint32_t>(static_cast<std::uint32_t>(m.rows));
  w.write<std::uint32_t>(static_cast<std::uint32_t>(m.cols));
  for (double x : m.data) w.write<double>(x);
}

inline void read_tensor(ByteReader& r, Mat& m, const char* what) {
  const auto rows = r.read<std::uint32_t>(what);
  const auto cols = r.read<std::uint32_t>(what);
  if (rows != m.rows || cols != m.cols)
    throw FormatError(r.path() + ": tensor " + what + " has shape " +
                      std::to_string(rows) + "x" + std::to_string(cols) +
                      ", expected " + std::to_string(m.rows) + "x" +
                      std::to_string(m.cols));
  for (auto& x : m.data) x = r.read<double>(what);
}

inline void write_net(ByteWriter& w, const CouplingNet& n) {
  write_tensor(w, n.w1.value);
  write_tensor(w, n.b1.value);
  write_tensor(w, n.w2.value);
  write_tensor(w, n.b2.value);
  write_tensor(w, n.w3.value);
  write_tensor(w, n.b3.value);
}

inline void read_net(ByteReader& r, CouplingNet& n, const char* what) {
  read_tensor(r, n.w1.value, what);
  read_tensor(r, n.b1.value, what);
  read_tensor(r, n.w2.value, what);
  read_tensor(r, n.b2.value, what);
  read_tensor(r, n.w3.value, what);
  read_tensor(r, n.b3.value, what);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const OpenVmrModel& m) {
  detail::ByteWriter w;
  w.buf.append(kFlowMagic, sizeof(kFlowMagic));
  w.write<std::uint32_t>(kFlowVersion);
  w.write<std::uint32_t>(static_cast<std::uint32_t>(m.d));
  w.write<std::uint32_t>(static_cast<std::uint32_t>(m.flow.layers.size()));
  for (const CouplingLayer& l : m.flow.layers) {
    detail::write_net(w, l.scale_net);
    detail::write_net(w, l.shift_net);
  }
  w.write<double>(m.flow.layers.empty() ? 2.0 : m.flow.layers[0].scale_cap);

  w.write<std::uint8_t>(m.cal.calibrated ? 1 : 0);
  w.write<double>(m.cal.b_id);
  w.write<double>(m.cal.b_ood);
  w.write<double>(m.cal.alpha);
  w.write<double>(m.cal.delta);
  w.write<double>(m.cal.h_id);
  w.write<double>(m.cal.max_loglik);

  w.write<double>(m.crossmodal.eta);
  for (const Param* p : {&m.crossmodal.M_v, &m.crossmodal.M_q,
                         &m.crossmodal.M1, &m.crossmodal.M2, &m.crossmodal.M3,
                         &m.crossmodal.M4, &m.crossmodal.M5})
    detail::write_tensor(w, p->value);
  for (const Param* p : {&m.head.w_hidden, &m.head.b_hidden, &m.head.w_score,
                         &m.head.b_score, &m.head.kappa, &m.head.w_reg,
                         &m.head.b_reg})
    detail::write_tensor(w, p->value);

  w.write<std::uint64_t>(m.config_hash);
  w.write<std::uint64_t>(m.seed);
  w.write<double>(m.val_fraction);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw FormatError(path + ": short write");
}

inline OpenVmrModel load_checkpoint(const std::string& path) {
  detail::ByteReader r(path, detail::slurp(path));
  char magic[8];
  for (char& c : magic) c = r.read<char>("magic");
  if (std::memcmp(magic, kFlowMagic, 8) != 0)
    throw FormatError(path + ": bad magic, expected \"OVMRFLOW\", got \"" +
                      std::string(magic, 8) + "\"");
  const auto version = r.read<std::uint32_t>("version");
  if (version != kFlowVersion)
    throw FormatError(path + ": unsupported version " +
                      std::to_string(version));
  const auto d = r.read<std::uint32_t>("d");
  const auto layers = r.read<std::uint32_t>("C");
  if (d < 1 || layers < 1)
    throw FormatError(path + ": degenerate dimensions in header");

  // Peek the first tensor header for the hidden width, then rebuild the
  // model skeleton with the same geometry rules as make_flow.
  OpenVmrModel m;
  m.d = static_cast<int>(d);
  {
    const std::size_t mark = r.offset();
    const auto hidden = r.read<std::uint32_t>("w1 rows");
    if (hidden < 1) throw FormatError(path + ": degenerate hidden width");
    r.seek(mark);
    Rng rng(0);
    m.flow = make_flow(static_cast<int>(d), static_cast<int>(layers),
                       static_cast<int>(hidden), 2.0, rng);
  }
  for (CouplingLayer& l : m.flow.layers) {
    detail::read_net(r, l.scale_net, "flow scale net");
    detail::read_net(r, l.shift_net, "flow shift net");
  }
  const double cap = r.read<double>("scale_cap");
  if (!(cap > 0.0)) throw FormatError(path + ": scale_cap must be positive");
  for (CouplingLayer& l : m.flow.layers) l.scale_cap = cap;

  m.cal.calibrated = r.read<std::uint8_t>("calibrated") != 0;
  m.cal.b_id = r.read<double>("b_id");
  m.cal.b_ood = r.read<double>("b_ood");
  m.cal.alpha = r.read<double>("alpha");
  m.cal.delta = r.read<double>("delta");
  m.cal.h_id = r.read<double>("h_id");
  m.cal.max_loglik = r.read<double>("max_loglik");

  const double eta = r.read<double>("eta");
  m.crossmodal = CrossmodalParams(d);
  m.crossmodal.eta = eta;
  for (Param* p : {&m.crossmodal.M_v, &m.crossmodal.M_q, &m.crossmodal.M1,
                   &m.crossmodal.M2, &m.crossmodal.M3, &m.crossmodal.M4,
                   &m.crossmodal.M5})
    detail::read_tensor(r, p->value, "crossmodal tensor");

  {
    // Head hidden width from the upcoming tensor header, same trick.
    const std::size_t mark = r.offset();
    const auto hh = r.read<std::uint32_t>("head rows");
    if (hh < 1) throw FormatError(path + ": degenerate head width");
    r.seek(mark);
    m.head = RetrievalHead(d, hh);
  }
  for (Param* p : {&m.head.w_hidden, &m.head.b_hidden, &m.head.w_score,
                   &m.head.b_score, &m.head.kappa, &m.head.w_reg,
                   &m.head.b_reg})
    detail::read_tensor(r, p->value, "head tensor");

  m.config_hash = r.read<std::uint64_t>("config_hash");
  m.seed = r.read<std::uint64_t>("seed");
  m.val_fraction = r.read<double>("val_fraction");

  if (r.offset() != r.size())
    throw FormatError(path + ": trailing bytes at offset " +
                      std::to_string(r.offset()));
  return m;
}

}  // namespace ovmr
