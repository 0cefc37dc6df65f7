#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ovmr/boundary.hpp"
#include "ovmr/retrieval.hpp"
#include "ovmr/rng.hpp"
#include "ovmr/tensor.hpp"

namespace ovmr {

/// One video paired with one query: frame features, word and sentence query
/// features, the ID/OOD label and (for ID) the ground-truth moment.
struct EpisodeSample {
  Mat video;     // Nv x d
  Mat words;     // Nw x d
  Vec sentence;  // d
  QueryLabel label = QueryLabel::ID;
  bool has_moment = false;
  MomentLabel moment;
  std::int32_t concept_id = -1;
};

using Dataset = std::vector<EpisodeSample>;

struct GenConfig {
  int d = 16;
  int nv = 64;
  int nw = 8;
  int k = 4;  // concept count
  double noise_sigma = 0.1;
  double ood_shift = 3.0;
  std::uint64_t seed = 1;
  int n_id = 400;
  int n_ood = 400;

  void validate() const {
    OVMR_CHECK_CONTRACT(d >= 4, "gen config: d must be >= 4");
    OVMR_CHECK_CONTRACT(k >= 2, "gen config: K must be >= 2");
    OVMR_CHECK_CONTRACT(noise_sigma >= 0.0,
                        "gen config: noise_sigma must be >= 0");
    OVMR_CHECK_CONTRACT(ood_shift > 0.0, "gen config: ood_shift must be > 0");
    OVMR_CHECK_CONTRACT(nv >= 4, "gen config: Nv must be >= 4");
    OVMR_CHECK_CONTRACT(nw >= 1, "gen config: Nw must be >= 1");
    OVMR_CHECK_CONTRACT(n_id >= 1, "gen config: N_id must be >= 1");
    OVMR_CHECK_CONTRACT(n_ood >= 0, "gen config: N_ood must be >= 0");
  }
};

namespace detail {
inline double q32(double x) { return static_cast<double>(static_cast<float>(x)); }

inline void add_noise(Rng& rng, std::vector<double>& v, double sigma) {
  for (auto& x : v) x += sigma * rng.normal();
}
}  // namespace detail

/// Deterministic synthetic episodes. K unit-norm concept anchors; each ID
/// episode plants a moment whose frames sit near one anchor while the other
/// frames sit near other anchors; the sentence and word features sit near the
/// planted anchor. OOD queries are shifted off the anchor sphere and reuse ID
/// videos without a moment. Features are quantized to 32-bit so the on-disk
/// format round-trips losslessly.
inline Dataset generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  std::vector<std::vector<double>> anchors;
  anchors.reserve(cfg.k);
  for (int c = 0; c < cfg.k; ++c) anchors.push_back(rng.unit_vec(cfg.d));

  const int len_lo =
      std::max<int>(1, static_cast<int>(std::llround(0.1 * cfg.nv)));
  const int len_hi = std::max<int>(
      len_lo, static_cast<int>(std::llround(0.4 * cfg.nv)));

  Dataset out;
  out.reserve(cfg.n_id + cfg.n_ood);

  for (int i = 0; i < cfg.n_id; ++i) {
    EpisodeSample ep;
    ep.label = QueryLabel::ID;
    const int cid = static_cast<int>(rng.below(cfg.k));
    ep.concept_id = cid;

    const int len = len_lo + static_cast<int>(rng.below(len_hi - len_lo + 1));
    const int start = static_cast<int>(rng.below(cfg.nv - len + 1));
    ep.has_moment = true;
    ep.moment.t_s = static_cast<double>(start) / cfg.nv;
    ep.moment.t_e = static_cast<double>(start + len) / cfg.nv;

    ep.video = Mat(cfg.nv, cfg.d);
    for (int f = 0; f < cfg.nv; ++f) {
      std::vector<double> frame;
      if (f >= start && f < start + len) {
        frame = anchors[cid];
      } else {
        int other = static_cast<int>(rng.below(cfg.k - 1));
        if (other >= cid) ++other;
        frame = anchors[other];
      }
      detail::add_noise(rng, frame, cfg.noise_sigma);
      for (int c = 0; c < cfg.d; ++c)
        ep.video.at(f, c) = detail::q32(frame[c]);
    }

    std::vector<double> sent = anchors[cid];
    detail::add_noise(rng, sent, cfg.noise_sigma);
    ep.sentence = Vec(cfg.d);
    for (int c = 0; c < cfg.d; ++c) ep.sentence[c] = detail::q32(sent[c]);

    ep.words = Mat(cfg.nw, cfg.d);
    for (int w = 0; w < cfg.nw; ++w) {
      std::vector<double> word(ep.sentence.data);
      detail::add_noise(rng, word, cfg.noise_sigma);
      for (int c = 0; c < cfg.d; ++c) ep.words.at(w, c) = detail::q32(word[c]);
    }
    out.push_back(std::move(ep));
  }

  for (int j = 0; j < cfg.n_ood; ++j) {
    EpisodeSample ep;
    ep.label = QueryLabel::OOD;
    ep.concept_id = -1;
    ep.video = out[j % cfg.n_id].video;

    // A uniformly drawn concept anchor pushed off the ID manifold: ood_shift
    // controls how far the query ends up from every anchor.
    const std::vector<double>& base = anchors[rng.below(cfg.k)];
    std::vector<double> dir = rng.unit_vec(cfg.d);
    std::vector<double> sent(cfg.d);
    for (int c = 0; c < cfg.d; ++c) sent[c] = base[c] + cfg.ood_shift * dir[c];
    detail::add_noise(rng, sent, cfg.noise_sigma);
    ep.sentence = Vec(cfg.d);
    for (int c = 0; c < cfg.d; ++c) ep.sentence[c] = detail::q32(sent[c]);

    ep.words = Mat(cfg.nw, cfg.d);
    for (int w = 0; w < cfg.nw; ++w) {
      std::vector<double> word(ep.sentence.data);
      detail::add_noise(rng, word, cfg.noise_sigma);
      for (int c = 0; c < cfg.d; ++c) ep.words.at(w, c) = detail::q32(word[c]);
    }
    out.push_back(std::move(ep));
  }
  return out;
}

// ---------------------------------------------------------------------------
// OVMRDATA binary format
// ---------------------------------------------------------------------------
//
//   magic "OVMRDATA" | u32 version | u32 episode count
//   per episode:
//     u8 label (0 = ID, 1 = OOD) | i32 concept_id | f32 t_s | f32 t_e
//     u32 Nv | u32 Nw | u32 d
//     f32 video[Nv*d] | f32 words[Nw*d] | f32 sentence[d]
//
// All integers and floats little-endian.

inline constexpr char kDataMagic[8] = {'O', 'V', 'M', 'R', 'D', 'A', 'T', 'A'};
inline constexpr std::uint32_t kDataVersion = 1;

namespace detail {

class ByteReader {
 public:
  ByteReader(const std::string& path, std::string blob)
      : path_(path), blob_(std::move(blob)) {}

  template <typename T>
  T read(const char* what) {
    if (off_ + sizeof(T) > blob_.size())
      throw FormatError(path_ + ": truncated while reading " + what +
                        " at byte offset " + std::to_string(off_));
    T v;
    std::memcpy(&v, blob_.data() + off_, sizeof(T));
    off_ += sizeof(T);
    return v;
  }

  void read_f32_block(double* dst, std::size_t n, const char* what) {
    if (off_ + n * sizeof(float) > blob_.size())
      throw FormatError(path_ + ": truncated while reading " + what +
                        " at byte offset " + std::to_string(off_));
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, blob_.data() + off_, sizeof(float));
      off_ += sizeof(float);
      dst[i] = static_cast<double>(f);
    }
  }

  std::size_t offset() const { return off_; }
  void seek(std::size_t off) { off_ = off; }
  std::size_t size() const { return blob_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::string blob_;
  std::size_t off_ = 0;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open for reading");
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return blob;
}

struct ByteWriter {
  std::string buf;

  template <typename T>
  void write(T v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf.append(p, sizeof(T));
  }
  void write_f32_block(const double* src, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) write(static_cast<float>(src[i]));
  }
};

}  // namespace detail

inline void write_features(const std::string& path, const Dataset& ds) {
  detail::ByteWriter w;
  w.buf.append(kDataMagic, sizeof(kDataMagic));
  w.write<std::uint32_t>(kDataVersion);
  w.write<std::uint32_t>(static_cast<std::uint32_t>(ds.size()));
  for (const EpisodeSample& ep : ds) {
    w.write<std::uint8_t>(ep.label == QueryLabel::OOD ? 1 : 0);
    w.write<std::int32_t>(ep.concept_id);
    w.write<float>(ep.has_moment ? static_cast<float>(ep.moment.t_s) : 0.0f);
    w.write<float>(ep.has_moment ? static_cast<float>(ep.moment.t_e) : 0.0f);
    w.write<std::uint32_t>(static_cast<std::uint32_t>(ep.video.rows));
    w.write<std::uint32_t>(static_cast<std::uint32_t>(ep.words.rows));
    w.write<std::uint32_t>(static_cast<std::uint32_t>(ep.sentence.len()));
    w.write_f32_block(ep.video.data.data(), ep.video.data.size());
    w.write_f32_block(ep.words.data.data(), ep.words.data.size());
    w.write_f32_block(ep.sentence.data.data(), ep.sentence.len());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw FormatError(path + ": short write");
}

inline Dataset read_features(const std::string& path) {
  detail::ByteReader r(path, detail::slurp(path));
  char magic[8];
  for (char& c : magic) c = r.read<char>("magic");
  if (std::memcmp(magic, kDataMagic, 8) != 0)
    throw FormatError(path + ": bad magic, expected \"OVMRDATA\", got \"" +
                      std::string(magic, 8) + "\"");
  const auto version = r.read<std::uint32_t>("version");
  if (version != kDataVersion)
    throw FormatError(path + ": unsupported version " +
                      std::to_string(version));
  const auto count = r.read<std::uint32_t>("episode count");
  Dataset ds;
  ds.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    EpisodeSample ep;
    ep.label = r.read<std::uint8_t>("label") ? QueryLabel::OOD : QueryLabel::ID;
    ep.concept_id = r.read<std::int32_t>("concept_id");
    const float ts = r.read<float>("t_s");
    const float te = r.read<float>("t_e");
    ep.has_moment = ep.label == QueryLabel::ID;
    if (ep.has_moment) {
      ep.moment.t_s = ts;
      ep.moment.t_e = te;
    }
    const auto nv = r.read<std::uint32_t>("Nv");
    const auto nw = r.read<std::uint32_t>("Nw");
    const auto d = r.read<std::uint32_t>("d");
    ep.video = Mat(nv, d);
    ep.words = Mat(nw, d);
    ep.sentence = Vec(d);
    r.read_f32_block(ep.video.data.data(), ep.video.data.size(), "video");
    r.read_f32_block(ep.words.data.data(), ep.words.data.size(), "words");
    r.read_f32_block(ep.sentence.data.data(), d, "sentence");
    ds.push_back(std::move(ep));
  }
  if (r.offset() != r.size())
    throw FormatError(path + ": trailing bytes at offset " +
                      std::to_string(r.offset()));
  return ds;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// One training batch: ID episodes feed all four losses, the OOD slice feeds
/// only the boundary-refinement term.
struct Batch {
  std::vector<int> id_items;
  std::vector<int> ood_items;
};

/// Seeded shuffle and chunking of explicit index pools. A trailing chunk of
/// size 1 is merged into the previous batch (L3 needs at least 2 pairs); the
/// epoch's OOD items are spread contiguously across the batches.
inline std::vector<Batch> make_batches(std::vector<int> id_pool,
                                       std::vector<int> ood_pool,
                                       int batch_size, std::uint64_t seed) {
  OVMR_CHECK_CONTRACT(batch_size >= 2, "make_batches: batch_size must be >= 2");
  OVMR_CHECK_CONTRACT(id_pool.size() >= 2,
                      "make_batches: need at least 2 ID items");
  Rng rng(seed);
  rng.shuffle(id_pool);
  rng.shuffle(ood_pool);

  std::vector<Batch> batches;
  for (std::size_t at = 0; at < id_pool.size(); at += batch_size) {
    const std::size_t end = std::min(at + batch_size, id_pool.size());
    Batch b;
    b.id_items.assign(id_pool.begin() + at, id_pool.begin() + end);
    batches.push_back(std::move(b));
  }
  if (batches.size() > 1 && batches.back().id_items.size() < 2) {
    auto& prev = batches[batches.size() - 2];
    prev.id_items.insert(prev.id_items.end(), batches.back().id_items.begin(),
                         batches.back().id_items.end());
    batches.pop_back();
  }

  const std::size_t nb = batches.size();
  const std::size_t base = ood_pool.size() / nb;
  const std::size_t rem = ood_pool.size() % nb;
  std::size_t at = 0;
  for (std::size_t i = 0; i < nb; ++i) {
    const std::size_t take = base + (i < rem ? 1 : 0);
    batches[i].ood_items.assign(ood_pool.begin() + at,
                                ood_pool.begin() + at + take);
    at += take;
  }
  return batches;
}

inline std::vector<Batch> make_batches(const Dataset& ds, int batch_size,
                                       std::uint64_t seed) {
  std::vector<int> id_pool, ood_pool;
  for (int i = 0; i < static_cast<int>(ds.size()); ++i)
    (ds[i].label == QueryLabel::ID ? id_pool : ood_pool).push_back(i);
  return make_batches(std::move(id_pool), std::move(ood_pool), batch_size,
                      seed);
}

}  // namespace ovmr
