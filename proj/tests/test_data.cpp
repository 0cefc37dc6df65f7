#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ovmr/data.hpp"
#include "ovmr/metrics.hpp"

using namespace ovmr;

namespace {

GenConfig small_cfg() {
  GenConfig cfg;
  cfg.d = 8;
  cfg.nv = 16;
  cfg.nw = 4;
  cfg.k = 3;
  cfg.noise_sigma = 0.1;
  cfg.ood_shift = 3.0;
  cfg.seed = 77;
  cfg.n_id = 30;
  cfg.n_ood = 20;
  return cfg;
}

bool equal_datasets(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].video.data != b[i].video.data) return false;
    if (a[i].words.data != b[i].words.data) return false;
    if (a[i].sentence.data != b[i].sentence.data) return false;
    if (a[i].label != b[i].label) return false;
    if (a[i].has_moment != b[i].has_moment) return false;
    if (a[i].has_moment && (a[i].moment.t_s != b[i].moment.t_s ||
                            a[i].moment.t_e != b[i].moment.t_e))
      return false;
    if (a[i].concept_id != b[i].concept_id) return false;
  }
  return true;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

double mean_cos_to_planted(const Dataset& ds, int nv) {
  PlainExec ex;
  double acc = 0.0;
  int count = 0;
  for (const auto& ep : ds) {
    if (ep.label != QueryLabel::ID) continue;
    const int lo = static_cast<int>(ep.moment.t_s * nv + 0.5);
    const int hi = static_cast<int>(ep.moment.t_e * nv + 0.5);
    for (int f = lo; f < hi; ++f) {
      acc += ex.cosine(ep.sentence, ep.video.row_vec(f));
      ++count;
    }
  }
  return acc / count;
}

}  // namespace

TEST_CASE("generation is bitwise deterministic") {
  GenConfig cfg = small_cfg();
  Dataset a = generate_dataset(cfg);
  Dataset b = generate_dataset(cfg);
  CHECK(equal_datasets(a, b));

  cfg.seed += 1;
  Dataset c = generate_dataset(cfg);
  CHECK(!equal_datasets(a, c));
}

TEST_CASE("zero noise makes the sentence equal the planted frames") {
  GenConfig cfg = small_cfg();
  cfg.noise_sigma = 0.0;
  Dataset ds = generate_dataset(cfg);
  for (const auto& ep : ds) {
    if (ep.label != QueryLabel::ID) continue;
    const int lo = static_cast<int>(ep.moment.t_s * cfg.nv + 0.5);
    const int hi = static_cast<int>(ep.moment.t_e * cfg.nv + 0.5);
    REQUIRE(lo < hi);
    for (int f = lo; f < hi; ++f)
      for (int c = 0; c < cfg.d; ++c)
        CHECK(ep.video.at(f, c) == ep.sentence[c]);
  }
}

TEST_CASE("planted moments have valid extents") {
  GenConfig cfg = small_cfg();
  Dataset ds = generate_dataset(cfg);
  int n_id = 0, n_ood = 0;
  for (const auto& ep : ds) {
    if (ep.label == QueryLabel::ID) {
      ++n_id;
      REQUIRE(ep.has_moment);
      CHECK(ep.moment.t_s >= 0.0);
      CHECK(ep.moment.t_s < ep.moment.t_e);
      CHECK(ep.moment.t_e <= 1.0);
      const double len = ep.moment.t_e - ep.moment.t_s;
      CHECK(len >= 0.1 - 1.0 / cfg.nv);
      CHECK(len <= 0.4 + 1.0 / cfg.nv);
    } else {
      ++n_ood;
      CHECK(!ep.has_moment);
    }
  }
  CHECK(n_id == cfg.n_id);
  CHECK(n_ood == cfg.n_ood);
}

TEST_CASE("ID queries sit closer to their planted frames than OOD queries") {
  GenConfig cfg;
  cfg.d = 16;
  cfg.nv = 32;
  cfg.nw = 4;
  cfg.k = 4;
  cfg.noise_sigma = 0.1;
  cfg.ood_shift = 3.0;
  cfg.seed = 5;
  cfg.n_id = 200;
  cfg.n_ood = 200;
  Dataset ds = generate_dataset(cfg);

  PlainExec ex;
  const double id_cos = mean_cos_to_planted(ds, cfg.nv);
  double ood_cos = 0.0;
  int count = 0;
  for (const auto& ep : ds) {
    if (ep.label != QueryLabel::OOD) continue;
    for (std::size_t f = 0; f < ep.video.rows; ++f) {
      ood_cos += ex.cosine(ep.sentence, ep.video.row_vec(f));
      ++count;
    }
  }
  ood_cos /= count;
  CHECK(id_cos > ood_cos);
}

TEST_CASE("oracle separability rises with ood_shift") {
  auto oracle_auroc = [](double shift) {
    GenConfig cfg;
    cfg.d = 16;
    cfg.nv = 16;
    cfg.nw = 4;
    cfg.k = 4;
    cfg.noise_sigma = 0.3;  // enough overlap that the knob is visible
    cfg.ood_shift = shift;
    cfg.seed = 11;
    cfg.n_id = 150;
    cfg.n_ood = 150;
    Dataset ds = generate_dataset(cfg);

    // Oracle scorer: cosine to the nearest concept anchor, approximated by
    // the planted frames of ID episodes (exact anchors are internal).
    Rng rng(cfg.seed);
    std::vector<std::vector<double>> anchors;
    for (int c = 0; c < cfg.k; ++c) anchors.push_back(rng.unit_vec(cfg.d));

    PlainExec ex;
    std::vector<double> scores;
    std::vector<QueryLabel> labels;
    for (const auto& ep : ds) {
      double best = -2.0;
      for (const auto& anchor : anchors)
        best = std::max(best, ex.cosine(ep.sentence, Vec(anchor)));
      scores.push_back(best);
      labels.push_back(ep.label);
    }
    return auroc(scores, labels);
  };

  const double a1 = oracle_auroc(1.0);
  const double a2 = oracle_auroc(2.0);
  const double a3 = oracle_auroc(3.0);
  INFO("auroc " << a1 << " " << a2 << " " << a3);
  CHECK(a1 < a2);
  CHECK(a2 < a3);
}

TEST_CASE("feature file roundtrip is lossless") {
  GenConfig cfg = small_cfg();
  Dataset ds = generate_dataset(cfg);
  const std::string path = temp_path("ovmr_roundtrip.bin");
  write_features(path, ds);
  Dataset back = read_features(path);
  CHECK(equal_datasets(ds, back));
  std::remove(path.c_str());
}

TEST_CASE("truncated files are rejected with an offset") {
  GenConfig cfg = small_cfg();
  cfg.n_id = 3;
  cfg.n_ood = 1;
  Dataset ds = generate_dataset(cfg);
  const std::string path = temp_path("ovmr_trunc.bin");
  write_features(path, ds);

  std::ifstream in(path, std::ios::binary);
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size() / 2));
  out.close();

  try {
    read_features(path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("wrong magic names both magics") {
  const std::string path = temp_path("ovmr_magic.bin");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << "NOTMAGIC" << std::string(64, '\0');
  out.close();
  try {
    read_features(path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string what = e.what();
    CHECK(what.find("OVMRDATA") != std::string::npos);
    CHECK(what.find("NOTMAGIC") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("batch sizes follow the merge rule") {
  std::vector<int> ten(10), nine(9);
  std::iota(ten.begin(), ten.end(), 0);
  std::iota(nine.begin(), nine.end(), 0);

  auto b10 = make_batches(ten, {}, 4, 1);
  REQUIRE(b10.size() == 3);
  CHECK(b10[0].id_items.size() == 4);
  CHECK(b10[1].id_items.size() == 4);
  CHECK(b10[2].id_items.size() == 2);

  auto b9 = make_batches(nine, {}, 4, 1);
  REQUIRE(b9.size() == 2);
  CHECK(b9[0].id_items.size() == 4);
  CHECK(b9[1].id_items.size() == 5);

  CHECK_THROWS_AS(make_batches(std::vector<int>{0}, {}, 4, 1), ContractError);
  CHECK_THROWS_AS(make_batches(ten, {}, 1, 1), ContractError);
}

TEST_CASE("batching is a seeded permutation and routes OOD items") {
  std::vector<int> ids(11), oods(7);
  std::iota(ids.begin(), ids.end(), 0);
  std::iota(oods.begin(), oods.end(), 100);

  auto a = make_batches(ids, oods, 4, 9);
  auto b = make_batches(ids, oods, 4, 9);
  REQUIRE(a.size() == b.size());
  std::multiset<int> seen_id, seen_ood;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id_items == b[i].id_items);
    CHECK(a[i].ood_items == b[i].ood_items);
    seen_id.insert(a[i].id_items.begin(), a[i].id_items.end());
    seen_ood.insert(a[i].ood_items.begin(), a[i].ood_items.end());
  }
  CHECK(seen_id == std::multiset<int>(ids.begin(), ids.end()));
  CHECK(seen_ood == std::multiset<int>(oods.begin(), oods.end()));

  auto c = make_batches(ids, oods, 4, 10);
  bool any_differ = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].id_items != c[i].id_items) any_differ = true;
  CHECK(any_differ);
}
