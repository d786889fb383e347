#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"
#include "geosid/eval.hpp"

using namespace geosid;

namespace {

// Target placed at 1-based rank r among 20 candidates; r = 0 means absent.
RankedPrediction at_rank(int r) {
  RankedPrediction p{"t", {}};
  for (int i = 1; i <= 20; ++i) p.ranked.push_back(i == r ? "t" : "x" + std::to_string(i));
  return p;
}

SidAssignment four_sids() {
  SidAssignment a;
  a.sizes = {2, 2, 2};
  a.sids = {{"a", {0, 0, 0}}, {"b", {0, 1, 0}}, {"c", {1, 0, 0}}, {"d", {1, 0, 1}}};
  return a;
}

}  // namespace

TEST_CASE("recall and ndcg examples") {
  const std::vector<RankedPrediction> preds{at_rank(1), at_rank(3), at_rank(7), at_rank(12)};
  CHECK(recall_at_k(preds, 5) == doctest::Approx(0.5));
  CHECK(recall_at_k(preds, 1) == doctest::Approx(0.25));
  CHECK(recall_at_k(preds, 20) == doctest::Approx(1.0));
  CHECK(ndcg_at_k({at_rank(2)}, 5) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
  CHECK(ndcg_at_k({at_rank(1)}, 1) == doctest::Approx(1.0));
  CHECK(ndcg_at_k({at_rank(6)}, 5) == 0.0);
  CHECK(recall_at_k({at_rank(0)}, 20) == 0.0);
  CHECK_THROWS_AS(recall_at_k({}, 5), Error);
  CHECK_THROWS_AS(ndcg_at_k(preds, 0), Error);
}

TEST_CASE("metrics are monotone in k and bounded") {
  Rng rng(31);
  std::vector<RankedPrediction> preds;
  for (int i = 0; i < 100; ++i) preds.push_back(at_rank(static_cast<int>(rng.below(21))));
  double prev_r = 0, prev_n = 0;
  for (int k = 1; k <= 20; ++k) {
    const double r = recall_at_k(preds, k), n = ndcg_at_k(preds, k);
    CHECK(r >= prev_r);
    CHECK(n >= prev_n);
    CHECK(n <= r + 1e-12);
    prev_r = r;
    prev_n = n;
  }
}

TEST_CASE("cohesion hand fixture") {
  std::vector<Poi> pois{fx::poi("a", 40.0, -75.0), fx::poi("b", 40.01, -75.0), fx::poi("c", 41.0, -75.0),
                        fx::poi("d", 41.0, -75.02)};
  const auto ds = fx::sequences(pois, {{"u", {"a"}}});
  RowMatrixF rows(4, 2);
  rows << 1, 0, 0, 1, 1, 0, 1, 0;
  const EmbeddingTable t({"a", "b", "c", "d"}, rows, false);
  const auto rep = cohesion(four_sids(), t, ds);
  REQUIRE(rep.levels.size() == 3);
  const double ab = haversine_km(pois[0].point(), pois[1].point());
  const double cd = haversine_km(pois[2].point(), pois[3].point());
  CHECK(rep.levels[0].similarity == doctest::Approx(0.5));
  CHECK(rep.levels[0].distance_km == doctest::Approx((ab + cd) / 2));
  CHECK(rep.levels[0].groups == 2);
  CHECK(rep.levels[1].similarity == doctest::Approx(1.0));
  CHECK(rep.levels[1].distance_km == doctest::Approx(cd));
  CHECK(rep.levels[1].scored_groups == 1);
  CHECK(std::isnan(rep.levels[2].similarity));
  CHECK(rep.levels[2].scored_groups == 0);

  // Row order of the table does not matter.
  RowMatrixF perm(4, 2);
  perm << 1, 0, 1, 0, 0, 1, 1, 0;
  const EmbeddingTable t2({"d", "c", "b", "a"}, perm, false);
  const auto rep2 = cohesion(four_sids(), t2, ds);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(rep2.levels[l].similarity == rep.levels[l].similarity);
    CHECK(rep2.levels[l].distance_km == rep.levels[l].distance_km);
  }
}

TEST_CASE("cohesion samples large groups deterministically") {
  const auto pois = fx::grid_pois(250, 0.001);
  const auto ds = fx::sequences(pois, {{"u", {"p00"}}});
  SidAssignment a;
  a.sizes = {1};
  a.dedup = true;
  std::vector<std::string> ids;
  for (const auto& p : pois) ids.push_back(p.id);
  for (std::size_t i = 0; i < pois.size(); ++i) a.sids[pois[i].id] = {0, static_cast<int>(i)};
  RowMatrixF rows = RowMatrixF::Random(250, 4);
  const EmbeddingTable t(ids, rows, false);
  const auto r1 = cohesion(a, t, ds), r2 = cohesion(a, t, ds);
  CHECK(r1.levels[0].similarity == r2.levels[0].similarity);
  CHECK(r1.levels[0].scored_groups == 1);
}

TEST_CASE("popularity baseline") {
  std::vector<Interaction> rs;
  std::vector<SplitTag> tags;
  std::int64_t ts = 1'600'000'000;
  for (int u = 0; u < 10; ++u) {
    std::vector<std::string> seq{"p00", "p01"};
    if (u == 0) seq.push_back("p00");
    seq.push_back(u < 9 ? "p00" : "p02");
    for (const auto& p : seq) rs.push_back(fx::visit("u" + std::to_string(u), p, ts += 60));
  }
  auto ds = Dataset::build(fx::grid_pois(3), rs);
  tags.assign(ds.interactions().size(), SplitTag::kTrain);
  for (const auto& [u, traj] : ds.trajectories()) tags[traj.events.back()] = SplitTag::kTest;
  ds = ds.with_split(tags);
  const auto preds = popularity_baseline(ds, 3);
  REQUIRE(preds.size() == 10);
  CHECK(preds[0].ranked == std::vector<std::string>{"p00", "p01", "p02"});
  CHECK(recall_at_k(preds, 1) == doctest::Approx(0.9));
  CHECK(split_events(ds, SplitTag::kTest).size() == 10);
  CHECK_THROWS_AS(popularity_baseline(ds, 0), Error);
}

TEST_CASE("embedding export round trip") {
  const auto pois = fx::grid_pois(4);
  RowMatrixF rows(4, 3);
  rows << 0.1f, -0.25f, 1e-7f, 3, 2, 1, -1, 0, 0.333333f, 7, 8, 9;
  const EmbeddingTable t({"p00", "p01", "p02", "p03"}, rows, false);
  SidAssignment a;
  a.sizes = {2, 2, 2};
  a.sids = {{"p00", {0, 0, 0}}, {"p01", {1, 0, 1}}, {"p02", {1, 1, 0}}, {"p03", {0, 1, 1}}};
  const auto path = std::filesystem::temp_directory_path() / "geosid_unit_export.tsv";
  export_embeddings(t, a, path);
  const auto back = read_exported_embeddings(path);
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back[i].poi_id == t.ids()[i]);
    CHECK(back[i].level1 == a.at(t.ids()[i]).front());
    CHECK(parse_sid(back[i].sid, 3) == a.at(t.ids()[i]));
    for (int j = 0; j < 3; ++j)
      CHECK(static_cast<float>(back[i].values[static_cast<std::size_t>(j)]) == rows(static_cast<Eigen::Index>(i), j));
  }
}
