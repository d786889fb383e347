#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"
#include "geosid/rqkmeans.hpp"

using namespace geosid;

namespace {

RowMatrix random_points(Rng& rng, int n, int d) {
  RowMatrix x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
  return x;
}

double sse(const RowMatrix& x, const RowMatrix& c, const std::vector<int>& a) {
  double s = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) s += (x.row(i) - c.row(a[static_cast<std::size_t>(i)])).squaredNorm();
  return s;
}

EmbeddingTable table_from(const RowMatrix& x) {
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    char id[8];
    std::snprintf(id, sizeof(id), "p%03d", static_cast<int>(i));
    ids.push_back(id);
  }
  return EmbeddingTable(ids, x.cast<float>(), false);
}

}  // namespace

TEST_CASE("kmeans separable and exact cases") {
  RowMatrix x(2, 1);
  x << 0, 10;
  const auto r = kmeans(x, 2, 20, 1e-9, 1);
  std::vector<double> cs{r.centroids(0, 0), r.centroids(1, 0)};
  std::sort(cs.begin(), cs.end());
  CHECK(cs == std::vector<double>{0, 10});
  CHECK(r.objective.back() == 0.0);

  Rng rng(4);
  const auto y = random_points(rng, 7, 3);
  CHECK(kmeans(y, 7, 20, 1e-9, 2).objective.back() == doctest::Approx(0.0));

  RowMatrix dup(4, 1);
  dup << 1, 1, 2, 2;
  const auto clipped = kmeans(dup, 3, 10, 1e-9, 0);
  CHECK(clipped.centroids.rows() == 2);
  CHECK_FALSE(clipped.warnings.empty());

  CHECK_THROWS_AS(kmeans(RowMatrix(0, 2), 2, 10, 0, 0), Error);
  CHECK_THROWS_AS(kmeans(y, 0, 10, 0, 0), Error);
}

TEST_CASE("kmeans fixpoint, monotone curve and exhaustive optimum") {
  Rng rng(77);
  for (int t = 0; t < 200; ++t) {
    const int n = 2 + static_cast<int>(rng.below(11));
    const auto x = random_points(rng, n, 2);
    const auto r = kmeans(x, 2, 50, 1e-12, static_cast<std::uint64_t>(t));
    for (int i = 0; i < n; ++i) CHECK(assign_nearest(x.row(i).transpose(), r.centroids) == r.assignments[static_cast<std::size_t>(i)]);
    for (std::size_t k = 1; k < r.objective.size(); ++k) CHECK(r.objective[k] <= r.objective[k - 1]);
    CHECK(r.objective.back() == doctest::Approx(sse(x, r.centroids, r.assignments)).epsilon(1e-9));
    CHECK(r.objective.back() >= fx::best_two_partition(x) - 1e-9);
  }
}

TEST_CASE("kmeans is deterministic under a seed") {
  Rng rng(8);
  const auto x = random_points(rng, 50, 4);
  const auto a = kmeans(x, 5, 30, 1e-9, 3), b = kmeans(x, 5, 30, 1e-9, 3);
  CHECK(a.centroids == b.centroids);
  CHECK(a.assignments == b.assignments);
}

TEST_CASE("assign_nearest") {
  RowMatrix c(5, 2);
  c << 0, 0, 1, 0, 5, 5, 2, 2, -1, 0;
  CHECK(assign_nearest(Eigen::Vector2d(2, 2), c) == 3);
  RowMatrix tie(5, 2);
  tie << 5, 5, 1, 0, 9, 9, 7, 7, -1, 0;
  CHECK(assign_nearest(Eigen::Vector2d(0, 0), tie) == 1);
  RowMatrix c2(5, 1);
  c2 << 9, -1, 7, 3, 1;
  CHECK(assign_nearest(Eigen::VectorXd::Zero(1), c2) == 1);
  Rng rng(10);
  const auto cents = random_points(rng, 20, 3);
  for (int t = 0; t < 100; ++t) {
    const Eigen::VectorXd p = random_points(rng, 1, 3).row(0).transpose();
    int best = 0;
    for (int k = 1; k < 20; ++k)
      if ((cents.row(k).transpose() - p).norm() < (cents.row(best).transpose() - p).norm()) best = k;
    CHECK(assign_nearest(p, cents) == best);
  }
  CHECK_THROWS_AS(assign_nearest(Eigen::VectorXd::Zero(2), c2), Error);
}

TEST_CASE("rq_tokenize reconstruction identity and residual norms") {
  Rng rng(12);
  const auto x = random_points(rng, 120, 6);
  const auto table = table_from(x);
  RqConfig cfg;
  cfg.sizes = {4, 4, 8};
  cfg.seed = 5;
  const auto r = rq_tokenize(table, cfg);
  CHECK(r.assignment.residual_norms.size() == 4);
  for (std::size_t l = 1; l < r.assignment.residual_norms.size(); ++l)
    CHECK(r.assignment.residual_norms[l] <= r.assignment.residual_norms[l - 1]);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& sid = r.assignment.at(table.ids()[i]);
    Eigen::VectorXd rec = Eigen::VectorXd::Zero(6);
    for (int l = 0; l < 3; ++l) rec += r.codebooks[static_cast<std::size_t>(l)].centroids.row(sid[static_cast<std::size_t>(l)]).transpose();
    const Eigen::VectorXd e = table.rows().row(static_cast<Eigen::Index>(i)).cast<double>().transpose();
    const Eigen::VectorXd resid = r.final_residuals.row(static_cast<Eigen::Index>(i)).transpose();
    CHECK((e - rec - resid).norm() <= 1e-6 * (e.norm() + 1));
  }
  CHECK_NOTHROW(r.assignment.validate());
  CHECK(r.assignment.reverse().size() == table.size());
  const auto again = rq_tokenize(table, cfg);
  CHECK(again.assignment == r.assignment);
}

TEST_CASE("rq_tokenize exact quantization and collisions") {
  RowMatrix x(6, 2);
  x << 1, 0, 1, 0, 0, 1, 0, 1, -1, 0, -1, 0;
  RqConfig cfg;
  cfg.levels = 2;
  cfg.sizes = {3, 2};
  cfg.seed = 1;
  const auto r = rq_tokenize(table_from(x), cfg);
  CHECK(r.assignment.residual_norms[1] == doctest::Approx(0.0));
  const auto& a = r.assignment.at("p000");
  const auto& b = r.assignment.at("p001");
  CHECK(Sid(a.begin(), a.end() - 1) == Sid(b.begin(), b.end() - 1));
  CHECK(a.back() == 0);
  CHECK(b.back() == 1);
  CHECK(r.assignment.collision_rate == doctest::Approx(1.0));

  cfg.dedup = false;
  const auto nd = rq_tokenize(table_from(x), cfg);
  CHECK(nd.assignment.at("p000") == nd.assignment.at("p001"));
  CHECK(nd.assignment.sid_length() == 2);
}

TEST_CASE("sid strings") {
  CHECK(sid_to_string({0, 0, 0}, 3) == "<a_0><b_0><c_0>");
  CHECK(sid_to_string({5, 3, 8}, 3) == "<a_5><b_3><c_8>");
  CHECK(sid_to_string({5, 3, 8, 2}, 3) == "<a_5><b_3><c_8><d_2>");
  for (const auto& s : {"<a_5><b_3><c_8>", "<a_12><b_0><c_255><d_1>"}) CHECK(sid_to_string(parse_sid(s, 3), 3) == s);
  CHECK_THROWS_AS(parse_sid("<a_5><c_3>", 3), Error);
}

TEST_CASE("sids JSON round trip") {
  Rng rng(21);
  const auto table = table_from(random_points(rng, 30, 4));
  RqConfig cfg;
  cfg.sizes = {3, 3, 4};
  cfg.seed = 2;
  const auto r = rq_tokenize(table, cfg);
  const auto path = std::filesystem::temp_directory_path() / "geosid_unit_sids.json";
  save_sids_json(r.codebooks, r.assignment, path);
  const auto back = load_sids_json(path);
  CHECK(back.assignment == r.assignment);
  REQUIRE(back.codebooks.size() == 3);
  CHECK((back.codebooks[0].centroids - r.codebooks[0].centroids).cwiseAbs().maxCoeff() <= 1e-8);
}
