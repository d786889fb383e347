#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "geosid/embed.hpp"

using namespace geosid;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const auto d = fs::temp_directory_path() / "geosid_unit_embed";
  fs::create_directories(d);
  return d / name;
}

double cos_f(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  return cosine(Eigen::VectorXd(a.cast<double>()), Eigen::VectorXd(b.cast<double>()));
}

}  // namespace

TEST_CASE("hash_embed rows are unit norm and deterministic") {
  auto pois = fx::grid_pois(6);
  pois[1].name = pois[0].name;
  pois[1].address = pois[0].address;
  pois[1].lat = pois[0].lat;
  pois[1].lon = pois[0].lon;
  const auto ds = fx::sequences(pois, {{"u", {"p00", "p01"}}});
  const auto t = hash_embed(ds, 32, 11);
  CHECK(t.normalized());
  for (std::size_t i = 0; i < t.size(); ++i)
    CHECK(t.rows().row(static_cast<Eigen::Index>(i)).norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(t.row("p00") == t.row("p01"));
  CHECK(hash_embed(ds, 32, 11) == t);
  CHECK_THROWS_AS(hash_embed(ds, 4, 11), Error);
}

TEST_CASE("single token hashes to a signed one-hot") {
  const auto v = hash_tokens({"CAT:Bar"}, 16, 3);
  int nonzero = 0;
  for (int i = 0; i < 16; ++i) nonzero += v(i) != 0.0f;
  CHECK(nonzero == 1);
  CHECK(v.norm() == doctest::Approx(1.0));
}

TEST_CASE("shared tokens raise cosine") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::vector<std::string> a{"t1", "t2", "t3", "t4", "t5"};
    const std::vector<std::string> b{"t1", "t2", "t3", "t4", "x5"};
    const std::vector<std::string> c{"y1", "y2", "y3", "y4", "y5"};
    const auto va = hash_tokens(a, 64, seed), vb = hash_tokens(b, 64, seed), vc = hash_tokens(c, 64, seed);
    wins += cos_f(va, vb) > cos_f(va, vc);
  }
  CHECK(wins == 100);
}

TEST_CASE("hash_embed is invariant to POI order") {
  auto pois = fx::grid_pois(8);
  const auto ds1 = fx::sequences(pois, {{"u", {"p00"}}});
  std::reverse(pois.begin(), pois.end());
  const auto ds2 = fx::sequences(pois, {{"u", {"p00"}}});
  CHECK(hash_embed(ds1, 16, 2) == hash_embed(ds2, 16, 2));
}

TEST_CASE("GEMB round trip and errors") {
  const auto ds = fx::sequences(fx::grid_pois(2), {{"u", {"p00"}}});
  RowMatrixF rows(2, 4);
  rows << 1, 2, 3, 4, -1, 0.5f, 0, 2;
  const EmbeddingTable t({"p00", "p01"}, rows, false);
  const auto path = temp_file("t.bin");
  save_embeddings(t, path);
  const auto back = load_embeddings(path, ds);
  CHECK(back == t);
  CHECK(back.size() == 2);
  CHECK_FALSE(back.normalized());

  const auto ds3 = fx::sequences(fx::grid_pois(3), {{"u", {"p00"}}});
  try {
    load_embeddings(path, ds3);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("p02") != std::string::npos);
  }

  const auto bad = temp_file("bad.bin");
  std::ofstream(bad, std::ios::binary) << "NOPE0000000000000";
  CHECK_THROWS_WITH_AS(read_embeddings(bad), doctest::Contains("magic"), Error);

  // Chop the last value off: the row no longer matches the header dim.
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const auto cut = temp_file("cut.bin");
  std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() - 4);
  CHECK_THROWS_WITH_AS(read_embeddings(cut), doctest::Contains("dim mismatch"), Error);
}

TEST_CASE("cosine") {
  const Eigen::VectorXd a = Eigen::VectorXd::Random(5);
  CHECK(cosine(a, a) == doctest::Approx(1.0));
  CHECK(cosine(a, Eigen::VectorXd(-a)) == doctest::Approx(-1.0));
  CHECK(cosine(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)) == 0.0);
  CHECK_THROWS_AS(cosine(Eigen::Vector2d(0, 0), Eigen::Vector2d(0, 1)), Error);
  CHECK_THROWS_AS(cosine(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(3)), Error);
}

TEST_CASE("normalization is idempotent") {
  RowMatrixF rows(2, 3);
  rows << 3, 4, 0, 1, 1, 1;
  const EmbeddingTable t({"a", "b"}, rows, false);
  const auto once = t.normalized_copy();
  const auto twice = once.normalized_copy();
  CHECK((once.rows() - twice.rows()).cwiseAbs().maxCoeff() <= 1e-7f);
}
