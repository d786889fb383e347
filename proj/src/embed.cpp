#include "geosid/embed.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace geosid {

static_assert(std::endian::native == std::endian::little, "GEMB I/O assumes a little-endian host");

EmbeddingTable::EmbeddingTable(std::vector<std::string> ids, RowMatrixF rows, bool normalized)
    : ids_(std::move(ids)), rows_(std::move(rows)), normalized_(normalized) {
  if (static_cast<Eigen::Index>(ids_.size()) != rows_.rows()) throw Error("embedding ids/rows size mismatch");
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) throw Error("duplicate embedding id " + ids_[i]);
  }
}

std::size_t EmbeddingTable::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error("no embedding for POI " + id);
  return it->second;
}

Eigen::VectorXd EmbeddingTable::row(const std::string& id) const {
  return rows_.row(static_cast<Eigen::Index>(index_of(id))).transpose().cast<double>();
}

EmbeddingTable EmbeddingTable::normalized_copy() const {
  RowMatrixF out = rows_;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).cast<double>().norm();
    if (n == 0.0) throw Error("cannot normalize zero embedding for " + ids_[static_cast<std::size_t>(i)]);
    out.row(i) = (out.row(i).cast<double>() / n).cast<float>();
  }
  return EmbeddingTable(ids_, std::move(out), true);
}

std::uint64_t token_hash(const std::string& token, std::uint64_t seed) {
  return splitmix64(fnv1a64(token) ^ splitmix64(seed));
}

Eigen::VectorXf hash_tokens(const std::vector<std::string>& tokens, int dim, std::uint64_t seed) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
  for (const auto& t : tokens) {
    const auto h = token_hash(t, seed);
    const auto idx = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim));
    acc[idx] += (h >> 63) ? -1.0 : 1.0;
  }
  const double n = acc.norm();
  if (n > 0) acc /= n;
  return acc.cast<float>();
}

EmbeddingTable hash_embed(const Dataset& ds, int dim, std::uint64_t seed) {
  if (dim < 8) throw Error("embedding dim must be >= 8");
  std::vector<std::string> ids;
  std::vector<const Poi*> pois;
  for (const auto& [id, p] : ds.pois()) {
    ids.push_back(id);
    pois.push_back(&p);
  }
  RowMatrixF rows(static_cast<Eigen::Index>(ids.size()), dim);
  parallel_for(pois.size(), [&](std::size_t i) {
    auto v = hash_tokens(featurize_poi(*pois[i]), dim, seed);
    if (v.norm() == 0.0f) {
      // Every token cancelled out; fall back to the POI id so the row is usable.
      v = hash_tokens({"ID:" + pois[i]->id}, dim, seed);
    }
    rows.row(static_cast<Eigen::Index>(i)) = v.transpose();
  });
  return EmbeddingTable(std::move(ids), std::move(rows), true);
}

namespace {

constexpr char kMagic[4] = {'G', 'E', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("truncated embedding file reading " + what);
  return v;
}

}  // namespace

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(table.size()));
  put<std::uint8_t>(out, table.normalized() ? 1 : 0);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& id = table.ids()[i];
    if (id.size() > 0xFFFF) throw Error("POI id too long for GEMB: " + id);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    out.write(reinterpret_cast<const char*>(table.rows().row(static_cast<Eigen::Index>(i)).data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(table.dim())));
  }
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw Error("embedding file magic mismatch");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kVersion) throw Error("unsupported embedding version " + std::to_string(version));
  const auto dim = get<std::uint32_t>(in, "dim");
  const auto count = get<std::uint32_t>(in, "count");
  const auto flag = get<std::uint8_t>(in, "normalized flag");
  if (dim == 0) throw Error("embedding dim mismatch: zero");
  std::vector<std::string> ids(count);
  RowMatrixF rows(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint16_t>(in, "id length");
    ids[i].resize(len);
    if (!in.read(ids[i].data(), len)) throw Error("truncated embedding file reading id");
    if (!in.read(reinterpret_cast<char*>(rows.row(i).data()), static_cast<std::streamsize>(sizeof(float) * dim)))
      throw Error("embedding dim mismatch: row " + ids[i] + " is truncated");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error("embedding dim mismatch: trailing bytes after last row");
  return EmbeddingTable(std::move(ids), std::move(rows), flag != 0);
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, const Dataset& ds) {
  const EmbeddingTable all = read_embeddings(path);
  std::vector<std::string> missing;
  std::vector<std::string> ids;
  for (const auto& [id, p] : ds.pois()) {
    if (all.contains(id)) {
      ids.push_back(id);
    } else {
      missing.push_back(id);
    }
  }
  if (!missing.empty()) {
    std::string msg = "embeddings missing POI ids:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw Error(msg);
  }
  RowMatrixF rows(static_cast<Eigen::Index>(ids.size()), all.dim());
  for (std::size_t i = 0; i < ids.size(); ++i)
    rows.row(static_cast<Eigen::Index>(i)) = all.rows().row(static_cast<Eigen::Index>(all.index_of(ids[i])));
  return EmbeddingTable(std::move(ids), std::move(rows), all.normalized());
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error("cosine: zero-norm input");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return cosine(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

}  // namespace geosid
