#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "geosid/common.hpp"
#include "geosid/corpus.hpp"

namespace geosid {

/// One dense row per POI. Rows are ordered by POI id.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> ids, RowMatrixF rows, bool normalized);

  int dim() const { return static_cast<int>(rows_.cols()); }
  std::size_t size() const { return ids_.size(); }
  bool normalized() const { return normalized_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const RowMatrixF& rows() const { return rows_; }

  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  std::size_t index_of(const std::string& id) const;
  Eigen::VectorXd row(const std::string& id) const;

  /// Copy with every row scaled to unit L2 norm. Zero rows are an error.
  EmbeddingTable normalized_copy() const;

  bool operator==(const EmbeddingTable& o) const {
    return ids_ == o.ids_ && normalized_ == o.normalized_ && rows_ == o.rows_;
  }

 private:
  std::vector<std::string> ids_;
  std::map<std::string, std::size_t> index_;
  RowMatrixF rows_;
  bool normalized_ = false;
};

/// Seeded 64-bit hash of one feature token.
std::uint64_t token_hash(const std::string& token, std::uint64_t seed);

/// Signed feature hashing of featurize_poi tokens, L2-normalized.
EmbeddingTable hash_embed(const Dataset& ds, int dim, std::uint64_t seed);

/// Same construction for a raw token list; hash_embed applies it per POI.
Eigen::VectorXf hash_tokens(const std::vector<std::string>& tokens, int dim, std::uint64_t seed);

/// "GEMB" binary format; see README for the layout.
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable read_embeddings(const std::filesystem::path& path);

/// Reads a GEMB file and restricts it to the dataset's POIs. Every dataset
/// POI must be present.
EmbeddingTable load_embeddings(const std::filesystem::path& path, const Dataset& ds);

double cosine(std::span<const double> a, std::span<const double> b);
double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace geosid
