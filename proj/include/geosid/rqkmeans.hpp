#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "geosid/common.hpp"
#include "geosid/embed.hpp"

namespace geosid {

struct KMeansResult {
  RowMatrix centroids;             // k x d
  std::vector<int> assignments;    // nearest centroid per point
  std::vector<double> objective;   // SSE after each accepted assignment step
  std::vector<std::string> warnings;
};

/// Lloyd's algorithm with k-means++ seeding. k is clipped to the number of
/// distinct points (with a warning). Empty clusters take the point farthest
/// from its centroid. The returned assignment is the nearest-centroid
/// assignment for the returned centroids.
KMeansResult kmeans(const RowMatrix& points, int k, int max_iters, double tol, std::uint64_t seed);

struct Codebook {
  int level = 1;  // 1-based
  RowMatrix centroids;
};

/// argmin_k ||point - c_k||, lowest index on ties.
int assign_nearest(const Eigen::Ref<const Eigen::VectorXd>& point, const RowMatrix& centroids);
int assign_nearest(const Eigen::Ref<const Eigen::VectorXd>& point, const Codebook& cb);

struct RqConfig {
  int levels = 3;
  std::vector<int> sizes = {32, 64, 256};
  int kmeans_iters = 50;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  bool dedup = true;

  void validate() const;
};

/// Code list [q1, ..., qL] followed by the dedup ordinal when dedup is on.
using Sid = std::vector<int>;

struct SidAssignment {
  std::vector<int> sizes;  // per-level codebook size; levels == sizes.size()
  bool dedup = false;
  std::map<std::string, Sid> sids;
  std::vector<double> residual_norms;  // mean ||R^(l)|| for l = 1..L+1
  double collision_rate = 0.0;         // fraction of POIs sharing all L codes with another

  int levels() const { return static_cast<int>(sizes.size()); }
  std::size_t sid_length() const { return sizes.size() + (dedup ? 1 : 0); }
  int max_dedup_ordinal() const;

  /// SID -> POIs holding it, ids ascending.
  std::map<Sid, std::vector<std::string>> reverse() const;
  const Sid& at(const std::string& poi_id) const;

  /// Throws if a code is out of range or the length is wrong.
  void validate() const;

  bool operator==(const SidAssignment& o) const { return sizes == o.sizes && dedup == o.dedup && sids == o.sids; }
};

struct RqResult {
  std::vector<Codebook> codebooks;
  SidAssignment assignment;
  RowMatrix final_residuals;  // rows in table order
  std::vector<std::string> warnings;
};

RqResult rq_tokenize(const EmbeddingTable& table, const RqConfig& cfg);

/// Recomputes dedup ordinals from the first L codes: members of each code group
/// get 0, 1, 2, ... in POI id order.
void assign_dedup_ordinals(SidAssignment& a);

/// "<a_5><b_3><c_8>", with the dedup ordinal rendered as "<d_k>".
std::string sid_to_string(const Sid& sid, int levels);
Sid parse_sid(const std::string& text, int levels);

void save_sids_json(const std::vector<Codebook>& codebooks, const SidAssignment& a, const std::filesystem::path& path);

struct LoadedSids {
  std::vector<Codebook> codebooks;
  SidAssignment assignment;
};
LoadedSids load_sids_json(const std::filesystem::path& path);

}  // namespace geosid
