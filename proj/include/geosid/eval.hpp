#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "geosid/beam.hpp"
#include "geosid/corpus.hpp"
#include "geosid/embed.hpp"
#include "geosid/rqkmeans.hpp"

namespace geosid {

struct RankedPrediction {
  std::string target;
  std::vector<std::string> ranked;  // deduplicated poi ids, best first

  void validate() const;
};

double recall_at_k(const std::vector<RankedPrediction>& preds, int k);
double ndcg_at_k(const std::vector<RankedPrediction>& preds, int k);

struct CohesionLevel {
  double similarity = 0;   // NaN when no group has two members
  double distance_km = 0;
  std::size_t groups = 0;         // distinct prefixes
  std::size_t scored_groups = 0;  // prefixes with >= 2 members
};

struct CohesionReport {
  std::vector<CohesionLevel> levels;  // index l-1 for prefix length l
};

inline constexpr std::size_t kCohesionPairCap = 200;

/// Mean pairwise cosine and haversine distance within each SID prefix group,
/// averaged over groups. Groups with more than kCohesionPairCap members are
/// scored on kCohesionPairCap sampled pairs (seed derived from the prefix).
CohesionReport cohesion(const SidAssignment& sids, const EmbeddingTable& table, const Dataset& ds);

/// Same ranking (train visit count desc, then id) for every test interaction.
std::vector<RankedPrediction> popularity_baseline(const Dataset& ds, int k);

/// poi_id, level-1 code, SID string, then the vector (9 significant digits).
void export_embeddings(const EmbeddingTable& table, const SidAssignment& sids, const std::filesystem::path& path);

struct ExportedRow {
  std::string poi_id;
  int level1 = 0;
  std::string sid;
  std::vector<double> values;
};
std::vector<ExportedRow> read_exported_embeddings(const std::filesystem::path& path);

struct PredictConfig {
  int history = 32;
  int beam_width = 20;
  int top_k = 20;
  int max_len = 0;
  /// SIDs are matched on their first `levels` codes; 0 means the full SID.
  std::size_t levels = 0;
};

/// Beam-searches the next POI for each listed event; events without earlier
/// history are skipped. Beam candidates map to POIs through the assignment.
std::vector<RankedPrediction> predict_next_pois(const TinyDecoder& model, const Vocab& vocab, const Dataset& ds,
                                                const SidAssignment& sids, const std::vector<std::size_t>& events,
                                                const PredictConfig& cfg);

/// Interaction indices carrying the given split tag, in canonical order.
std::vector<std::size_t> split_events(const Dataset& ds, SplitTag tag);

}  // namespace geosid
