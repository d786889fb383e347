#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "geosid/corpus.hpp"

namespace geosid {

struct PairMiningConfig {
  int window = 5;        // co-occurrence reach, in trajectory positions
  int min_count = 2;
  double alpha = 1.0;    // Swing smoothing
  double max_km = 3.0;
  int top_k_per_poi = 0; // 0 keeps every surviving pair
  std::uint64_t seed = 0;

  void validate() const;
};

struct PairCount {
  std::string i;  // i < j
  std::string j;
  int count = 0;

  bool operator==(const PairCount&) const = default;
};

struct CoVisitPair {
  std::string i;
  std::string j;
  int co_count = 0;
  double swing = 0.0;
  double dist_km = 0.0;

  bool operator==(const CoVisitPair&) const = default;
};

/// Train-split visit sets in both directions.
struct UserItemIndex {
  std::map<std::string, std::set<std::string>> items_of_user;
  std::map<std::string, std::set<std::string>> users_of_item;
};

UserItemIndex build_user_item_index(const Dataset& ds);

/// Unordered POI pairs within `window` positions of each other in a user's
/// train-split trajectory, counted once per occurrence. Sorted by (i, j).
std::vector<PairCount> mine_covisits(const Dataset& ds, const PairMiningConfig& cfg);

/// Swing: sum over distinct user pairs {u, v} who both visited i and j of
/// 1 / (alpha + |I_u ∩ I_v|).
double swing_score(const std::string& i, const std::string& j, const UserItemIndex& index, double alpha);

/// Attach swing and distance, keep pairs with dist <= max_km and swing > 0,
/// order by swing descending then (i, j).
std::vector<CoVisitPair> filter_pairs(const std::vector<PairCount>& pairs, const Dataset& ds,
                                      const PairMiningConfig& cfg);

void save_pairs_tsv(const std::vector<CoVisitPair>& pairs, const std::filesystem::path& path);
std::vector<CoVisitPair> load_pairs_tsv(const std::filesystem::path& path);

}  // namespace geosid
