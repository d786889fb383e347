#include "geosid/pairs.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "geosid/common.hpp"

namespace geosid {

void PairMiningConfig::validate() const {
  if (window < 1) throw Error("pairs.window must be >= 1");
  if (min_count < 1) throw Error("pairs.min_count must be >= 1");
  if (alpha < 0) throw Error("pairs.alpha must be >= 0");
  if (!(max_km > 0)) throw Error("pairs.max_km must be > 0");
  if (top_k_per_poi < 0) throw Error("pairs.top_k_per_poi must be >= 0");
}

UserItemIndex build_user_item_index(const Dataset& ds) {
  UserItemIndex idx;
  for (std::size_t e = 0; e < ds.interactions().size(); ++e) {
    if (!ds.is_train(e)) continue;
    const auto& r = ds.interactions()[e];
    idx.items_of_user[r.user_id].insert(r.poi_id);
    idx.users_of_item[r.poi_id].insert(r.user_id);
  }
  return idx;
}

std::vector<PairCount> mine_covisits(const Dataset& ds, const PairMiningConfig& cfg) {
  cfg.validate();
  if (!ds.has_split()) throw Error("mine_covisits needs split tags");
  std::map<std::pair<std::string, std::string>, int> counts;
  bool any_train = false;
  for (const auto& [user, traj] : ds.trajectories()) {
    std::vector<const std::string*> seq;
    for (auto e : traj.events) {
      if (ds.is_train(e)) seq.push_back(&ds.interactions()[e].poi_id);
    }
    any_train = any_train || !seq.empty();
    for (std::size_t a = 0; a < seq.size(); ++a) {
      const std::size_t end = std::min(seq.size(), a + static_cast<std::size_t>(cfg.window) + 1);
      for (std::size_t b = a + 1; b < end; ++b) {
        const auto& x = *seq[a];
        const auto& y = *seq[b];
        if (x == y) continue;
        ++counts[x < y ? std::make_pair(x, y) : std::make_pair(y, x)];
      }
    }
  }
  if (!any_train) throw Error("mine_covisits: no train-split interactions");
  std::vector<PairCount> out;
  for (const auto& [key, c] : counts) {
    if (c >= cfg.min_count) out.push_back({key.first, key.second, c});
  }
  return out;
}

namespace {

std::size_t intersection_size(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::size_t n = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++n;
      ++ia;
      ++ib;
    }
  }
  return n;
}

std::vector<std::string> common_users(const std::string& i, const std::string& j, const UserItemIndex& index) {
  std::vector<std::string> out;
  auto fi = index.users_of_item.find(i);
  auto fj = index.users_of_item.find(j);
  if (fi == index.users_of_item.end() || fj == index.users_of_item.end()) return out;
  std::set_intersection(fi->second.begin(), fi->second.end(), fj->second.begin(), fj->second.end(),
                        std::back_inserter(out));
  return out;
}

double swing_over(const std::vector<std::string>& users, const UserItemIndex& index, double alpha,
                  std::map<std::pair<std::string, std::string>, std::size_t>* overlap_cache) {
  double s = 0.0;
  for (std::size_t a = 0; a < users.size(); ++a) {
    const auto& items_a = index.items_of_user.at(users[a]);
    for (std::size_t b = a + 1; b < users.size(); ++b) {
      std::size_t overlap;
      if (overlap_cache) {
        auto key = std::make_pair(users[a], users[b]);
        auto it = overlap_cache->find(key);
        if (it == overlap_cache->end())
          it = overlap_cache->emplace(key, intersection_size(items_a, index.items_of_user.at(users[b]))).first;
        overlap = it->second;
      } else {
        overlap = intersection_size(items_a, index.items_of_user.at(users[b]));
      }
      s += 1.0 / (alpha + static_cast<double>(overlap));
    }
  }
  return s;
}

}  // namespace

double swing_score(const std::string& i, const std::string& j, const UserItemIndex& index, double alpha) {
  if (alpha < 0) throw Error("swing alpha must be >= 0");
  // Summation order follows the sorted common-user list, so (i, j) and (j, i)
  // produce bit-identical sums.
  return swing_over(common_users(i, j, index), index, alpha, nullptr);
}

std::vector<CoVisitPair> filter_pairs(const std::vector<PairCount>& pairs, const Dataset& ds,
                                      const PairMiningConfig& cfg) {
  cfg.validate();
  const auto index = build_user_item_index(ds);
  std::map<std::pair<std::string, std::string>, std::size_t> overlap_cache;
  std::vector<CoVisitPair> out;
  for (const auto& pc : pairs) {
    const double d = haversine_km(ds.poi(pc.i).point(), ds.poi(pc.j).point());
    if (d > cfg.max_km) continue;
    const double s = swing_over(common_users(pc.i, pc.j, index), index, cfg.alpha, &overlap_cache);
    if (!(s > 0.0)) continue;
    out.push_back({pc.i, pc.j, pc.count, s, d});
  }
  std::sort(out.begin(), out.end(), [](const CoVisitPair& a, const CoVisitPair& b) {
    if (a.swing != b.swing) return a.swing > b.swing;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  if (cfg.top_k_per_poi > 0) {
    std::unordered_map<std::string, int> used;
    std::vector<CoVisitPair> capped;
    for (const auto& p : out) {
      if (used[p.i] >= cfg.top_k_per_poi || used[p.j] >= cfg.top_k_per_poi) continue;
      ++used[p.i];
      ++used[p.j];
      capped.push_back(p);
    }
    out = std::move(capped);
  }
  return out;
}

void save_pairs_tsv(const std::vector<CoVisitPair>& pairs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  char buf[128];
  for (const auto& p : pairs) {
    std::snprintf(buf, sizeof(buf), "\t%d\t%.6f\t%.3f\n", p.co_count, p.swing, p.dist_km);
    out << p.i << '\t' << p.j << buf;
  }
}

std::vector<CoVisitPair> load_pairs_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing artifact: " + path.filename().string());
  std::vector<CoVisitPair> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::istringstream row(line);
    CoVisitPair p;
    if (!std::getline(row, p.i, '\t') || !std::getline(row, p.j, '\t') || !(row >> p.co_count >> p.swing >> p.dist_km))
      throw Error(path.filename().string() + " line " + std::to_string(n) + ": malformed pair row");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace geosid
