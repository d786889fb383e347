#include "geosid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "geosid/geo.hpp"
#include "geosid/prompts.hpp"

namespace geosid {

void RankedPrediction::validate() const {
  if (ranked.empty()) throw Error("ranked prediction for " + target + " is empty");
  std::set<std::string> seen(ranked.begin(), ranked.end());
  if (seen.size() != ranked.size()) throw Error("ranked prediction for " + target + " has duplicates");
}

namespace {

// 1-based rank of the target, 0 when absent.
std::size_t rank_of(const RankedPrediction& p) {
  auto it = std::find(p.ranked.begin(), p.ranked.end(), p.target);
  return it == p.ranked.end() ? 0 : static_cast<std::size_t>(it - p.ranked.begin()) + 1;
}

void check_args(const std::vector<RankedPrediction>& preds, int k) {
  if (preds.empty()) throw Error("no predictions to score");
  if (k < 1) throw Error("K must be >= 1");
}

}  // namespace

double recall_at_k(const std::vector<RankedPrediction>& preds, int k) {
  check_args(preds, k);
  std::size_t hits = 0;
  for (const auto& p : preds) {
    const auto r = rank_of(p);
    if (r != 0 && r <= static_cast<std::size_t>(k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double ndcg_at_k(const std::vector<RankedPrediction>& preds, int k) {
  check_args(preds, k);
  double total = 0;
  for (const auto& p : preds) {
    const auto r = rank_of(p);
    if (r != 0 && r <= static_cast<std::size_t>(k)) total += 1.0 / std::log2(1.0 + static_cast<double>(r));
  }
  return total / static_cast<double>(preds.size());
}

CohesionReport cohesion(const SidAssignment& sids, const EmbeddingTable& table, const Dataset& ds) {
  CohesionReport rep;
  const int L = sids.levels();
  for (int l = 1; l <= L; ++l) {
    std::map<Sid, std::vector<std::string>> groups;
    for (const auto& [id, s] : sids.sids) groups[Sid(s.begin(), s.begin() + l)].push_back(id);
    CohesionLevel lvl;
    lvl.groups = groups.size();
    double sim_sum = 0, dist_sum = 0;
    for (const auto& [prefix, members] : groups) {
      const std::size_t n = members.size();
      if (n < 2) continue;
      std::vector<Eigen::VectorXd> vecs;
      std::vector<GeoPoint> pts;
      for (const auto& id : members) {
        vecs.push_back(table.row(id));
        pts.push_back(ds.poi(id).point());
      }
      double s = 0, d = 0;
      std::size_t pairs = 0;
      auto add = [&](std::size_t a, std::size_t b) {
        s += cosine(vecs[a], vecs[b]);
        d += haversine_km(pts[a], pts[b]);
        ++pairs;
      };
      if (n > kCohesionPairCap) {
        std::uint64_t seed = static_cast<std::uint64_t>(l);
        for (int c : prefix) seed = splitmix64(seed ^ static_cast<std::uint64_t>(c + 1));
        Rng rng(seed);
        while (pairs < kCohesionPairCap) {
          const auto a = rng.below(n), b = rng.below(n);
          if (a != b) add(a, b);
        }
      } else {
        for (std::size_t a = 0; a < n; ++a)
          for (std::size_t b = a + 1; b < n; ++b) add(a, b);
      }
      sim_sum += s / static_cast<double>(pairs);
      dist_sum += d / static_cast<double>(pairs);
      ++lvl.scored_groups;
    }
    if (lvl.scored_groups == 0) {
      lvl.similarity = lvl.distance_km = std::numeric_limits<double>::quiet_NaN();
    } else {
      lvl.similarity = sim_sum / static_cast<double>(lvl.scored_groups);
      lvl.distance_km = dist_sum / static_cast<double>(lvl.scored_groups);
    }
    rep.levels.push_back(lvl);
  }
  return rep;
}

std::vector<RankedPrediction> popularity_baseline(const Dataset& ds, int k) {
  if (k < 1) throw Error("K must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& [id, p] : ds.pois()) counts[id] = 0;
  for (std::size_t e = 0; e < ds.interactions().size(); ++e)
    if (ds.is_train(e)) ++counts[ds.interactions()[e].poi_id];
  std::vector<std::pair<std::string, std::size_t>> order(counts.begin(), counts.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> ranked;
  for (std::size_t i = 0; i < order.size() && i < static_cast<std::size_t>(k); ++i) ranked.push_back(order[i].first);
  std::vector<RankedPrediction> out;
  for (auto e : split_events(ds, SplitTag::kTest)) out.push_back({ds.interactions()[e].poi_id, ranked});
  return out;
}

void export_embeddings(const EmbeddingTable& table, const SidAssignment& sids, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "poi_id\tlevel1\tsid";
  for (int j = 0; j < table.dim(); ++j) out << "\tv" << j;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& id = table.ids()[i];
    const auto& s = sids.at(id);
    out << id << '\t' << s.front() << '\t' << sid_to_string(s, sids.levels());
    for (int j = 0; j < table.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(table.rows()(static_cast<Eigen::Index>(i), j)));
      out << '\t' << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<ExportedRow> read_exported_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<ExportedRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ExportedRow r;
    std::string field;
    std::getline(ls, r.poi_id, '\t');
    std::getline(ls, field, '\t');
    r.level1 = std::stoi(field);
    std::getline(ls, r.sid, '\t');
    while (std::getline(ls, field, '\t')) r.values.push_back(std::stod(field));
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<std::size_t> split_events(const Dataset& ds, SplitTag tag) {
  std::vector<std::size_t> out;
  if (!ds.has_split()) throw Error("dataset has no split tags");
  for (std::size_t e = 0; e < ds.split().size(); ++e)
    if (ds.split()[e] == tag) out.push_back(e);
  return out;
}

std::vector<RankedPrediction> predict_next_pois(const TinyDecoder& model, const Vocab& vocab, const Dataset& ds,
                                                const SidAssignment& sids, const std::vector<std::size_t>& events,
                                                const PredictConfig& cfg) {
  const std::size_t levels = cfg.levels == 0 ? sids.sid_length() : cfg.levels;
  const SidTrie trie = SidTrie::build_prefixes(sids, levels);
  std::map<Sid, std::vector<std::string>> by_prefix;
  for (const auto& [id, s] : sids.sids)
    by_prefix[Sid(s.begin(), s.begin() + static_cast<long>(std::min(levels, s.size())))].push_back(id);
  const auto profiles = user_profiles(ds);
  const int k = std::min<int>(cfg.top_k, static_cast<int>(trie.leaf_count()));
  const int width = std::max(cfg.beam_width, k);

  std::vector<std::optional<RankedPrediction>> slots(events.size());
  parallel_for(events.size(), [&](std::size_t i) {
    const auto e = events[i];
    const auto prompt = build_next_poi_prompt(ds, sids, vocab, profiles, e, cfg.history, cfg.max_len,
                                              static_cast<int>(levels));
    if (prompt.tokens.empty()) return;
    const auto beams = beam_search(model, vocab, prompt.tokens, width, k, trie);
    RankedPrediction p{ds.interactions()[e].poi_id, {}};
    for (const auto& item : beams.items) {
      for (const auto& id : by_prefix.at(item.sid)) {
        if (static_cast<int>(p.ranked.size()) < cfg.top_k) p.ranked.push_back(id);
      }
    }
    slots[i] = std::move(p);
  });
  std::vector<RankedPrediction> out;
  for (auto& s : slots)
    if (s) out.push_back(std::move(*s));
  return out;
}

}  // namespace geosid
