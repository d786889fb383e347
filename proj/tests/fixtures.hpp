// Small datasets and brute-force oracles shared by unit and acceptance tests.
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "geosid/beam.hpp"
#include "geosid/corpus.hpp"
#include "geosid/decoder.hpp"
#include "geosid/pairs.hpp"
#include "geosid/vocab.hpp"

namespace fx {

using namespace geosid;

inline Poi poi(const std::string& id, double lat, double lon, const std::string& cat = "Cafe",
               const std::string& name = "") {
  Poi p;
  p.id = id;
  p.lat = lat;
  p.lon = lon;
  p.category = cat;
  p.name = name.empty() ? id : name;
  p.address = "street " + id;
  return p;
}

inline Interaction visit(const std::string& user, const std::string& poi_id, std::int64_t ts) {
  Interaction r;
  r.user_id = user;
  r.poi_id = poi_id;
  r.timestamp = ts;
  return r;
}

/// POIs p00..p{n-1} laid out on a small grid near (40, -75).
inline std::vector<Poi> grid_pois(int n, double step_deg = 0.002) {
  std::vector<Poi> out;
  for (int i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "p%02d", i);
    out.push_back(poi(id, 40.0 + step_deg * (i % 4), -75.0 + step_deg * (i / 4)));
  }
  return out;
}

/// Each user's sequence becomes consecutive visits one hour apart; all train.
inline Dataset sequences(const std::vector<Poi>& pois, const std::map<std::string, std::vector<std::string>>& seqs) {
  std::vector<Interaction> rs;
  std::int64_t t = 1'600'000'000;
  for (const auto& [u, s] : seqs) {
    for (const auto& p : s) rs.push_back(visit(u, p, t += 3600));
  }
  Dataset ds = Dataset::build(pois, rs);
  return ds.with_split(std::vector<SplitTag>(ds.interactions().size(), SplitTag::kTrain));
}

/// Swing by direct definition: ordered enumeration of every user pair u < v,
/// recomputing both visit sets from the raw interactions.
inline double brute_swing(const Dataset& ds, const std::string& i, const std::string& j, double alpha) {
  std::map<std::string, std::set<std::string>> items;
  for (std::size_t e = 0; e < ds.interactions().size(); ++e) {
    if (!ds.is_train(e)) continue;
    items[ds.interactions()[e].user_id].insert(ds.interactions()[e].poi_id);
  }
  double s = 0;
  for (auto u = items.begin(); u != items.end(); ++u) {
    for (auto v = std::next(u); v != items.end(); ++v) {
      const auto& a = u->second;
      const auto& b = v->second;
      if (!(a.count(i) && a.count(j) && b.count(i) && b.count(j))) continue;
      int common = 0;
      for (const auto& x : a) common += b.count(x) ? 1 : 0;
      s += 1.0 / (alpha + common);
    }
  }
  return s;
}

/// Window co-occurrence counts by enumerating every position pair.
inline std::map<std::pair<std::string, std::string>, int> brute_covisits(const Dataset& ds, int window) {
  std::map<std::pair<std::string, std::string>, int> out;
  for (const auto& [u, traj] : ds.trajectories()) {
    std::vector<std::string> seq;
    for (auto e : traj.events)
      if (ds.is_train(e)) seq.push_back(ds.interactions()[e].poi_id);
    for (std::size_t a = 0; a < seq.size(); ++a)
      for (std::size_t b = 0; b < seq.size(); ++b) {
        if (b <= a || b - a > static_cast<std::size_t>(window) || seq[a] == seq[b]) continue;
        out[std::minmax(seq[a], seq[b])]++;
      }
  }
  return out;
}

/// Best 2-partition SSE over all 2^(n-1) splits with both sides non-empty.
inline double best_two_partition(const RowMatrix& x) {
  const int n = static_cast<int>(x.rows());
  double best = INFINITY;
  for (unsigned mask = 1; mask < (1u << (n - 1)); ++mask) {
    double sse = 0;
    for (int side = 0; side < 2; ++side) {
      Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(x.cols());
      int cnt = 0;
      for (int i = 0; i < n; ++i)
        if (((mask >> i) & 1u) == static_cast<unsigned>(side)) mean += x.row(i), ++cnt;
      if (cnt == 0) continue;
      mean /= cnt;
      for (int i = 0; i < n; ++i)
        if (((mask >> i) & 1u) == static_cast<unsigned>(side)) sse += (x.row(i) - mean).squaredNorm();
    }
    best = std::min(best, sse);
  }
  return best;
}

/// Scores every complete SID in the trie independently (fresh decoding state
/// per SID, no pruning) and sorts by score desc, then code order.
inline std::vector<ScoredSid> exhaustive_sids(const TinyDecoder& model, const Vocab& vocab,
                                              const std::vector<int>& prompt, const SidTrie& trie) {
  std::vector<ScoredSid> all;
  std::function<void(Sid)> walk = [&](Sid prefix) {
    if (prefix.size() == trie.depth()) {
      DecoderState st = model.start(prompt);
      double score = 0;
      for (std::size_t l = 0; l < prefix.size(); ++l) {
        const int tok = vocab.code_id(static_cast<int>(l), prefix[l]);
        score += log_softmax(st.logits)[static_cast<std::size_t>(tok)];
        if (l + 1 < prefix.size()) model.step(st, tok);
      }
      all.push_back({prefix, score});
      return;
    }
    for (int c : trie.children(prefix)) {
      Sid next = prefix;
      next.push_back(c);
      walk(next);
    }
  };
  walk({});
  std::sort(all.begin(), all.end(), [](const ScoredSid& a, const ScoredSid& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.sid < b.sid;
  });
  return all;
}

}  // namespace fx
