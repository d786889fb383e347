#include "geosid/beam.hpp"

#include <algorithm>
#include <cmath>

namespace geosid {

SidTrie SidTrie::build(const std::vector<Sid>& sids) {
  if (sids.empty()) throw Error("cannot build SID trie from an empty assignment");
  SidTrie t;
  t.depth_ = sids.front().size();
  t.nodes_.emplace_back();
  for (const auto& s : sids) {
    if (s.size() != t.depth_) throw Error("SID trie: mixed SID lengths");
    int node = 0;
    for (int c : s) {
      auto it = t.nodes_[static_cast<std::size_t>(node)].find(c);
      if (it == t.nodes_[static_cast<std::size_t>(node)].end()) {
        const int child = static_cast<int>(t.nodes_.size());
        t.nodes_[static_cast<std::size_t>(node)].emplace(c, child);
        t.nodes_.emplace_back();
        node = child;
      } else {
        node = it->second;
      }
    }
  }
  return t;
}

SidTrie SidTrie::build(const SidAssignment& sids) {
  std::vector<Sid> all;
  for (const auto& [id, s] : sids.sids) all.push_back(s);
  return build(all);
}

SidTrie SidTrie::build_prefixes(const SidAssignment& sids, std::size_t levels) {
  std::vector<Sid> all;
  for (const auto& [id, s] : sids.sids) all.emplace_back(s.begin(), s.begin() + static_cast<long>(std::min(levels, s.size())));
  return build(all);
}

SidTrie SidTrie::product(const std::vector<int>& sizes) {
  if (sizes.empty()) throw Error("SID trie: no levels");
  for (int s : sizes)
    if (s < 1) throw Error("SID trie: empty level");
  SidTrie t;
  t.depth_ = sizes.size();
  t.sizes_ = sizes;
  return t;
}

std::vector<int> SidTrie::children(std::span<const int> prefix) const {
  std::vector<int> out;
  if (prefix.size() >= depth_) return out;
  if (!sizes_.empty()) {
    for (std::size_t l = 0; l < prefix.size(); ++l)
      if (prefix[l] < 0 || prefix[l] >= sizes_[l]) return out;
    out.resize(static_cast<std::size_t>(sizes_[prefix.size()]));
    for (std::size_t q = 0; q < out.size(); ++q) out[q] = static_cast<int>(q);
    return out;
  }
  int node = 0;
  for (int c : prefix) {
    const auto& m = nodes_[static_cast<std::size_t>(node)];
    auto it = m.find(c);
    if (it == m.end()) return out;
    node = it->second;
  }
  for (const auto& [c, child] : nodes_[static_cast<std::size_t>(node)]) out.push_back(c);
  return out;
}

bool SidTrie::contains(std::span<const int> sid) const {
  if (sid.size() != depth_) return false;
  if (!sizes_.empty()) {
    for (std::size_t l = 0; l < sid.size(); ++l)
      if (sid[l] < 0 || sid[l] >= sizes_[l]) return false;
    return true;
  }
  int node = 0;
  for (int c : sid) {
    const auto& m = nodes_[static_cast<std::size_t>(node)];
    auto it = m.find(c);
    if (it == m.end()) return false;
    node = it->second;
  }
  return true;
}

std::size_t SidTrie::node_count() const {
  if (sizes_.empty()) return nodes_.size();
  std::size_t total = 1, width = 1;
  for (int s : sizes_) {
    width *= static_cast<std::size_t>(s);
    total += width;
  }
  return total;
}

std::size_t SidTrie::leaf_count() const {
  if (!sizes_.empty()) {
    std::size_t n = 1;
    for (int s : sizes_) n *= static_cast<std::size_t>(s);
    return n;
  }
  std::size_t n = 0;
  for (const auto& m : nodes_) n += m.empty() ? 1 : 0;
  return n;
}

std::vector<double> log_softmax(const Eigen::VectorXf& logits) {
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  double m = -INFINITY;
  for (Eigen::Index i = 0; i < logits.size(); ++i) m = std::max(m, static_cast<double>(logits(i)));
  double s = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) s += std::exp(static_cast<double>(logits(i)) - m);
  const double lse = m + std::log(s);
  for (Eigen::Index i = 0; i < logits.size(); ++i) out[static_cast<std::size_t>(i)] = logits(i) - lse;
  return out;
}

namespace {

struct Hyp {
  Sid prefix;
  double score = 0;
  int parent = -1;
};

bool better(const Hyp& a, const Hyp& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.prefix < b.prefix;
}

}  // namespace

BeamResult beam_search(const TinyDecoder& model, const Vocab& vocab, std::span<const int> prompt, int beam_width, int k,
                       const SidTrie& trie) {
  if (k < 1 || beam_width < k) throw Error("beam_search needs beam_width >= k >= 1");
  const std::size_t depth = trie.depth();
  if (static_cast<std::size_t>(model.config().max_seq) < prompt.size() + depth)
    throw Error("beam_search: prompt too long for max_seq");

  std::vector<Hyp> beams{Hyp{}};
  std::vector<DecoderState> states{model.start(prompt)};
  for (std::size_t level = 0; level < depth; ++level) {
    std::vector<Hyp> cand;
    for (std::size_t b = 0; b < beams.size(); ++b) {
      const auto lp = log_softmax(states[b].logits);
      for (int c : trie.children(beams[b].prefix)) {
        Hyp h{beams[b].prefix, beams[b].score, static_cast<int>(b)};
        h.prefix.push_back(c);
        h.score += lp[static_cast<std::size_t>(vocab.code_id(static_cast<int>(level), c))];
        cand.push_back(std::move(h));
      }
    }
    const std::size_t keep = std::min(cand.size(), static_cast<std::size_t>(beam_width));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(keep), cand.end(), better);
    cand.resize(keep);
    if (level + 1 < depth) {
      std::vector<DecoderState> next;
      next.reserve(keep);
      for (const auto& h : cand) {
        DecoderState s = states[static_cast<std::size_t>(h.parent)];
        model.step(s, vocab.code_id(static_cast<int>(level), h.prefix.back()));
        next.push_back(std::move(s));
      }
      states = std::move(next);
    }
    beams = std::move(cand);
  }
  BeamResult out;
  out.truncated = trie.leaf_count() < static_cast<std::size_t>(k);
  for (std::size_t i = 0; i < beams.size() && i < static_cast<std::size_t>(k); ++i)
    out.items.push_back({beams[i].prefix, beams[i].score});
  return out;
}

}  // namespace geosid
