#pragma once

#include <map>
#include <span>
#include <vector>

#include "geosid/decoder.hpp"
#include "geosid/rqkmeans.hpp"
#include "geosid/vocab.hpp"

namespace geosid {

/// Prefix tree of valid SIDs. Either explicit (built from an assignment) or
/// the full product of per-level code ranges.
class SidTrie {
 public:
  static SidTrie build(const SidAssignment& sids);
  static SidTrie build(const std::vector<Sid>& sids);
  /// Keep only the first `levels` codes of every SID.
  static SidTrie build_prefixes(const SidAssignment& sids, std::size_t levels);
  static SidTrie product(const std::vector<int>& sizes);

  std::size_t depth() const { return depth_; }
  /// Allowed next codes after prefix, ascending.
  std::vector<int> children(std::span<const int> prefix) const;
  bool contains(std::span<const int> sid) const;
  std::size_t node_count() const;
  std::size_t leaf_count() const;

 private:
  std::size_t depth_ = 0;
  std::vector<int> sizes_;                   // product mode when non-empty
  std::vector<std::map<int, int>> nodes_;    // explicit mode: code -> child node
};

struct ScoredSid {
  Sid sid;
  double log_prob = 0;
};

struct BeamResult {
  std::vector<ScoredSid> items;  // sorted by score desc, then code order
  bool truncated = false;        // fewer valid SIDs than requested
};

/// Log-softmax of the last logits in double precision.
std::vector<double> log_softmax(const Eigen::VectorXf& logits);

/// Trie-constrained beam search: the score of a SID is the summed log-prob of
/// its code tokens given the prompt.
BeamResult beam_search(const TinyDecoder& model, const Vocab& vocab, std::span<const int> prompt, int beam_width, int k,
                       const SidTrie& trie);

}  // namespace geosid
