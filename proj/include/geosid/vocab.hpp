#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "geosid/corpus.hpp"
#include "geosid/rqkmeans.hpp"

namespace geosid {

/// Closed token vocabulary: specials, template keywords, SID code tokens
/// (one block per level, plus a reserved block of dedup ordinals) and
/// attribute tokens harvested from the corpus.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;
  static constexpr int kMaskCtx = 4;
  static constexpr int kUnk = 5;

  /// Template keywords, always present.
  static constexpr const char* kTask = "[TASK]";
  static constexpr const char* kProfile = "[PROFILE]";
  static constexpr const char* kPoi = "[POI]";
  static constexpr const char* kIs = "[IS]";
  static constexpr const char* kLocated = "[LOCATED]";
  static constexpr const char* kWhat = "[WHAT]";
  static constexpr const char* kDescribe = "[DESCRIBE]";

  Vocab() = default;

  /// sizes/dedup_slots define the code blocks; attribute tokens come from
  /// featurize_poi, interaction contexts, actions and time buckets.
  static Vocab build(const Dataset& ds, const std::vector<int>& sizes, int dedup_slots);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(int id) const;

  int levels() const { return static_cast<int>(code_base_.size()); }
  const std::vector<int>& sizes() const { return sizes_; }
  int dedup_slots() const { return dedup_slots_; }

  /// Token id for code q at level (0-based); level == levels() addresses the dedup block.
  int code_id(int level, int q) const;
  /// (level, code) for a code token, nullopt otherwise.
  std::optional<std::pair<int, int>> decode_code(int id) const;
  std::vector<int> encode_sid(const Sid& sid) const;

  void save_json(const std::filesystem::path& path) const;
  static Vocab load_json(const std::filesystem::path& path);

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void add(const std::string& token);
  void index_codes();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::vector<int> code_base_;
  std::vector<int> sizes_;
  int dedup_base_ = -1;
  int dedup_slots_ = 0;
};

std::string hour_token(std::int64_t ts);
std::string weekday_token(std::int64_t ts);
std::string action_token(Action a);

}  // namespace geosid
