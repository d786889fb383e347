#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "geosid/corpus.hpp"
#include "geosid/decoder.hpp"
#include "geosid/eval.hpp"
#include "geosid/prompts.hpp"
#include "geosid/rqkmeans.hpp"
#include "geosid/trainer.hpp"
#include "geosid/vocab.hpp"

namespace geosid {

/// Occupancy counts of code sequences during a reassignment pass.
using Occupancy = std::map<Sid, int>;

struct ReassignOutcome {
  Sid sid;
  bool retained = false;  // no free candidate; the current SID was kept
};

/// Keeps `current` when it is a candidate and free; otherwise takes the
/// highest-ranked free candidate; otherwise keeps `current` as a retention.
/// The chosen SID is added to `taken`.
ReassignOutcome reassign(const Sid& current, const std::vector<Sid>& candidates, Occupancy& taken);

/// Element l: fraction of POIs whose first l+1 codes agree.
std::vector<double> quantile_accuracy(const SidAssignment& p_new, const SidAssignment& p_old);

enum class EmOrder { kPoiId, kConfidence };

struct EmConfig {
  int n_iters = 3;
  int beam = 20;
  TrainConfig sft{5, 1e-3, 16, 0, 1.0};
  bool mix_next_poi = false;  // also train on next-POI examples
  int history = 32;
  int max_len = 0;
  EmOrder order = EmOrder::kPoiId;
  int hitrate_k = 10;
  std::size_t hitrate_max_events = 200;  // 0 = whole validation split
  bool keep_candidates = false;

  void validate() const;
};

struct EmState {
  int iteration = 0;
  SidAssignment assignment;
  std::vector<double> acc;
  double hitrate = 0;
  std::size_t replaced = 0;
  std::size_t retained = 0;
  std::vector<double> loss_curve;
  std::map<std::string, std::vector<Sid>> candidates;  // filled when keep_candidates
};

struct EmResult {
  SidAssignment assignment;
  TinyDecoder model;
  std::vector<EmState> states;
};

/// Alternates description -> SID fine-tuning with reassignment from the
/// model's beam candidates. Only the first L codes move; dedup ordinals are
/// recomputed after every pass.
EmResult em_refine(const TinyDecoder& model0, const SidAssignment& sids0, const Dataset& ds, const Vocab& vocab,
                   const EmConfig& cfg);

/// One JSON object per state: iteration, acc, hitrate, replaced_count, retained_count.
void write_em_audit(const std::vector<EmState>& states, const std::filesystem::path& path);

}  // namespace geosid
