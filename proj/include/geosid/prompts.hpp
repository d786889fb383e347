#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "geosid/corpus.hpp"
#include "geosid/decoder.hpp"
#include "geosid/rqkmeans.hpp"
#include "geosid/vocab.hpp"

namespace geosid {

/// Summary of a user's train-split history: top-3 categories, top-3
/// geohash-5 cells and the modal hour bucket (ties broken by token text).
std::vector<std::string> user_profile(const Dataset& ds, const std::string& user_id);

/// Profiles for every user, computed once.
std::map<std::string, std::vector<std::string>> user_profiles(const Dataset& ds);

/// POI attribute tokens without the address words.
std::vector<std::string> poi_attribute_tokens(const Poi& p);

struct CptCounts {
  std::size_t trajectory = 0;
  std::size_t structured = 0;
  std::size_t description = 0;
  std::size_t qa = 0;
};

struct CptCorpus {
  std::vector<TrainingExample> examples;
  CptCounts counts;
  std::size_t truncated = 0;  // trajectories shortened to fit max_len
};

/// Four templates: user trajectory, structured alignment, description and QA.
/// Loss applies to every position but the first. max_len = 0 means no limit;
/// otherwise the oldest trajectory entries are dropped to fit.
CptCorpus build_cpt_corpus(const Dataset& ds, const SidAssignment& sids, const Vocab& vocab, std::uint64_t seed,
                           int max_len = 0);

struct SftConfig {
  int history = 32;  // most recent interactions rendered in the prompt
  int epochs = 10;
  double lr = 1e-3;
  int batch = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

struct NextPoiPrompt {
  std::vector<int> tokens;
  std::size_t history_rendered = 0;
};

/// Prompt for predicting the POI of event `event` from the user's earlier
/// events (any split). Returns nullopt-like empty tokens when the user has no
/// earlier event. History is rendered newest first; with max_len > 0 the oldest
/// entries are dropped until prompt + reserve tokens fit.
NextPoiPrompt build_next_poi_prompt(const Dataset& ds, const SidAssignment& sids, const Vocab& vocab,
                                    const std::map<std::string, std::vector<std::string>>& profiles,
                                    std::size_t event, int history, int max_len = 0, int reserve = 0);

struct SftDataset {
  std::vector<TrainingExample> examples;
  std::vector<std::size_t> events;  // source interaction per example
  std::size_t skipped_no_history = 0;
  std::size_t truncated = 0;
};

/// One example per train-split interaction that has an earlier interaction;
/// loss only on the target SID codes and EOS.
SftDataset build_sft_dataset(const Dataset& ds, const SidAssignment& sids, const Vocab& vocab, const SftConfig& cfg,
                             int max_len = 0);

/// [BOS, DESCRIBE, featurize tokens..., SEP]
std::vector<int> description_prompt(const Poi& p, const Vocab& vocab);

/// Description -> SID examples (response = first L codes + EOS).
std::vector<TrainingExample> build_description_examples(const Dataset& ds, const SidAssignment& sids,
                                                        const Vocab& vocab);

/// prompt + response with loss on the response only.
TrainingExample make_example(const std::vector<int>& prompt, const std::vector<int>& response);

}  // namespace geosid
