#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "geosid/contrastive.hpp"
#include "geosid/corpus.hpp"
#include "geosid/decoder.hpp"
#include "geosid/emrefine.hpp"
#include "geosid/pairs.hpp"
#include "geosid/prompts.hpp"
#include "geosid/rqkmeans.hpp"
#include "geosid/trainer.hpp"
#include "json.hpp"

namespace geosid {

struct PipelineConfig {
  struct Data {
    std::string source = "synth";  // synth | tsv
    SynthSpec synth;
    std::string tsv;
    SplitFractions split;
  } data;
  struct Embed {
    int dim = 64;
    std::uint64_t seed = 0;
    std::string external;  // GEMB file to use instead of hashing
  } embed;
  PairMiningConfig pairs;
  struct Contrastive {
    bool enabled = true;
    P2PTrainConfig train;
  } contrastive;
  RqConfig rq;
  int dedup_headroom = 8;  // extra dedup tokens reserved beyond the initial maximum
  DecoderConfig model;
  struct Cpt {
    bool enabled = true;
    TrainConfig train;
  } cpt;
  SftConfig sft;
  double sft_clip = 1.0;
  struct Em {
    bool enabled = true;
    EmConfig cfg;
  } em;
  struct Eval {
    std::vector<int> ks = {5, 10, 20};
    int beam_width = 20;
    int top_k = 20;
    std::size_t max_events = 0;  // 0 = whole test split
  } eval;
  std::string workdir;

  /// Parsed source document (used for per-stage config hashes).
  nlohmann::json doc;

  static PipelineConfig parse(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);

  /// Hash of the whole configuration except the workdir.
  std::string hash() const;
};

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"ingest", "synth", "embed",   "pairs",   "contrast", "tokenize",
                                                 "cpt",    "sft",   "em",      "predict", "eval",     "bench"};
  return names;
}

struct StageReport {
  std::string stage;
  bool ran = false;     // false: inputs and config unchanged, skipped
  bool skipped_disabled = false;
  double seconds = 0;
};

/// Runs one stage in workdir. Throws Error on missing artifacts or bad config.
StageReport run_stage(const std::string& stage, const PipelineConfig& cfg, const std::filesystem::path& workdir,
                      bool force);

/// Every stage in dependency order (data source stage first).
std::vector<StageReport> run_all(const PipelineConfig& cfg, const std::filesystem::path& workdir, bool force);

/// Full run plus the w/o-CPT, w/o-EM and w/o-contrastive ablations; writes
/// bench_metrics.json in workdir.
std::vector<StageReport> run_bench(const PipelineConfig& cfg, const std::filesystem::path& workdir, bool force);

}  // namespace geosid
