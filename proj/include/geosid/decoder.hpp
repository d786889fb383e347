#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "geosid/common.hpp"

namespace geosid {

/// One token sequence with a per-position loss flag. loss_mask[t] marks
/// tokens[t] as a prediction target (conditioned on tokens[0..t)).
struct TrainingExample {
  std::vector<int> tokens;
  std::vector<bool> loss_mask;

  void validate() const;
};

enum class Stage : std::uint8_t { kBase = 0, kCpt = 1, kSft = 2 };

struct DecoderConfig {
  int vocab = 0;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int max_seq = 160;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Key/value cache of a processed prompt, shared read-only between beams.
struct PromptCache {
  std::vector<RowMatrixF> keys;    // per layer, len x d_model
  std::vector<RowMatrixF> values;
  int length = 0;
};

/// Decoding state: a shared prompt cache plus the tokens appended after it.
struct DecoderState {
  std::shared_ptr<const PromptCache> prompt;
  std::vector<RowMatrixF> keys;    // per layer, suffix rows
  std::vector<RowMatrixF> values;
  int length = 0;                  // prompt + suffix
  Eigen::VectorXf logits;          // next-token logits after the last token
};

/// Pre-LayerNorm causal transformer decoder with learned positions and an
/// output projection tied to the token embeddings.
///
/// Parameter traversal order (also the checkpoint order):
///   token_embedding[V x d], position_embedding[max_seq x d],
///   per layer: ln1_gain[d], ln1_bias[d], qkv_weight[d x 3d], qkv_bias[3d],
///              out_weight[d x d], out_bias[d], ln2_gain[d], ln2_bias[d],
///              ff1_weight[d x 4d], ff1_bias[4d], ff2_weight[4d x d], ff2_bias[d],
///   final_gain[d], final_bias[d].
/// Matrices are row-major with the input dimension first (y = x W + b).
class TinyDecoder {
 public:
  explicit TinyDecoder(const DecoderConfig& cfg);

  const DecoderConfig& config() const { return cfg_; }
  Stage stage() const { return stage_; }
  void set_stage(Stage s) { stage_ = s; }

  std::size_t parameter_count() const { return params_.size(); }
  std::span<float> parameters() { return params_; }
  std::span<const float> parameters() const { return params_; }

  /// Logits for every position (T x V).
  RowMatrixF logits(std::span<const int> tokens) const;

  /// Adds d(sum of masked NLL)/d(params) into grad; returns the summed NLL.
  /// The caller divides by the masked-token count.
  double accumulate_gradients(const TrainingExample& ex, std::span<float> grad) const;

  /// Processes a prompt; state.logits predicts the token after it.
  DecoderState start(std::span<const int> prompt) const;
  /// Appends one token; updates state.logits.
  void step(DecoderState& state, int token) const;

  void save(const std::filesystem::path& path) const;
  static TinyDecoder load(const std::filesystem::path& path);

  bool operator==(const TinyDecoder& o) const;

 private:
  struct LayerOffsets {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_1, b_1, w_2, b_2;
  };
  struct Forward;

  void layout();
  void init(std::uint64_t seed);
  void forward(std::span<const int> tokens, Forward& f) const;
  void check_tokens(std::span<const int> tokens) const;

  DecoderConfig cfg_;
  Stage stage_ = Stage::kBase;
  AlignedFloats params_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0;
  std::vector<LayerOffsets> layers_;
};

}  // namespace geosid
