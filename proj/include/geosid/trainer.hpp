#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "geosid/decoder.hpp"

namespace geosid {

/// Mean masked negative log-likelihood of targets under row-wise softmax.
double nll_loss(const RowMatrix& logits, std::span<const int> targets, const std::vector<bool>& mask);

struct TrainConfig {
  int epochs = 10;
  double lr = 1e-3;
  int batch = 16;
  std::uint64_t seed = 0;
  double clip = 1.0;  // global gradient-norm cap

  void validate() const;
};

struct TrainResult {
  std::vector<double> loss_curve;  // per epoch: summed NLL / masked tokens
};

/// Called after each epoch with (epoch, loss); return false to stop early.
using EpochHook = std::function<bool(int, double)>;

/// Mini-batch Adam on all parameters with a fixed learning rate. Deterministic
/// given cfg.seed.
TrainResult train(TinyDecoder& model, const std::vector<TrainingExample>& examples, const TrainConfig& cfg,
                  const EpochHook& hook = {});

}  // namespace geosid
