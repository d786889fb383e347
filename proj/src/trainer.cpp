#include "geosid/trainer.hpp"

#include <cmath>
#include <numeric>

namespace geosid {

double nll_loss(const RowMatrix& logits, std::span<const int> targets, const std::vector<bool>& mask) {
  const auto T = static_cast<std::size_t>(logits.rows());
  if (targets.size() != T || mask.size() != T) throw Error("nll_loss: shape mismatch");
  double total = 0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (!mask[t]) continue;
    const int y = targets[t];
    if (y < 0 || y >= logits.cols()) throw Error("nll_loss: target out of range");
    const auto row = logits.row(static_cast<Eigen::Index>(t));
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(y);
    ++n;
  }
  if (n == 0) throw Error("nll_loss: mask has no true position");
  return std::max(0.0, total / static_cast<double>(n));
}

void TrainConfig::validate() const {
  if (epochs < 0) throw Error("epochs must be >= 0");
  if (!(lr > 0)) throw Error("lr must be > 0");
  if (batch < 1) throw Error("batch must be >= 1");
  if (!(clip > 0)) throw Error("clip must be > 0");
}

TrainResult train(TinyDecoder& model, const std::vector<TrainingExample>& examples, const TrainConfig& cfg,
                  const EpochHook& hook) {
  cfg.validate();
  if (examples.empty()) throw Error("train: empty example list");
  for (const auto& ex : examples) ex.validate();

  const std::size_t P = model.parameter_count();
  AlignedFloats grad(P);
  std::vector<float> m(P, 0.0f), v(P, 0.0f);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step = 0;
  auto params = model.parameters();

  TrainResult out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_nll = 0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      std::fill(grad.begin(), grad.end(), 0.0f);
      std::size_t tokens = 0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = examples[order[i]];
        epoch_nll += model.accumulate_gradients(ex, grad);
        tokens += static_cast<std::size_t>(std::count(ex.loss_mask.begin(), ex.loss_mask.end(), true));
      }
      epoch_tokens += tokens;
      const double inv = 1.0 / static_cast<double>(tokens);
      double norm2 = 0;
      for (float g : grad) norm2 += (g * inv) * (g * inv);
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) throw Error("train: non-finite gradient");
      const double scale = inv * (norm > cfg.clip ? cfg.clip / norm : 1.0);

      ++step;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      const double lr_t = cfg.lr * std::sqrt(c2) / c1;
      for (std::size_t k = 0; k < P; ++k) {
        const double g = grad[k] * scale;
        m[k] = static_cast<float>(b1 * m[k] + (1 - b1) * g);
        v[k] = static_cast<float>(b2 * v[k] + (1 - b2) * g * g);
        params[k] -= static_cast<float>(lr_t * m[k] / (std::sqrt(static_cast<double>(v[k])) + eps));
      }
    }
    const double loss = epoch_nll / static_cast<double>(epoch_tokens);
    if (!std::isfinite(loss)) throw Error("train: non-finite loss");
    out.loss_curve.push_back(loss);
    if (hook && !hook(epoch, loss)) break;
  }
  return out;
}

}  // namespace geosid
