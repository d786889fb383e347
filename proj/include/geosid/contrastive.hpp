#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "geosid/embed.hpp"
#include "geosid/pairs.hpp"

namespace geosid {

struct P2PTrainConfig {
  double tau = 0.07;
  double lr = 0.05;
  int epochs = 30;
  int batch = 64;     // oriented positives per step
  int n_extra = 16;   // uniform random negatives added to the in-batch ones
  bool renormalize = true;
  std::uint64_t seed = 0;

  void validate() const;
};

using VecView = std::span<const double>;

/// -log( exp(a.p/tau) / (exp(a.p/tau) + sum_k exp(a.n_k/tau)) ), max-shifted.
double nce_loss(VecView anchor, VecView positive, const std::vector<VecView>& negatives, double tau);

struct NceGradients {
  std::vector<double> anchor;
  std::vector<double> positive;
  std::vector<std::vector<double>> negatives;
};

/// Closed-form gradient of nce_loss with respect to every input vector.
NceGradients nce_grad(VecView anchor, VecView positive, const std::vector<VecView>& negatives, double tau);

struct P2PResult {
  EmbeddingTable table;
  std::vector<double> loss_curve;  // mean loss per epoch
};

/// Plain gradient descent on embedding rows. Every co-visit pair contributes
/// both orientations (i as anchor, j as anchor); negatives are the other
/// positives in the batch plus n_extra uniformly drawn POIs.
P2PResult train_p2p(const EmbeddingTable& table, const std::vector<CoVisitPair>& pairs, const P2PTrainConfig& cfg);

}  // namespace geosid
