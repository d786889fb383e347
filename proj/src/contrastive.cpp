#include "geosid/contrastive.hpp"

#include <algorithm>
#include <cmath>

namespace geosid {

void P2PTrainConfig::validate() const {
  if (!(tau > 0)) throw Error("contrastive.tau must be > 0");
  if (!(lr > 0)) throw Error("contrastive.lr must be > 0");
  if (epochs < 0) throw Error("contrastive.epochs must be >= 0");
  if (batch < 2) throw Error("contrastive.batch must be >= 2");
  if (n_extra < 0) throw Error("contrastive.n_extra must be >= 0");
}

namespace {

double dot(VecView a, VecView b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_dims(VecView anchor, VecView positive, const std::vector<VecView>& negatives, double tau) {
  if (!(tau > 0)) throw Error("nce: tau must be > 0");
  if (positive.size() != anchor.size()) throw Error("nce: dimension mismatch");
  for (const auto& n : negatives) {
    if (n.size() != anchor.size()) throw Error("nce: dimension mismatch");
  }
}

/// Scores [pos, neg...] and their softmax.
void scores_and_weights(VecView anchor, VecView positive, const std::vector<VecView>& negatives, double tau,
                        std::vector<double>& scores, std::vector<double>& weights, double& lse) {
  scores.resize(negatives.size() + 1);
  scores[0] = dot(anchor, positive) / tau;
  for (std::size_t k = 0; k < negatives.size(); ++k) scores[k + 1] = dot(anchor, negatives[k]) / tau;
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0;
  weights.resize(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) z += weights[k] = std::exp(scores[k] - m);
  for (auto& w : weights) w /= z;
  lse = m + std::log(z);
}

}  // namespace

double nce_loss(VecView anchor, VecView positive, const std::vector<VecView>& negatives, double tau) {
  check_dims(anchor, positive, negatives, tau);
  if (negatives.empty()) return 0.0;
  std::vector<double> scores, weights;
  double lse;
  scores_and_weights(anchor, positive, negatives, tau, scores, weights, lse);
  return std::max(0.0, lse - scores[0]);
}

NceGradients nce_grad(VecView anchor, VecView positive, const std::vector<VecView>& negatives, double tau) {
  check_dims(anchor, positive, negatives, tau);
  const std::size_t d = anchor.size();
  NceGradients g;
  g.anchor.assign(d, 0.0);
  g.positive.assign(d, 0.0);
  g.negatives.assign(negatives.size(), std::vector<double>(d, 0.0));
  if (negatives.empty()) return g;
  std::vector<double> scores, w;
  double lse;
  scores_and_weights(anchor, positive, negatives, tau, scores, w, lse);
  for (std::size_t i = 0; i < d; ++i) {
    double mix = w[0] * positive[i];
    for (std::size_t k = 0; k < negatives.size(); ++k) mix += w[k + 1] * negatives[k][i];
    g.anchor[i] = (mix - positive[i]) / tau;
    g.positive[i] = (w[0] - 1.0) * anchor[i] / tau;
    for (std::size_t k = 0; k < negatives.size(); ++k) g.negatives[k][i] = w[k + 1] * anchor[i] / tau;
  }
  return g;
}

P2PResult train_p2p(const EmbeddingTable& table, const std::vector<CoVisitPair>& pairs, const P2PTrainConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw Error("train_p2p: empty pair list");
  struct Oriented {
    std::size_t anchor, positive;
  };
  std::vector<Oriented> entries;
  entries.reserve(pairs.size() * 2);
  for (const auto& p : pairs) {
    const auto a = table.index_of(p.i);
    const auto b = table.index_of(p.j);
    entries.push_back({a, b});
    entries.push_back({b, a});
  }
  P2PResult result{table, {}};
  if (cfg.epochs == 0) return result;
  if (cfg.n_extra == 0) {
    // In-batch negatives alone: a batch whose positives are all the anchor or its partner is degenerate.
    bool any = false;
    for (const auto& e : entries) {
      if (e.positive != entries[0].positive && e.positive != entries[0].anchor) any = true;
    }
    if (!any) throw Error("train_p2p: empty negative set");
  }
  if (table.size() < 3 && cfg.n_extra > 0) throw Error("train_p2p: empty negative set (need >= 3 POIs)");

  RowMatrix emb = table.rows().cast<double>();
  const auto n_rows = static_cast<std::uint64_t>(table.size());
  const auto d = static_cast<std::size_t>(emb.cols());
  Rng rng(cfg.seed);
  RowMatrix grad = RowMatrix::Zero(emb.rows(), emb.cols());
  std::vector<std::size_t> touched;
  std::vector<char> is_touched(table.size(), 0);

  auto view = [&](std::size_t r) { return VecView(emb.row(static_cast<Eigen::Index>(r)).data(), d); };
  auto add_grad = [&](std::size_t r, const std::vector<double>& g, double scale) {
    auto row = grad.row(static_cast<Eigen::Index>(r));
    for (std::size_t i = 0; i < d; ++i) row[static_cast<Eigen::Index>(i)] += scale * g[i];
    if (!is_touched[r]) {
      is_touched[r] = 1;
      touched.push_back(r);
    }
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(entries.begin(), entries.end());
    double epoch_loss = 0;
    std::size_t epoch_count = 0;
    for (std::size_t start = 0; start < entries.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(entries.size(), start + static_cast<std::size_t>(cfg.batch));
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t e = start; e < end; ++e) {
        const auto [a, p] = entries[e];
        std::vector<std::size_t> neg_rows;
        for (std::size_t o = start; o < end; ++o) {
          const auto cand = entries[o].positive;
          if (o == e || cand == a || cand == p) continue;
          if (std::find(neg_rows.begin(), neg_rows.end(), cand) == neg_rows.end()) neg_rows.push_back(cand);
        }
        for (int k = 0; k < cfg.n_extra; ++k) {
          std::size_t r;
          do {
            r = static_cast<std::size_t>(rng.below(n_rows));
          } while (r == a || r == p);
          neg_rows.push_back(r);
        }
        if (neg_rows.empty()) throw Error("train_p2p: empty negative set");
        std::vector<VecView> negs;
        negs.reserve(neg_rows.size());
        for (auto r : neg_rows) negs.push_back(view(r));
        epoch_loss += nce_loss(view(a), view(p), negs, cfg.tau);
        ++epoch_count;
        const auto g = nce_grad(view(a), view(p), negs, cfg.tau);
        add_grad(a, g.anchor, scale);
        add_grad(p, g.positive, scale);
        for (std::size_t k = 0; k < neg_rows.size(); ++k) add_grad(neg_rows[k], g.negatives[k], scale);
      }
      std::sort(touched.begin(), touched.end());
      for (auto r : touched) {
        const auto ri = static_cast<Eigen::Index>(r);
        emb.row(ri) -= cfg.lr * grad.row(ri);
        grad.row(ri).setZero();
        if (cfg.renormalize) {
          const double n = emb.row(ri).norm();
          if (n > 0) emb.row(ri) /= n;
        }
        is_touched[r] = 0;
      }
      touched.clear();
    }
    const double mean = epoch_loss / static_cast<double>(epoch_count);
    if (!std::isfinite(mean)) throw Error("train_p2p: non-finite loss at epoch " + std::to_string(epoch));
    result.loss_curve.push_back(mean);
  }
  result.table = EmbeddingTable(table.ids(), emb.cast<float>(), cfg.renormalize);
  return result;
}

}  // namespace geosid
