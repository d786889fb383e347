#include "geosid/emrefine.hpp"

#include <algorithm>
#include <fstream>

#include "geosid/beam.hpp"
#include "json.hpp"

namespace geosid {

ReassignOutcome reassign(const Sid& current, const std::vector<Sid>& candidates, Occupancy& taken) {
  if (candidates.empty()) throw Error("reassign: empty candidate list");
  auto is_free = [&](const Sid& s) {
    auto it = taken.find(s);
    return it == taken.end() || it->second == 0;
  };
  ReassignOutcome out{current, false};
  const bool listed = std::find(candidates.begin(), candidates.end(), current) != candidates.end();
  if (!(listed && is_free(current))) {
    auto it = std::find_if(candidates.begin(), candidates.end(), is_free);
    if (it == candidates.end())
      out.retained = true;
    else
      out.sid = *it;
  }
  ++taken[out.sid];
  return out;
}

std::vector<double> quantile_accuracy(const SidAssignment& p_new, const SidAssignment& p_old) {
  if (p_new.sids.size() != p_old.sids.size()) throw Error("quantile_accuracy: POI sets differ");
  const std::size_t L = p_new.sizes.size();
  if (L == 0 || p_old.sizes.size() != L) throw Error("quantile_accuracy: level counts differ");
  std::vector<double> acc(L, 0.0);
  for (const auto& [id, a] : p_new.sids) {
    auto it = p_old.sids.find(id);
    if (it == p_old.sids.end()) throw Error("quantile_accuracy: POI sets differ at " + id);
    const auto& b = it->second;
    for (std::size_t l = 0; l < L && a[l] == b[l]; ++l) acc[l] += 1;
  }
  for (auto& v : acc) v /= static_cast<double>(p_new.sids.size());
  return acc;
}

void EmConfig::validate() const {
  if (n_iters < 1) throw Error("em.n_iters must be >= 1");
  if (beam < 1) throw Error("em.beam must be >= 1");
  if (hitrate_k < 1) throw Error("em.hitrate_k must be >= 1");
  sft.validate();
}

namespace {

Sid codes_of(const Sid& s, std::size_t L) { return Sid(s.begin(), s.begin() + static_cast<long>(L)); }

}  // namespace

EmResult em_refine(const TinyDecoder& model0, const SidAssignment& sids0, const Dataset& ds, const Vocab& vocab,
                   const EmConfig& cfg) {
  cfg.validate();
  sids0.validate();
  const std::size_t L = sids0.sizes.size();
  const SidTrie trie = SidTrie::product(sids0.sizes);
  const int k = std::min<int>(cfg.beam, static_cast<int>(trie.leaf_count()));

  std::vector<std::size_t> valid_events;
  if (ds.has_split()) {
    valid_events = split_events(ds, SplitTag::kValid);
    if (cfg.hitrate_max_events > 0 && valid_events.size() > cfg.hitrate_max_events)
      valid_events.resize(cfg.hitrate_max_events);
  }

  EmResult res{sids0, model0, {}};
  for (int it = 1; it <= cfg.n_iters; ++it) {
    EmState st;
    st.iteration = it;
    const SidAssignment prev = res.assignment;

    auto examples = build_description_examples(ds, prev, vocab);
    if (cfg.mix_next_poi) {
      SftConfig sc;
      sc.history = cfg.history;
      auto nx = build_sft_dataset(ds, prev, vocab, sc, cfg.max_len);
      examples.insert(examples.end(), nx.examples.begin(), nx.examples.end());
    }
    TrainConfig tc = cfg.sft;
    tc.seed = splitmix64(cfg.sft.seed + static_cast<std::uint64_t>(it));
    if (tc.epochs > 0) st.loss_curve = train(res.model, examples, tc).loss_curve;

    // Candidate lists per POI, in POI id order.
    std::vector<std::string> ids;
    for (const auto& [id, p] : ds.pois()) ids.push_back(id);
    std::vector<BeamResult> beams(ids.size());
    const TinyDecoder& model = res.model;
    parallel_for(ids.size(), [&](std::size_t i) {
      beams[i] = beam_search(model, vocab, description_prompt(ds.poi(ids[i]), vocab), k, k, trie);
    });

    std::vector<std::size_t> order(ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (cfg.order == EmOrder::kConfidence) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return beams[a].items.front().log_prob > beams[b].items.front().log_prob;
      });
    }

    Occupancy taken;
    for (const auto& [id, s] : prev.sids) ++taken[codes_of(s, L)];
    SidAssignment next = prev;
    for (auto i : order) {
      const auto& id = ids[i];
      const Sid current = codes_of(prev.at(id), L);
      --taken[current];
      std::vector<Sid> cands;
      for (const auto& item : beams[i].items) cands.push_back(item.sid);
      const auto outcome = reassign(current, cands, taken);
      if (outcome.retained) ++st.retained;
      if (outcome.sid != current) {
        ++st.replaced;
        Sid full = outcome.sid;
        if (next.dedup) full.push_back(0);
        next.sids[id] = full;
      }
      if (cfg.keep_candidates) st.candidates[id] = std::move(cands);
    }
    if (next.dedup) assign_dedup_ordinals(next);
    if (next.dedup && next.max_dedup_ordinal() >= vocab.dedup_slots())
      throw Error("EM produced a dedup ordinal beyond the reserved vocabulary slots");
    next.validate();

    st.acc = quantile_accuracy(next, prev);
    res.assignment = next;
    if (!valid_events.empty()) {
      PredictConfig pc;
      pc.history = cfg.history;
      pc.beam_width = cfg.hitrate_k;
      pc.top_k = cfg.hitrate_k;
      pc.max_len = cfg.max_len;
      const auto preds = predict_next_pois(res.model, vocab, ds, next, valid_events, pc);
      st.hitrate = preds.empty() ? 0.0 : recall_at_k(preds, cfg.hitrate_k);
    }
    st.assignment = next;
    res.states.push_back(std::move(st));
  }
  return res;
}

void write_em_audit(const std::vector<EmState>& states, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& s : states) {
    nlohmann::ordered_json j;
    j["iteration"] = s.iteration;
    j["acc"] = s.acc;
    j["hitrate"] = s.hitrate;
    j["replaced_count"] = s.replaced;
    j["retained_count"] = s.retained;
    out << j.dump() << '\n';
  }
}

}  // namespace geosid
