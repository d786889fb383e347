#include "geosid/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace geosid {

namespace {

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

std::vector<std::string> top_n(const std::map<std::string, int>& counts, std::size_t n) {
  std::vector<std::pair<std::string, int>> v(counts.begin(), counts.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size() && i < n; ++i) out.push_back(v[i].first);
  return out;
}

void append_ids(std::vector<int>& out, const std::vector<std::string>& tokens, const Vocab& vocab) {
  for (const auto& t : tokens) out.push_back(vocab.id(t));
}

std::vector<int> sid_codes(const Sid& sid, std::size_t levels, const Vocab& vocab) {
  return vocab.encode_sid(Sid(sid.begin(), sid.begin() + static_cast<long>(std::min(levels, sid.size()))));
}

std::vector<int> history_entry(const Interaction& r, const SidAssignment& sids, const Vocab& vocab) {
  std::vector<int> out{vocab.id(hour_token(r.timestamp)), vocab.id(action_token(r.action))};
  const auto codes = vocab.encode_sid(sids.at(r.poi_id));
  out.insert(out.end(), codes.begin(), codes.end());
  return out;
}

std::vector<std::string> context_tokens(const Interaction& r) {
  std::vector<std::string> out;
  const auto& c = r.context;
  bool any_query = false;
  if (c.query) {
    std::istringstream in(*c.query);
    std::string w;
    while (in >> w) {
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return std::tolower(ch); });
      out.push_back("Q:" + w);
      any_query = true;
    }
  }
  if (!any_query) out.push_back("<mask_ctx>");
  out.push_back(c.lat ? "LAT:" + coord_bucket(*c.lat) : "LAT:none");
  out.push_back(c.lon ? "LON:" + coord_bucket(*c.lon) : "LON:none");
  out.push_back(hour_token(r.timestamp));
  out.push_back(weekday_token(r.timestamp));
  out.push_back("WX:" + c.weather.value_or("none"));
  return out;
}

}  // namespace

std::vector<std::string> user_profile(const Dataset& ds, const std::string& user_id) {
  auto it = ds.trajectories().find(user_id);
  if (it == ds.trajectories().end()) return {};
  std::map<std::string, int> cats, cells, hours;
  for (auto e : it->second.events) {
    if (!ds.is_train(e)) continue;
    const auto& r = ds.interactions()[e];
    const auto& p = ds.poi(r.poi_id);
    if (!p.category.empty()) ++cats["CAT:" + p.category];
    ++cells["GEO:" + p.geohash.substr(0, 5)];
    ++hours[hour_token(r.timestamp)];
  }
  std::vector<std::string> out = top_n(cats, 3);
  for (auto& c : top_n(cells, 3)) out.push_back(std::move(c));
  for (auto& h : top_n(hours, 1)) out.push_back(std::move(h));
  return out;
}

std::map<std::string, std::vector<std::string>> user_profiles(const Dataset& ds) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [user, traj] : ds.trajectories()) out[user] = user_profile(ds, user);
  return out;
}

std::vector<std::string> poi_attribute_tokens(const Poi& p) {
  std::vector<std::string> out;
  for (auto& t : featurize_poi(p)) {
    if (!starts_with(t, "ADDR:")) out.push_back(std::move(t));
  }
  return out;
}

TrainingExample make_example(const std::vector<int>& prompt, const std::vector<int>& response) {
  TrainingExample ex;
  ex.tokens = prompt;
  ex.tokens.insert(ex.tokens.end(), response.begin(), response.end());
  ex.loss_mask.assign(ex.tokens.size(), false);
  std::fill(ex.loss_mask.begin() + static_cast<long>(prompt.size()), ex.loss_mask.end(), true);
  return ex;
}

namespace {

TrainingExample full_sequence(std::vector<int> tokens) {
  TrainingExample ex;
  ex.loss_mask.assign(tokens.size(), true);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i == 0 || tokens[i] == Vocab::kPad) ex.loss_mask[i] = false;
  }
  ex.tokens = std::move(tokens);
  return ex;
}

}  // namespace

CptCorpus build_cpt_corpus(const Dataset& ds, const SidAssignment& sids, const Vocab& vocab, std::uint64_t seed,
                           int max_len) {
  CptCorpus out;
  for (const auto& [id, p] : ds.pois()) {
    const auto codes = vocab.encode_sid(sids.at(id));
    const auto feats = featurize_poi(p);
    const auto attrs = poi_attribute_tokens(p);
    std::vector<std::string> name, cat, addr;
    for (const auto& t : feats) {
      if (starts_with(t, "NAME:")) name.push_back(t);
      if (starts_with(t, "CAT:")) cat.push_back(t);
      if (starts_with(t, "ADDR:")) addr.push_back(t);
    }
    // Structured alignment: <SID> : name, category, location.
    std::vector<int> t2{Vocab::kBos};
    t2.insert(t2.end(), codes.begin(), codes.end());
    t2.push_back(Vocab::kSep);
    append_ids(t2, name, vocab);
    append_ids(t2, cat, vocab);
    append_ids(t2, addr, vocab);
    t2.push_back(Vocab::kEos);
    // Description: POI <SID> is {attributes} located in {address}.
    std::vector<int> t3{Vocab::kBos, vocab.id(Vocab::kPoi)};
    t3.insert(t3.end(), codes.begin(), codes.end());
    t3.push_back(vocab.id(Vocab::kIs));
    append_ids(t3, attrs, vocab);
    t3.push_back(vocab.id(Vocab::kLocated));
    append_ids(t3, addr, vocab);
    t3.push_back(Vocab::kEos);
    // QA: What is <SID>? {attributes}.
    std::vector<int> t4{Vocab::kBos, vocab.id(Vocab::kWhat), vocab.id(Vocab::kIs)};
    t4.insert(t4.end(), codes.begin(), codes.end());
    t4.push_back(Vocab::kSep);
    append_ids(t4, attrs, vocab);
    t4.push_back(Vocab::kEos);
    for (auto* t : {&t2, &t3, &t4}) {
      if (max_len > 0 && static_cast<int>(t->size()) > max_len)
        throw Error("CPT template for POI " + id + " exceeds max_seq");
      out.examples.push_back(full_sequence(std::move(*t)));
    }
    ++out.counts.structured;
    ++out.counts.description;
    ++out.counts.qa;
  }

  for (const auto& [user, traj] : ds.trajectories()) {
    std::vector<std::size_t> train_events;
    for (auto e : traj.events) {
      if (!ds.has_split() || ds.is_train(e)) train_events.push_back(e);
    }
    if (train_events.size() < 2) continue;
    std::vector<int> head{Vocab::kBos, vocab.id(Vocab::kProfile)};
    append_ids(head, user_profile(ds, user), vocab);
    head.push_back(Vocab::kSep);
    // Chronological entries; drop the oldest ones if the sequence would not fit.
    std::vector<std::vector<int>> entries;
    for (auto e : train_events) entries.push_back(history_entry(ds.interactions()[e], sids, vocab));
    std::size_t first = 0;
    if (max_len > 0) {
      std::size_t total = head.size() + 1;
      for (const auto& en : entries) total += en.size();
      while (total > static_cast<std::size_t>(max_len) && first + 2 < entries.size()) total -= entries[first++].size();
      if (total > static_cast<std::size_t>(max_len)) throw Error("CPT trajectory for " + user + " exceeds max_seq");
      if (first > 0) ++out.truncated;
    }
    std::vector<int> t1 = head;
    for (std::size_t k = first; k < entries.size(); ++k) t1.insert(t1.end(), entries[k].begin(), entries[k].end());
    t1.push_back(Vocab::kEos);
    out.examples.push_back(full_sequence(std::move(t1)));
    ++out.counts.trajectory;
  }
  Rng rng(seed);
  rng.shuffle(out.examples.begin(), out.examples.end());
  return out;
}

void SftConfig::validate() const {
  if (history < 1) throw Error("sft.history must be >= 1");
  if (epochs < 0) throw Error("sft.epochs must be >= 0");
  if (!(lr > 0)) throw Error("sft.lr must be > 0");
  if (batch < 1) throw Error("sft.batch must be >= 1");
}

NextPoiPrompt build_next_poi_prompt(const Dataset& ds, const SidAssignment& sids, const Vocab& vocab,
                                    const std::map<std::string, std::vector<std::string>>& profiles,
                                    std::size_t event, int history, int max_len, int reserve) {
  const auto& target = ds.interactions().at(event);
  const auto& traj = ds.trajectories().at(target.user_id);
  const auto pos = static_cast<std::size_t>(std::find(traj.events.begin(), traj.events.end(), event) - traj.events.begin());
  NextPoiPrompt out;
  if (pos == 0) return out;

  std::vector<int> head{Vocab::kBos, vocab.id(Vocab::kTask), Vocab::kSep};
  auto prof = profiles.find(target.user_id);
  if (prof != profiles.end()) append_ids(head, prof->second, vocab);
  head.push_back(Vocab::kSep);
  std::vector<int> tail{Vocab::kSep};
  append_ids(tail, context_tokens(target), vocab);
  tail.push_back(Vocab::kSep);

  // Newest first.
  std::vector<std::vector<int>> entries;
  for (std::size_t k = pos; k-- > 0 && static_cast<int>(entries.size()) < history;)
    entries.push_back(history_entry(ds.interactions()[traj.events[k]], sids, vocab));
  if (max_len > 0) {
    std::size_t total = head.size() + tail.size() + static_cast<std::size_t>(reserve);
    for (const auto& e : entries) total += e.size();
    while (total > static_cast<std::size_t>(max_len) && entries.size() > 1) {
      total -= entries.back().size();
      entries.pop_back();
    }
    if (total > static_cast<std::size_t>(max_len)) throw Error("next-POI prompt does not fit max_seq");
  }
  out.tokens = std::move(head);
  for (const auto& e : entries) out.tokens.insert(out.tokens.end(), e.begin(), e.end());
  out.tokens.insert(out.tokens.end(), tail.begin(), tail.end());
  out.history_rendered = entries.size();
  return out;
}

SftDataset build_sft_dataset(const Dataset& ds, const SidAssignment& sids, const Vocab& vocab, const SftConfig& cfg,
                             int max_len) {
  cfg.validate();
  if (!ds.has_split()) throw Error("build_sft_dataset needs split tags");
  const auto profiles = user_profiles(ds);
  SftDataset out;
  for (std::size_t e = 0; e < ds.interactions().size(); ++e) {
    if (!ds.is_train(e)) continue;
    const auto& r = ds.interactions()[e];
    auto response = vocab.encode_sid(sids.at(r.poi_id));
    response.push_back(Vocab::kEos);
    const auto prompt = build_next_poi_prompt(ds, sids, vocab, profiles, e, cfg.history, max_len,
                                              static_cast<int>(response.size()));
    if (prompt.tokens.empty()) {
      ++out.skipped_no_history;
      continue;
    }
    const auto& traj = ds.trajectories().at(r.user_id);
    const auto prior = static_cast<std::size_t>(std::find(traj.events.begin(), traj.events.end(), e) - traj.events.begin());
    if (prompt.history_rendered < std::min<std::size_t>(prior, static_cast<std::size_t>(cfg.history))) ++out.truncated;
    out.examples.push_back(make_example(prompt.tokens, response));
    out.events.push_back(e);
  }
  return out;
}

std::vector<int> description_prompt(const Poi& p, const Vocab& vocab) {
  std::vector<int> out{Vocab::kBos, vocab.id(Vocab::kDescribe)};
  append_ids(out, featurize_poi(p), vocab);
  out.push_back(Vocab::kSep);
  return out;
}

std::vector<TrainingExample> build_description_examples(const Dataset& ds, const SidAssignment& sids,
                                                        const Vocab& vocab) {
  std::vector<TrainingExample> out;
  for (const auto& [id, p] : ds.pois()) {
    auto response = sid_codes(sids.at(id), sids.sizes.size(), vocab);
    response.push_back(Vocab::kEos);
    out.push_back(make_example(description_prompt(p, vocab), response));
  }
  return out;
}

}  // namespace geosid
