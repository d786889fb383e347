#include "geosid/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "geosid/beam.hpp"
#include "geosid/embed.hpp"
#include "geosid/eval.hpp"
#include "geosid/vocab.hpp"

namespace geosid {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

// Strict view of one config object: unknown keys are schema violations.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error("config: " + name() + " must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw Error("config: unknown key " + qualified(k));
  }
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  bool has(const std::string& k) const { return j_.contains(k); }

  template <class T>
  T get(const std::string& k, T def) {
    used_.insert(k);
    if (!j_.contains(k)) return def;
    return convert<T>(k);
  }

  template <class T>
  T req(const std::string& k) {
    used_.insert(k);
    if (!j_.contains(k)) throw Error("config: missing " + qualified(k));
    return convert<T>(k);
  }

  std::uint64_t seed() {
    used_.insert("seed");
    if (!j_.contains("seed")) throw Error("config: seed omitted: " + qualified("seed"));
    return convert<std::uint64_t>("seed");
  }

  const json& child(const std::string& k) {
    used_.insert(k);
    static const json empty = json::object();
    return j_.contains(k) ? j_.at(k) : empty;
  }

  std::string qualified(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

 private:
  std::string name() const { return path_.empty() ? "root" : path_; }

  template <class T>
  T convert(const std::string& k) {
    try {
      return j_.at(k).get<T>();
    } catch (const json::exception&) {
      throw Error("config: wrong type for " + qualified(k));
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace

PipelineConfig PipelineConfig::parse(const json& j) {
  PipelineConfig c;
  c.doc = j;
  Section root(j, "");
  c.workdir = root.get<std::string>("workdir", "");
  {
    Section s(root.child("data"), "data");
    c.data.source = s.get<std::string>("source", "synth");
    if (c.data.source == "synth") {
      Section y(s.child("synth"), "data.synth");
      c.data.synth.n_hubs = y.get("n_hubs", c.data.synth.n_hubs);
      c.data.synth.pois_per_hub = y.get("pois_per_hub", c.data.synth.pois_per_hub);
      c.data.synth.n_users = y.get("n_users", c.data.synth.n_users);
      c.data.synth.visits_per_user = y.get("visits_per_user", c.data.synth.visits_per_user);
      c.data.synth.hub_radius_km = y.get("hub_radius_km", c.data.synth.hub_radius_km);
      c.data.synth.seed = y.seed();
    } else if (c.data.source == "tsv") {
      c.data.tsv = s.req<std::string>("tsv");
      s.child("synth");
    } else {
      throw Error("config: data.source must be synth or tsv");
    }
    Section sp(s.child("split"), "data.split");
    c.data.split.train = sp.get("train", c.data.split.train);
    c.data.split.valid = sp.get("valid", c.data.split.valid);
    c.data.split.test = sp.get("test", c.data.split.test);
  }
  {
    Section s(root.child("embed"), "embed");
    c.embed.dim = s.get("dim", c.embed.dim);
    c.embed.external = s.get<std::string>("external", "");
    if (c.embed.external.empty()) c.embed.seed = s.seed();
  }
  {
    Section s(root.child("pairs"), "pairs");
    c.pairs.window = s.get("window", c.pairs.window);
    c.pairs.min_count = s.get("min_count", c.pairs.min_count);
    c.pairs.alpha = s.get("alpha", c.pairs.alpha);
    c.pairs.max_km = s.get("max_km", c.pairs.max_km);
    c.pairs.top_k_per_poi = s.get("top_k_per_poi", c.pairs.top_k_per_poi);
    c.pairs.seed = s.seed();
    c.pairs.validate();
  }
  {
    Section s(root.child("contrastive"), "contrastive");
    c.contrastive.enabled = s.get("enabled", true);
    auto& t = c.contrastive.train;
    t.tau = s.get("tau", t.tau);
    t.lr = s.get("lr", t.lr);
    t.epochs = s.get("epochs", t.epochs);
    t.batch = s.get("batch", t.batch);
    t.n_extra = s.get("n_extra", t.n_extra);
    t.renormalize = s.get("renormalize", t.renormalize);
    if (c.contrastive.enabled) t.seed = s.seed(); else t.seed = s.get<std::uint64_t>("seed", 0);
    t.validate();
  }
  {
    Section s(root.child("rq"), "rq");
    c.rq.sizes = s.get("sizes", c.rq.sizes);
    c.rq.levels = static_cast<int>(c.rq.sizes.size());
    c.rq.kmeans_iters = s.get("kmeans_iters", c.rq.kmeans_iters);
    c.rq.tol = s.get("tol", c.rq.tol);
    c.rq.dedup = s.get("dedup", c.rq.dedup);
    c.dedup_headroom = s.get("dedup_headroom", c.dedup_headroom);
    c.rq.seed = s.seed();
    c.rq.validate();
  }
  {
    Section s(root.child("model"), "model");
    c.model.d_model = s.get("d_model", c.model.d_model);
    c.model.n_layers = s.get("n_layers", c.model.n_layers);
    c.model.n_heads = s.get("n_heads", c.model.n_heads);
    c.model.max_seq = s.get("max_seq", c.model.max_seq);
    c.model.seed = s.seed();
    DecoderConfig shape = c.model;
    shape.vocab = 2;  // real size known after tokenize
    shape.validate();
  }
  {
    Section s(root.child("cpt"), "cpt");
    c.cpt.enabled = s.get("enabled", true);
    auto& t = c.cpt.train;
    t.epochs = s.get("epochs", t.epochs);
    t.lr = s.get("lr", t.lr);
    t.batch = s.get("batch", t.batch);
    if (c.cpt.enabled) t.seed = s.seed(); else t.seed = s.get<std::uint64_t>("seed", 0);
    t.validate();
  }
  {
    Section s(root.child("sft"), "sft");
    c.sft.history = s.get("history", c.sft.history);
    c.sft.epochs = s.get("epochs", c.sft.epochs);
    c.sft.lr = s.get("lr", c.sft.lr);
    c.sft.batch = s.get("batch", c.sft.batch);
    c.sft_clip = s.get("clip", c.sft_clip);
    c.sft.seed = s.seed();
    c.sft.validate();
  }
  {
    Section s(root.child("em"), "em");
    c.em.enabled = s.get("enabled", true);
    auto& e = c.em.cfg;
    e.n_iters = s.get("n_iters", e.n_iters);
    e.beam = s.get("beam", e.beam);
    e.sft.epochs = s.get("epochs", e.sft.epochs);
    e.sft.lr = s.get("lr", e.sft.lr);
    e.sft.batch = s.get("batch", e.sft.batch);
    e.mix_next_poi = s.get("mix_next_poi", e.mix_next_poi);
    e.hitrate_k = s.get("hitrate_k", e.hitrate_k);
    e.hitrate_max_events = s.get("hitrate_max_events", e.hitrate_max_events);
    const auto order = s.get<std::string>("order", "poi_id");
    if (order == "poi_id") e.order = EmOrder::kPoiId;
    else if (order == "confidence") e.order = EmOrder::kConfidence;
    else throw Error("config: em.order must be poi_id or confidence");
    if (c.em.enabled) e.sft.seed = s.seed(); else e.sft.seed = s.get<std::uint64_t>("seed", 0);
    e.history = c.sft.history;
    e.max_len = c.model.max_seq;
    e.validate();
  }
  {
    Section s(root.child("eval"), "eval");
    c.eval.ks = s.get("k", c.eval.ks);
    c.eval.beam_width = s.get("beam_width", c.eval.beam_width);
    c.eval.top_k = s.get("top_k", c.eval.top_k);
    c.eval.max_events = s.get("max_events", c.eval.max_events);
    if (c.eval.ks.empty()) throw Error("config: eval.k must be non-empty");
    for (int k : c.eval.ks)
      if (k < 1 || k > c.eval.top_k) throw Error("config: eval.k values must be in [1, eval.top_k]");
    if (c.eval.beam_width < 1) throw Error("config: eval.beam_width must be >= 1");
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("config is not valid JSON: " + path.string());
  }
  return parse(j);
}

std::string PipelineConfig::hash() const {
  json j = doc;
  j.erase("workdir");
  return hex64(fnv1a64(j.dump()));
}

namespace {

const char* kManifest = "manifest.json";
const std::vector<std::string> kDatasetFiles = {"pois.jsonl", "interactions.jsonl", "split.json"};

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("missing artifact: " + p.filename().string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

json section(const json& doc, const std::string& key) { return doc.contains(key) ? doc.at(key) : json(); }

void write_loss_csv(const std::vector<double>& curve, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < curve.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i + 1, curve[i]);
    out << buf;
  }
}

void require(const fs::path& dir, const std::string& name) {
  if (!fs::exists(dir / name)) throw Error("missing artifact: " + name);
}

struct StageDef {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  json config;  // hashed
  std::function<void()> run;
  bool disabled = false;
};

std::string final_sids(const PipelineConfig& c) { return c.em.enabled ? "sids_em.json" : "sids.json"; }
std::string final_embeddings(const PipelineConfig& c) {
  return c.contrastive.enabled ? "embeddings_refined.bin" : "embeddings.bin";
}

TinyDecoder fresh_model(const PipelineConfig& c, const Vocab& vocab) {
  DecoderConfig dc = c.model;
  dc.vocab = vocab.size();
  return TinyDecoder(dc);
}

void log_epochs(const std::string& stage, int epochs) {
  if (epochs > 0) std::cerr << stage << ": training " << epochs << " epochs\n";
}

void save_predictions(const std::vector<std::size_t>& events, const std::vector<RankedPrediction>& preds,
                      const Dataset& ds, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ojson j;
    j["event"] = events[i];
    j["user"] = ds.interactions()[events[i]].user_id;
    j["target"] = preds[i].target;
    j["ranked"] = preds[i].ranked;
    out << j.dump() << '\n';
  }
}

std::vector<std::pair<std::size_t, RankedPrediction>> load_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing artifact: " + path.filename().string());
  std::vector<std::pair<std::size_t, RankedPrediction>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    out.push_back({j.at("event").get<std::size_t>(),
                   {j.at("target").get<std::string>(), j.at("ranked").get<std::vector<std::string>>()}});
  }
  return out;
}

ojson cohesion_json(const CohesionReport& r) {
  ojson levels = ojson::array();
  for (std::size_t l = 0; l < r.levels.size(); ++l) {
    const auto& c = r.levels[l];
    ojson e;
    e["level"] = l + 1;
    e["similarity"] = std::isnan(c.similarity) ? ojson(nullptr) : ojson(c.similarity);
    e["distance_km"] = std::isnan(c.distance_km) ? ojson(nullptr) : ojson(c.distance_km);
    e["groups"] = c.groups;
    e["scored_groups"] = c.scored_groups;
    levels.push_back(e);
  }
  return levels;
}

ojson metric_block(const std::vector<RankedPrediction>& preds, const std::vector<int>& ks) {
  ojson recall, ndcg;
  for (int k : ks) {
    recall[std::to_string(k)] = recall_at_k(preds, k);
    ndcg[std::to_string(k)] = ndcg_at_k(preds, k);
  }
  ojson out;
  out["recall"] = recall;
  out["ndcg"] = ndcg;
  return out;
}

StageDef make_stage(const std::string& name, const PipelineConfig& c, const fs::path& dir) {
  StageDef s;
  const json& doc = c.doc;

  if (name == "synth" || name == "ingest") {
    s.outputs = kDatasetFiles;
    s.config = section(doc, "data");
    if (name == "synth" && c.data.source != "synth") throw Error("synth needs data.source = synth");
    if (name == "ingest") {
      if (c.data.source != "tsv") throw Error("ingest needs data.source = tsv");
      s.config["tsv_hash"] = file_hash(c.data.tsv);
    }
    s.run = [&c, dir, name] {
      Dataset raw = name == "synth" ? synthesize_dataset(c.data.synth) : load_checkins_tsv(c.data.tsv);
      save_dataset(temporal_split(raw, c.data.split), dir);
    };
  } else if (name == "embed") {
    s.inputs = {"pois.jsonl", "interactions.jsonl"};
    s.outputs = {"embeddings.bin"};
    s.config = section(doc, "embed");
    if (!c.embed.external.empty()) s.config["external_hash"] = file_hash(c.embed.external);
    s.run = [&c, dir] {
      const Dataset ds = load_dataset(dir);
      const EmbeddingTable t =
          c.embed.external.empty() ? hash_embed(ds, c.embed.dim, c.embed.seed) : load_embeddings(c.embed.external, ds);
      save_embeddings(t, dir / "embeddings.bin");
    };
  } else if (name == "pairs") {
    s.inputs = kDatasetFiles;
    s.outputs = {"pairs.tsv"};
    s.config = section(doc, "pairs");
    s.run = [&c, dir] {
      const Dataset ds = load_dataset(dir);
      save_pairs_tsv(filter_pairs(mine_covisits(ds, c.pairs), ds, c.pairs), dir / "pairs.tsv");
    };
  } else if (name == "contrast") {
    s.disabled = !c.contrastive.enabled;
    s.inputs = {"embeddings.bin", "pairs.tsv"};
    s.outputs = {"embeddings_refined.bin", "p2p_loss.csv"};
    s.config = section(doc, "contrastive");
    s.run = [&c, dir] {
      const auto table = read_embeddings(dir / "embeddings.bin");
      const auto pairs = load_pairs_tsv(dir / "pairs.tsv");
      const auto res = train_p2p(table, pairs, c.contrastive.train);
      save_embeddings(res.table, dir / "embeddings_refined.bin");
      write_loss_csv(res.loss_curve, dir / "p2p_loss.csv");
    };
  } else if (name == "tokenize") {
    s.inputs = kDatasetFiles;
    s.inputs.push_back(final_embeddings(c));
    s.outputs = {"sids.json", "vocab.json", "embeddings_export.tsv"};
    s.config = {{"rq", section(doc, "rq")}, {"contrastive_enabled", c.contrastive.enabled}};
    s.run = [&c, dir] {
      const Dataset ds = load_dataset(dir);
      const auto table = read_embeddings(dir / final_embeddings(c));
      const auto rq = rq_tokenize(table, c.rq);
      for (const auto& w : rq.warnings) std::cerr << "tokenize: " << w << '\n';
      save_sids_json(rq.codebooks, rq.assignment, dir / "sids.json");
      const int slots = c.rq.dedup ? rq.assignment.max_dedup_ordinal() + 1 + c.dedup_headroom : 0;
      Vocab::build(ds, c.rq.sizes, slots).save_json(dir / "vocab.json");
      export_embeddings(table, rq.assignment, dir / "embeddings_export.tsv");
    };
  } else if (name == "em") {
    s.disabled = !c.em.enabled;
    s.inputs = kDatasetFiles;
    s.inputs.insert(s.inputs.end(), {"sids.json", "vocab.json"});
    s.outputs = {"sids_em.json", "model_em.gslm", "em_audit.jsonl"};
    s.config = {{"em", section(doc, "em")}, {"model", section(doc, "model")}, {"history", c.sft.history}};
    s.run = [&c, dir] {
      const Dataset ds = load_dataset(dir);
      const auto loaded = load_sids_json(dir / "sids.json");
      const auto vocab = Vocab::load_json(dir / "vocab.json");
      log_epochs("em", c.em.cfg.sft.epochs * c.em.cfg.n_iters);
      auto res = em_refine(fresh_model(c, vocab), loaded.assignment, ds, vocab, c.em.cfg);
      save_sids_json(loaded.codebooks, res.assignment, dir / "sids_em.json");
      res.model.save(dir / "model_em.gslm");
      write_em_audit(res.states, dir / "em_audit.jsonl");
    };
  } else if (name == "cpt") {
    s.disabled = !c.cpt.enabled;
    s.inputs = kDatasetFiles;
    s.inputs.insert(s.inputs.end(), {final_sids(c), "vocab.json"});
    s.outputs = {"model_cpt.gslm", "cpt_loss.csv"};
    s.config = {{"cpt", section(doc, "cpt")}, {"model", section(doc, "model")}, {"em_enabled", c.em.enabled}};
    s.run = [&c, dir] {
      const Dataset ds = load_dataset(dir);
      const auto sids = load_sids_json(dir / final_sids(c)).assignment;
      const auto vocab = Vocab::load_json(dir / "vocab.json");
      const auto corpus = build_cpt_corpus(ds, sids, vocab, c.cpt.train.seed, c.model.max_seq);
      TinyDecoder model = fresh_model(c, vocab);
      log_epochs("cpt", c.cpt.train.epochs);
      const auto res = train(model, corpus.examples, c.cpt.train);
      model.set_stage(Stage::kCpt);
      model.save(dir / "model_cpt.gslm");
      write_loss_csv(res.loss_curve, dir / "cpt_loss.csv");
    };
  } else if (name == "sft") {
    if (c.cpt.enabled) s.inputs.push_back("model_cpt.gslm");
    s.inputs.insert(s.inputs.end(), kDatasetFiles.begin(), kDatasetFiles.end());
    s.inputs.insert(s.inputs.end(), {final_sids(c), "vocab.json"});
    s.outputs = {"model_sft.gslm", "sft_loss.csv"};
    s.config = {{"sft", section(doc, "sft")},
                {"model", section(doc, "model")},
                {"cpt_enabled", c.cpt.enabled},
                {"em_enabled", c.em.enabled}};
    s.run = [&c, dir] {
      const Dataset ds = load_dataset(dir);
      const auto sids = load_sids_json(dir / final_sids(c)).assignment;
      const auto vocab = Vocab::load_json(dir / "vocab.json");
      TinyDecoder model = c.cpt.enabled ? TinyDecoder::load(dir / "model_cpt.gslm") : fresh_model(c, vocab);
      if (model.config().vocab != vocab.size()) throw Error("model_cpt.gslm does not match vocab.json");
      const auto data = build_sft_dataset(ds, sids, vocab, c.sft, c.model.max_seq);
      if (data.examples.empty()) throw Error("sft: no training examples");
      TrainConfig tc{c.sft.epochs, c.sft.lr, c.sft.batch, c.sft.seed, c.sft_clip};
      log_epochs("sft", tc.epochs);
      const auto res = train(model, data.examples, tc);
      model.set_stage(Stage::kSft);
      model.save(dir / "model_sft.gslm");
      write_loss_csv(res.loss_curve, dir / "sft_loss.csv");
    };
  } else if (name == "predict") {
    s.inputs = kDatasetFiles;
    s.inputs.insert(s.inputs.end(), {final_sids(c), "vocab.json", "model_sft.gslm"});
    s.outputs = {"predictions.jsonl"};
    s.config = {{"eval", section(doc, "eval")}, {"history", c.sft.history}};
    s.run = [&c, dir] {
      const Dataset ds = load_dataset(dir);
      const auto sids = load_sids_json(dir / final_sids(c)).assignment;
      const auto vocab = Vocab::load_json(dir / "vocab.json");
      const auto model = TinyDecoder::load(dir / "model_sft.gslm");
      auto events = split_events(ds, SplitTag::kTest);
      if (c.eval.max_events > 0 && events.size() > c.eval.max_events) events.resize(c.eval.max_events);
      PredictConfig pc;
      pc.history = c.sft.history;
      pc.beam_width = c.eval.beam_width;
      pc.top_k = c.eval.top_k;
      pc.max_len = model.config().max_seq;
      // Users need an earlier event to build a prompt.
      std::vector<std::size_t> kept;
      for (auto e : events) {
        const auto& traj = ds.trajectories().at(ds.interactions()[e].user_id);
        if (traj.events.front() != e) kept.push_back(e);
      }
      const auto preds = predict_next_pois(model, vocab, ds, sids, kept, pc);
      save_predictions(kept, preds, ds, dir / "predictions.jsonl");
    };
  } else if (name == "eval") {
    s.inputs = kDatasetFiles;
    s.inputs.insert(s.inputs.end(), {"predictions.jsonl", "sids.json", final_embeddings(c)});
    s.outputs = {"metrics.json"};
    s.config = {{"eval", section(doc, "eval")}, {"config_hash", c.hash()}};
    s.run = [&c, dir] {
      const Dataset ds = load_dataset(dir);
      const auto loaded = load_predictions(dir / "predictions.jsonl");
      if (loaded.empty()) throw Error("eval: no predictions");
      std::vector<RankedPrediction> preds;
      for (const auto& [e, p] : loaded) preds.push_back(p);
      const int kmax = *std::max_element(c.eval.ks.begin(), c.eval.ks.end());
      const auto pop_all = popularity_baseline(ds, kmax);
      std::vector<RankedPrediction> pop;
      for (const auto& p : preds) pop.push_back({p.target, pop_all.empty() ? std::vector<std::string>{} : pop_all.front().ranked});
      const auto sids = load_sids_json(dir / "sids.json").assignment;
      const auto table = read_embeddings(dir / final_embeddings(c));
      ojson m = metric_block(preds, c.eval.ks);
      m["popularity"] = metric_block(pop, c.eval.ks);
      m["cohesion"] = cohesion_json(cohesion(sids, table, ds));
      m["n_predictions"] = preds.size();
      m["config_hash"] = c.hash();
      std::ofstream out(dir / "metrics.json");
      if (!out) throw Error("cannot write metrics.json");
      out << m.dump(2) << '\n';
    };
  } else {
    throw Error("unknown stage: " + name);
  }
  return s;
}

json load_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) return json{{"stages", json::object()}};
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return json{{"stages", json::object()}};
  }
}

}  // namespace

StageReport run_stage(const std::string& stage, const PipelineConfig& cfg, const fs::path& workdir, bool force) {
  if (stage == "bench") throw Error("bench is not a single stage");
  fs::create_directories(workdir);
  StageReport rep{stage};
  StageDef s = make_stage(stage, cfg, workdir);
  if (s.disabled) {
    rep.skipped_disabled = true;
    return rep;
  }
  for (const auto& in : s.inputs) require(workdir, in);

  json inputs = json::object();
  for (const auto& in : s.inputs) inputs[in] = file_hash(workdir / in);
  const std::string cfg_hash = hex64(fnv1a64(s.config.dump()));

  json manifest = load_manifest(workdir);
  auto& stages = manifest["stages"];
  if (!force && stages.contains(stage)) {
    const auto& prev = stages[stage];
    bool same = prev.value("config_hash", "") == cfg_hash && prev.value("inputs", json()) == inputs;
    if (same) {
      for (const auto& out : s.outputs) {
        const auto p = workdir / out;
        if (!fs::exists(p) || prev["outputs"].value(out, "") != file_hash(p)) same = false;
      }
    }
    if (same) return rep;
  }

  const auto t0 = std::chrono::steady_clock::now();
  s.run();
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.ran = true;

  json outputs = json::object();
  for (const auto& out : s.outputs) outputs[out] = file_hash(workdir / out);
  stages[stage] = {{"stage", stage},
                   {"inputs", inputs},
                   {"outputs", outputs},
                   {"config_hash", cfg_hash},
                   {"wall_time_s", rep.seconds}};
  std::ofstream out(workdir / kManifest);
  out << manifest.dump(2) << '\n';
  return rep;
}

std::vector<StageReport> run_all(const PipelineConfig& cfg, const fs::path& workdir, bool force) {
  std::vector<StageReport> out;
  const std::string source = cfg.data.source == "synth" ? "synth" : "ingest";
  for (const auto& st : {source, std::string("embed"), std::string("pairs"), std::string("contrast"),
                         std::string("tokenize"), std::string("em"), std::string("cpt"), std::string("sft"),
                         std::string("predict"), std::string("eval")})
    out.push_back(run_stage(st, cfg, workdir, force));
  return out;
}

std::vector<StageReport> run_bench(const PipelineConfig& cfg, const fs::path& workdir, bool force) {
  struct Variant {
    std::string name;
    std::function<void(json&)> edit;
  };
  const std::vector<Variant> variants = {
      {"full", [](json&) {}},
      {"no_cpt", [](json& j) { j["cpt"]["enabled"] = false; }},
      {"no_em", [](json& j) { j["em"]["enabled"] = false; }},
      {"no_contrastive", [](json& j) { j["contrastive"]["enabled"] = false; }},
  };
  std::vector<StageReport> reports;
  ojson bench;
  bench["config_hash"] = cfg.hash();
  ojson results;
  for (const auto& v : variants) {
    json doc = cfg.doc;
    v.edit(doc);
    const auto vc = PipelineConfig::parse(doc);
    const auto dir = workdir / v.name;
    if (v.name != "full") {
      // Start from the full run's artifacts; the manifest skips stages whose
      // inputs and config did not change.
      fs::create_directories(dir);
      for (const auto& e : fs::directory_iterator(workdir / "full"))
        if (e.is_regular_file()) fs::copy_file(e.path(), dir / e.path().filename(), fs::copy_options::overwrite_existing);
    }
    std::cerr << "bench: " << v.name << '\n';
    for (auto r : run_all(vc, dir, force && v.name == "full")) {
      r.stage = v.name + "/" + r.stage;
      reports.push_back(r);
    }
    std::ifstream in(dir / "metrics.json");
    results[v.name] = ojson::parse(in);
  }
  bench["variants"] = results;
  ojson coh;
  coh["base"] = results["no_contrastive"]["cohesion"];
  coh["refined"] = results["full"]["cohesion"];
  bench["cohesion"] = coh;
  bench["popularity"] = results["full"]["popularity"];
  std::ofstream out(workdir / "bench_metrics.json");
  if (!out) throw Error("cannot write bench_metrics.json");
  out << bench.dump(2) << '\n';
  return reports;
}

}  // namespace geosid
