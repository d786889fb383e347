// Acceptance run: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "fixtures.hpp"
#include "geosid/contrastive.hpp"
#include "geosid/embed.hpp"
#include "geosid/emrefine.hpp"
#include "geosid/eval.hpp"
#include "geosid/pairs.hpp"
#include "geosid/pipeline.hpp"
#include "geosid/rqkmeans.hpp"

using namespace geosid;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

fs::path source_dir() { return fs::path(GEOSID_SOURCE_DIR); }

RowMatrix random_points(Rng& rng, int n, int d) {
  RowMatrix x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
  return x;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 1
Outcome rq_identity() {
  const auto cfg = PipelineConfig::load(source_dir() / "configs" / "bench.json");
  const auto ds = synthesize_dataset(cfg.data.synth);
  const auto table = hash_embed(ds, cfg.embed.dim, cfg.embed.seed);
  const auto r = rq_tokenize(table, cfg.rq);
  double worst = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& sid = r.assignment.at(table.ids()[i]);
    const Eigen::VectorXd e = table.rows().row(static_cast<Eigen::Index>(i)).cast<double>().transpose();
    Eigen::VectorXd rec = r.final_residuals.row(static_cast<Eigen::Index>(i)).transpose();
    for (std::size_t l = 0; l < r.codebooks.size(); ++l) rec += r.codebooks[l].centroids.row(sid[l]).transpose();
    worst = std::max(worst, (e - rec).norm() / (e.norm() + 1));
  }
  bool monotone = true;
  const auto& rn = r.assignment.residual_norms;
  for (std::size_t l = 1; l < rn.size(); ++l) monotone = monotone && rn[l] <= rn[l - 1];
  std::string norms;
  for (double v : rn) norms += fmt(" %.4f", v);
  return {worst <= 1e-6 && monotone, std::to_string(table.size()) + " POIs, worst " + fmt("%.2e", worst) +
                                         ", residual norms" + norms};
}

// 2
Outcome kmeans_correctness() {
  Rng rng(2);
  int bad_fix = 0, bad_opt = 0, bad_mono = 0;
  for (int t = 0; t < 200; ++t) {
    const int n = 2 + static_cast<int>(rng.below(11));
    const auto x = random_points(rng, n, 2);
    const auto r = kmeans(x, 2, 100, 0.0, static_cast<std::uint64_t>(t));
    for (int i = 0; i < n; ++i)
      if (assign_nearest(x.row(i).transpose(), r.centroids) != r.assignments[static_cast<std::size_t>(i)]) {
        ++bad_fix;
        break;
      }
    if (r.objective.back() < fx::best_two_partition(x) - 1e-9) ++bad_opt;
    for (std::size_t k = 1; k < r.objective.size(); ++k)
      if (r.objective[k] > r.objective[k - 1]) {
        ++bad_mono;
        break;
      }
  }
  return {bad_fix + bad_opt + bad_mono == 0, "200 instances; non-fixpoint " + std::to_string(bad_fix) +
                                                 ", below optimum " + std::to_string(bad_opt) + ", non-monotone " +
                                                 std::to_string(bad_mono)};
}

// 3
Outcome nce_gradient() {
  Rng rng(3);
  const double eps = 1e-4;
  double worst = 0;
  auto rv = [&](int d) {
    std::vector<double> v(static_cast<std::size_t>(d));
    for (auto& x : v) x = rng.normal() * 0.5;
    return v;
  };
  for (int t = 0; t < 100; ++t) {
    auto a = rv(8), p = rv(8);
    std::vector<std::vector<double>> negs;
    const int k = 1 + static_cast<int>(rng.below(8));
    for (int i = 0; i < k; ++i) negs.push_back(rv(8));
    const double tau = rng.uniform(0.1, 1.0);
    auto views = [&] { return std::vector<VecView>(negs.begin(), negs.end()); };
    const auto g = nce_grad(a, p, views(), tau);
    // Relative error over the instance's whole gradient (anchor, positive, negatives).
    double diff = 0, scale = 0;
    auto add = [&](std::vector<double>& x, const std::vector<double>& an) {
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double keep = x[j];
        x[j] = keep + eps;
        const double up = nce_loss(a, p, views(), tau);
        x[j] = keep - eps;
        const double down = nce_loss(a, p, views(), tau);
        x[j] = keep;
        const double num = (up - down) / (2 * eps);
        diff += (num - an[j]) * (num - an[j]);
        scale += an[j] * an[j];
      }
    };
    add(a, g.anchor);
    add(p, g.positive);
    for (std::size_t i = 0; i < negs.size(); ++i) add(negs[i], g.negatives[i]);
    worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(scale), 1e-12));
  }
  return {worst <= 1e-4, "100 instances, worst relative error " + fmt("%.2e", worst)};
}

// 4
Outcome contrastive_separation() {
  const auto ds = temporal_split(synthesize_dataset({4, 50, 100, 80, 2.0, 41}), {});
  const auto table = hash_embed(ds, 64, 42);
  PairMiningConfig pc;
  const auto pairs = filter_pairs(mine_covisits(ds, pc), ds, pc);
  if (pairs.empty()) return {false, "no co-visit pairs"};
  Rng rng(43);
  std::vector<std::pair<std::string, std::string>> random_pairs;
  for (int i = 0; i < 2000; ++i) {
    const auto a = rng.below(table.size()), b = rng.below(table.size());
    if (a != b) random_pairs.emplace_back(table.ids()[a], table.ids()[b]);
  }
  auto gap = [&](const EmbeddingTable& t) {
    double pos = 0, rnd = 0;
    for (const auto& p : pairs) pos += cosine(t.row(p.i), t.row(p.j));
    for (const auto& [a, b] : random_pairs) rnd += cosine(t.row(a), t.row(b));
    return pos / static_cast<double>(pairs.size()) - rnd / static_cast<double>(random_pairs.size());
  };
  P2PTrainConfig cfg;
  cfg.seed = 44;
  const double before = gap(table);
  const double after = gap(train_p2p(table, pairs, cfg).table);
  return {after - before >= 0.1, std::to_string(pairs.size()) + " pairs, gap " + fmt("%.4f", before) + " -> " +
                                     fmt("%.4f", after)};
}

// 5
Outcome swing_oracle() {
  Rng rng(5);
  int mismatches = 0, checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n_pois = 2 + static_cast<int>(rng.below(14));
    const int n_users = 1 + static_cast<int>(rng.below(10));
    const auto pois = fx::grid_pois(n_pois);
    std::map<std::string, std::vector<std::string>> seqs;
    for (int u = 0; u < n_users; ++u) {
      const int len = 1 + static_cast<int>(rng.below(12));
      for (int k = 0; k < len; ++k) seqs["u" + std::to_string(u)].push_back(pois[rng.below(pois.size())].id);
    }
    const auto ds = fx::sequences(pois, seqs);
    PairMiningConfig pc;
    pc.window = 1 + static_cast<int>(rng.below(5));
    pc.min_count = 1 + static_cast<int>(rng.below(2));
    const double alpha = rng.uniform(0.0, 2.0);
    const auto mined = mine_covisits(ds, pc);
    auto brute = fx::brute_covisits(ds, pc.window);
    std::erase_if(brute, [&](const auto& kv) { return kv.second < pc.min_count; });
    if (mined.size() != brute.size()) ++mismatches;
    const auto index = build_user_item_index(ds);
    for (const auto& p : mined) {
      ++checked;
      auto it = brute.find({p.i, p.j});
      if (it == brute.end() || it->second != p.count) ++mismatches;
      if (swing_score(p.i, p.j, index, alpha) != fx::brute_swing(ds, p.i, p.j, alpha)) ++mismatches;
    }
  }
  return {mismatches == 0, "200 fixtures, " + std::to_string(checked) + " pairs, mismatches " +
                               std::to_string(mismatches)};
}

// 6
Outcome beam_exactness() {
  const auto ds = fx::sequences(fx::grid_pois(3), {{"u", {"p00", "p01"}}});
  const auto vocab = Vocab::build(ds, {3, 3, 3}, 0);
  DecoderConfig dc;
  dc.vocab = vocab.size();
  dc.d_model = 32;
  dc.n_layers = 2;
  dc.n_heads = 4;
  dc.max_seq = 32;
  dc.seed = 6;
  const TinyDecoder m(dc);
  const auto trie = SidTrie::product({3, 3, 3});
  double worst = 0;
  bool order = true;
  for (const auto& prompt : std::vector<std::vector<int>>{{Vocab::kBos, Vocab::kSep}, {Vocab::kBos, 7, 9, Vocab::kSep}}) {
    const auto oracle = fx::exhaustive_sids(m, vocab, prompt, trie);
    const auto got = beam_search(m, vocab, prompt, 27, 27, trie);
    if (got.items.size() != 27) return {false, "beam returned " + std::to_string(got.items.size()) + " items"};
    for (std::size_t i = 0; i < 27; ++i) {
      order = order && got.items[i].sid == oracle[i].sid;
      worst = std::max(worst, std::abs(got.items[i].log_prob - oracle[i].log_prob));
    }
  }
  return {order && worst <= 1e-9, std::string("order ") + (order ? "equal" : "differs") + ", max |dlogp| " +
                                      fmt("%.2e", worst)};
}

// 7
Outcome memorization() {
  const auto ds = temporal_split(synthesize_dataset({2, 25, 10, 8, 1.5, 7}), {});
  const auto table = hash_embed(ds, 32, 7);
  RqConfig rq;
  rq.sizes = {4, 4, 4};
  rq.seed = 7;
  const auto sids = rq_tokenize(table, rq).assignment;
  const auto vocab = Vocab::build(ds, rq.sizes, sids.max_dedup_ordinal() + 1);
  SftConfig sc;
  sc.history = 4;
  auto data = build_sft_dataset(ds, sids, vocab, sc);
  if (data.examples.size() < 50) return {false, "only " + std::to_string(data.examples.size()) + " SFT examples"};
  data.examples.resize(50);
  data.events.resize(50);
  DecoderConfig dc;
  dc.vocab = vocab.size();
  dc.d_model = 32;
  dc.n_layers = 2;
  dc.n_heads = 4;
  dc.max_seq = 96;
  dc.seed = 7;
  TinyDecoder m(dc);
  const auto trie = SidTrie::build(sids);
  const auto profiles = user_profiles(ds);
  auto hits = [&] {
    int h = 0;
    for (auto e : data.events) {
      const auto prompt = build_next_poi_prompt(ds, sids, vocab, profiles, e, sc.history);
      const auto r = beam_search(m, vocab, prompt.tokens, 1, 1, trie);
      h += r.items.front().sid == sids.at(ds.interactions()[e].poi_id);
    }
    return h;
  };
  int reached = -1, last = 0;
  train(m, data.examples, TrainConfig{200, 3e-3, 10, 7, 1.0}, [&](int epoch, double) {
    if ((epoch + 1) % 10 != 0) return true;
    last = hits();
    if (last == 50) reached = epoch + 1;
    return last != 50;
  });
  if (reached < 0) return {false, "hit@1 " + std::to_string(last) + "/50 after 200 epochs"};
  return {true, "hit@1 50/50 at epoch " + std::to_string(reached)};
}

// 8
Outcome metric_oracles() {
  auto at_rank = [](int r) {
    RankedPrediction p{"t", {}};
    for (int i = 1; i <= 20; ++i) p.ranked.push_back(i == r ? "t" : "x" + std::to_string(i));
    return p;
  };
  const double rec = recall_at_k({at_rank(1), at_rank(3), at_rank(7), at_rank(12)}, 5);
  const double nd = ndcg_at_k({at_rank(2)}, 5);
  const bool ok = std::abs(rec - 0.5) <= 1e-12 && std::abs(nd - 1.0 / std::log2(3.0)) <= 1e-9;
  return {ok, "Recall@5 " + fmt("%.6f", rec) + ", NDCG@5 " + fmt("%.6f", nd)};
}

using ojson = nlohmann::ordered_json;

ojson run_bench_once(const fs::path& config, const fs::path& dir) {
  fs::remove_all(dir);
  const auto cfg = PipelineConfig::load(config);
  run_bench(cfg, dir, true);
  std::ifstream in(dir / "bench_metrics.json");
  return ojson::parse(in);
}

// 9
Outcome end_to_end(const ojson& b) {
  const auto& v = b.at("variants");
  const double full = v.at("full").at("recall").at("5");
  const double no_cpt = v.at("no_cpt").at("recall").at("5");
  const double no_con = v.at("no_contrastive").at("recall").at("5");
  const double no_em = v.at("no_em").at("recall").at("5");
  const double pop = b.at("popularity").at("recall").at("5");
  const bool ok = full >= 1.5 * pop && full >= no_cpt && full >= no_con;
  return {ok, "Recall@5 full " + fmt("%.4f", full) + ", popularity " + fmt("%.4f", pop) + ", w/o CPT " +
                  fmt("%.4f", no_cpt) + ", w/o contrastive " + fmt("%.4f", no_con) + ", w/o EM " +
                  fmt("%.4f", no_em)};
}

// 10
Outcome cohesion_direction(const ojson& b) {
  auto dist = [&](const char* which) {
    std::vector<double> d;
    for (const auto& l : b.at("cohesion").at(which)) d.push_back(l.at("distance_km").is_null() ? NAN : l.at("distance_km").get<double>());
    return d;
  };
  const auto base = dist("base"), refined = dist("refined");
  auto descending = [](const std::vector<double>& d) {
    for (std::size_t l = 1; l < d.size(); ++l)
      if (!(d[l] <= d[l - 1])) return false;
    return !d.empty();
  };
  std::string detail = "base km";
  for (double x : base) detail += fmt(" %.2f", x);
  detail += ", refined km";
  for (double x : refined) detail += fmt(" %.2f", x);
  const bool ok = descending(base) && descending(refined) && refined.back() <= base.back();
  return {ok, detail};
}

// 11
Outcome em_mechanics(const fs::path& workdir) {
  const auto ds = temporal_split(synthesize_dataset({4, 50, 60, 20, 2.0, 11}), {});
  const auto table = hash_embed(ds, 32, 11);
  RqConfig rq;
  rq.sizes = {8, 8, 8};
  rq.seed = 11;
  const auto sids0 = rq_tokenize(table, rq).assignment;
  const auto vocab = Vocab::build(ds, rq.sizes, sids0.max_dedup_ordinal() + 9);
  DecoderConfig dc;
  dc.vocab = vocab.size();
  dc.d_model = 32;
  dc.n_layers = 1;
  dc.n_heads = 2;
  dc.max_seq = 96;
  dc.seed = 11;
  EmConfig cfg;
  cfg.n_iters = 3;
  cfg.beam = 20;
  cfg.sft = TrainConfig{8, 3e-3, 16, 11, 1.0};
  cfg.hitrate_max_events = 40;
  cfg.history = 6;
  cfg.max_len = dc.max_seq;
  cfg.keep_candidates = true;
  const auto r = em_refine(TinyDecoder(dc), sids0, ds, vocab, cfg);
  const auto audit = workdir / "em_audit.jsonl";
  write_em_audit(r.states, audit);

  std::size_t violations = 0, changed = 0;
  bool acc_ok = true;
  SidAssignment prev = sids0;
  const std::size_t L = rq.sizes.size();
  for (const auto& st : r.states) {
    for (const auto& [id, s] : st.assignment.sids) {
      const Sid now(s.begin(), s.begin() + static_cast<long>(L));
      const Sid before(prev.at(id).begin(), prev.at(id).begin() + static_cast<long>(L));
      if (now == before) continue;
      ++changed;
      const auto& c = st.candidates.at(id);
      if (c.size() != 20 || std::find(c.begin(), c.end(), now) == c.end()) ++violations;
    }
    for (std::size_t l = 0; l < st.acc.size(); ++l) {
      acc_ok = acc_ok && st.acc[l] >= 0 && st.acc[l] <= 1;
      if (l > 0) acc_ok = acc_ok && st.acc[l] <= st.acc[l - 1];
    }
    prev = st.assignment;
  }
  std::size_t lines = 0;
  {
    std::ifstream in(audit);
    std::string line;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("iteration") && j.contains("acc") && j.contains("hitrate") && j.contains("replaced_count") &&
          j.contains("retained_count"))
        ++lines;
    }
  }
  const bool ok = violations == 0 && acc_ok && lines == r.states.size() && r.states.size() == 3;
  return {ok, std::to_string(ds.pois().size()) + " POIs, " + std::to_string(changed) + " changes over 3 iterations, " +
                  std::to_string(violations) + " outside candidates, audit lines " + std::to_string(lines)};
}

// 12
Outcome determinism(const fs::path& workdir) {
  const auto config = source_dir() / "configs" / "smoke.json";
  run_bench_once(config, workdir / "det_a");
  run_bench_once(config, workdir / "det_b");
  const auto a = slurp(workdir / "det_a" / "bench_metrics.json");
  const auto b = slurp(workdir / "det_b" / "bench_metrics.json");
  return {!a.empty() && a == b, std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--only", only, "criterion numbers to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const fs::path wd = fs::absolute(workdir);
  fs::create_directories(wd);

  ojson bench;
  bool bench_ok = false;
  std::string bench_error;
  auto need_bench = [&] {
    if (bench_ok || !bench_error.empty()) return;
    try {
      bench = run_bench_once(source_dir() / "configs" / "bench.json", wd / "bench");
      bench_ok = true;
    } catch (const std::exception& e) {
      bench_error = e.what();
    }
  };

  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "RQ reconstruction identity", 60, rq_identity},
      {2, "k-means correctness", 30, kmeans_correctness},
      {3, "NCE gradient oracle", 10, nce_gradient},
      {4, "contrastive separation", 120, contrastive_separation},
      {5, "swing oracle", 5, swing_oracle},
      {6, "beam exactness", 5, beam_exactness},
      {7, "memorization", 180, memorization},
      {8, "metric oracles", 1, metric_oracles},
      {9, "end-to-end directional", 600,
       [&] {
         need_bench();
         if (!bench_ok) return Outcome{false, "bench failed: " + bench_error};
         return end_to_end(bench);
       }},
      {10, "cohesion direction", 120,
       [&] {
         need_bench();
         if (!bench_ok) return Outcome{false, "bench failed: " + bench_error};
         return cohesion_direction(bench);
       }},
      {11, "EM mechanics", 300, [&] { return em_mechanics(wd); }},
      {12, "determinism", 600, [&] { return determinism(wd); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    // 9 and 10 share one bench run, charged to whichever runs first.
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("%s %2d %s (%.1fs, budget %.0fs)%s: %s\n", pass ? "PASS" : "FAIL", c.id, c.name, secs, c.budget_s,
                in_time ? "" : " over budget", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
