#include "geosid/rqkmeans.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

namespace geosid {

using nlohmann::json;

namespace {

std::size_t count_distinct_rows(const RowMatrix& points) {
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    rows.emplace_back(points.row(i).data(), points.row(i).data() + points.cols());
  std::sort(rows.begin(), rows.end());
  return static_cast<std::size_t>(std::unique(rows.begin(), rows.end()) - rows.begin());
}

double sq_dist(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  return (a - b).squaredNorm();
}

struct Assignment {
  std::vector<int> label;
  std::vector<double> dist;  // squared distance to own centroid
  double sse = 0;
};

Assignment assign_all(const RowMatrix& points, const RowMatrix& centroids) {
  const auto n = static_cast<std::size_t>(points.rows());
  Assignment a;
  a.label.resize(n);
  a.dist.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const Eigen::VectorXd d2 =
        (centroids.rowwise() - points.row(static_cast<Eigen::Index>(i))).rowwise().squaredNorm();
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < d2.size(); ++k) {
      if (d2[k] < d2[best]) best = k;
    }
    a.label[i] = static_cast<int>(best);
    a.dist[i] = d2[best];
  });
  a.sse = std::accumulate(a.dist.begin(), a.dist.end(), 0.0);
  return a;
}

/// Gives every empty cluster the point farthest from its current centroid,
/// taken from clusters with more than one member, then reassigns.
void repair_empty(const RowMatrix& points, RowMatrix& centroids, Assignment& a) {
  const int k = static_cast<int>(centroids.rows());
  for (int round = 0; round < k; ++round) {
    std::vector<int> members(static_cast<std::size_t>(k), 0);
    for (int l : a.label) ++members[static_cast<std::size_t>(l)];
    auto empty = std::find(members.begin(), members.end(), 0);
    if (empty == members.end()) return;
    std::size_t far = SIZE_MAX;
    for (std::size_t i = 0; i < a.label.size(); ++i) {
      if (members[static_cast<std::size_t>(a.label[i])] < 2) continue;
      if (far == SIZE_MAX || a.dist[i] > a.dist[far]) far = i;
    }
    if (far == SIZE_MAX) return;
    centroids.row(empty - members.begin()) = points.row(static_cast<Eigen::Index>(far));
    a = assign_all(points, centroids);
  }
}

RowMatrix cluster_means(const RowMatrix& points, const std::vector<int>& label, const RowMatrix& previous) {
  RowMatrix sums = RowMatrix::Zero(previous.rows(), previous.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(previous.rows()), 0);
  for (std::size_t i = 0; i < label.size(); ++i) {
    sums.row(label[i]) += points.row(static_cast<Eigen::Index>(i));
    ++counts[static_cast<std::size_t>(label[i])];
  }
  for (Eigen::Index c = 0; c < sums.rows(); ++c) {
    const auto n = counts[static_cast<std::size_t>(c)];
    if (n == 0) {
      sums.row(c) = previous.row(c);
    } else {
      sums.row(c) /= static_cast<double>(n);
    }
  }
  return sums;
}

RowMatrix kmeanspp_init(const RowMatrix& points, int k, Rng& rng) {
  const auto n = static_cast<std::size_t>(points.rows());
  RowMatrix centroids(k, points.cols());
  std::size_t first = rng.below(n);
  centroids.row(0) = points.row(static_cast<Eigen::Index>(first));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(points.row(static_cast<Eigen::Index>(i)), centroids.row(0));
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0) {
      const double target = rng.uniform() * total;
      double acc = 0;
      pick = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
    }
    centroids.row(c) = points.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], sq_dist(points.row(static_cast<Eigen::Index>(i)), centroids.row(c)));
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const RowMatrix& points, int k, int max_iters, double tol, std::uint64_t seed) {
  if (points.rows() == 0) throw Error("kmeans: empty input");
  if (k < 1) throw Error("kmeans: k must be >= 1");
  if (max_iters < 0) throw Error("kmeans: iters must be >= 0");
  KMeansResult out;
  const auto distinct = count_distinct_rows(points);
  if (static_cast<std::size_t>(k) > distinct) {
    out.warnings.push_back("kmeans: k=" + std::to_string(k) + " exceeds " + std::to_string(distinct) +
                           " distinct points; using k=" + std::to_string(distinct));
    k = static_cast<int>(distinct);
  }
  Rng rng(seed);
  RowMatrix centroids = kmeanspp_init(points, k, rng);
  Assignment cur = assign_all(points, centroids);
  repair_empty(points, centroids, cur);
  out.objective.push_back(cur.sse);
  for (int it = 0; it < max_iters; ++it) {
    if (cur.sse == 0.0) break;
    RowMatrix next_c = cluster_means(points, cur.label, centroids);
    Assignment next = assign_all(points, next_c);
    repair_empty(points, next_c, next);
    if (next.sse > cur.sse) break;  // rounding noise at convergence; keep the better state
    const double improvement = (cur.sse - next.sse) / cur.sse;
    centroids = std::move(next_c);
    cur = std::move(next);
    out.objective.push_back(cur.sse);
    if (improvement < tol) break;
  }
  out.centroids = std::move(centroids);
  out.assignments = std::move(cur.label);
  return out;
}

int assign_nearest(const Eigen::Ref<const Eigen::VectorXd>& point, const RowMatrix& centroids) {
  if (point.size() != centroids.cols()) throw Error("assign_nearest: dimension mismatch");
  if (centroids.rows() == 0) throw Error("assign_nearest: empty codebook");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
    const double d = (centroids.row(k).transpose() - point).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

int assign_nearest(const Eigen::Ref<const Eigen::VectorXd>& point, const Codebook& cb) {
  return assign_nearest(point, cb.centroids);
}

void RqConfig::validate() const {
  if (levels < 1) throw Error("rq.levels must be >= 1");
  if (static_cast<int>(sizes.size()) != levels) throw Error("rq.sizes length must equal rq.levels");
  for (int s : sizes) {
    if (s < 2) throw Error("rq.sizes entries must be >= 2");
  }
  if (kmeans_iters < 0) throw Error("rq.kmeans_iters must be >= 0");
  if (tol < 0) throw Error("rq.tol must be >= 0");
}

int SidAssignment::max_dedup_ordinal() const {
  if (!dedup) return -1;
  int m = 0;
  for (const auto& [id, s] : sids) m = std::max(m, s.back());
  return m;
}

std::map<Sid, std::vector<std::string>> SidAssignment::reverse() const {
  std::map<Sid, std::vector<std::string>> r;
  for (const auto& [id, s] : sids) r[s].push_back(id);
  return r;
}

const Sid& SidAssignment::at(const std::string& poi_id) const {
  auto it = sids.find(poi_id);
  if (it == sids.end()) throw Error("POI missing SID: " + poi_id);
  return it->second;
}

void SidAssignment::validate() const {
  for (const auto& [id, s] : sids) {
    if (s.size() != sid_length()) throw Error("SID of " + id + " has wrong length");
    for (std::size_t l = 0; l < sizes.size(); ++l) {
      if (s[l] < 0 || s[l] >= sizes[l]) throw Error("SID of " + id + " has out-of-range code");
    }
    if (dedup && s.back() < 0) throw Error("SID of " + id + " has negative dedup ordinal");
  }
}

void assign_dedup_ordinals(SidAssignment& a) {
  if (!a.dedup) return;
  const auto L = a.sizes.size();
  std::map<Sid, std::vector<std::string>> groups;
  for (const auto& [id, s] : a.sids) groups[Sid(s.begin(), s.begin() + static_cast<long>(L))].push_back(id);
  std::size_t colliding = 0;
  for (const auto& [codes, members] : groups) {
    if (members.size() > 1) colliding += members.size();
    for (std::size_t k = 0; k < members.size(); ++k) {
      Sid full = codes;
      full.push_back(static_cast<int>(k));
      a.sids[members[k]] = std::move(full);
    }
  }
  a.collision_rate = a.sids.empty() ? 0.0 : static_cast<double>(colliding) / static_cast<double>(a.sids.size());
}

RqResult rq_tokenize(const EmbeddingTable& table, const RqConfig& cfg) {
  cfg.validate();
  if (table.size() == 0) throw Error("rq_tokenize: empty embedding table");
  RqResult out;
  RowMatrix residual = table.rows().cast<double>();
  const auto n = static_cast<std::size_t>(residual.rows());
  std::vector<Sid> codes(n);
  auto mean_norm = [&] { return residual.rowwise().norm().mean(); };
  out.assignment.residual_norms.push_back(mean_norm());
  for (int l = 0; l < cfg.levels; ++l) {
    auto km = kmeans(residual, cfg.sizes[static_cast<std::size_t>(l)], cfg.kmeans_iters, cfg.tol,
                     splitmix64(cfg.seed + static_cast<std::uint64_t>(l)));
    for (auto& w : km.warnings) out.warnings.push_back("level " + std::to_string(l + 1) + ": " + w);
    Codebook cb{l + 1, std::move(km.centroids)};
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const int q = assign_nearest(residual.row(row).transpose(), cb);
      codes[i].push_back(q);
      residual.row(row) -= cb.centroids.row(q);
    }
    out.assignment.residual_norms.push_back(mean_norm());
    out.codebooks.push_back(std::move(cb));
  }
  out.assignment.sizes = cfg.sizes;
  out.assignment.dedup = cfg.dedup;
  for (std::size_t i = 0; i < n; ++i) {
    if (cfg.dedup) codes[i].push_back(0);
    out.assignment.sids.emplace(table.ids()[i], std::move(codes[i]));
  }
  if (cfg.dedup) {
    assign_dedup_ordinals(out.assignment);
  } else {
    std::size_t colliding = 0;
    for (const auto& [sid, members] : out.assignment.reverse()) {
      if (members.size() > 1) colliding += members.size();
    }
    out.assignment.collision_rate = static_cast<double>(colliding) / static_cast<double>(n);
  }
  out.final_residuals = std::move(residual);
  return out;
}

namespace {

char level_letter(int level) {
  // 'd' is reserved for the dedup ordinal.
  static const char kLetters[] = "abcefghijklmnopqrstuvwxyz";
  if (level < 0 || level >= static_cast<int>(sizeof(kLetters) - 1)) throw Error("too many SID levels");
  return kLetters[level];
}

}  // namespace

std::string sid_to_string(const Sid& sid, int levels) {
  std::string out;
  for (std::size_t i = 0; i < sid.size(); ++i) {
    const char letter = static_cast<int>(i) < levels ? level_letter(static_cast<int>(i)) : 'd';
    out += '<';
    out += letter;
    out += '_';
    out += std::to_string(sid[i]);
    out += '>';
  }
  return out;
}

Sid parse_sid(const std::string& text, int levels) {
  Sid out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto close = text.find('>', pos);
    if (text[pos] != '<' || close == std::string::npos || close < pos + 4 || text[pos + 2] != '_')
      throw Error("malformed SID string '" + text + "'");
    const int idx = static_cast<int>(out.size());
    const char expected = idx < levels ? level_letter(idx) : 'd';
    if (text[pos + 1] != expected) throw Error("malformed SID string '" + text + "'");
    const std::string num = text.substr(pos + 3, close - pos - 3);
    if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos)
      throw Error("malformed SID string '" + text + "'");
    out.push_back(std::stoi(num));
    pos = close + 1;
  }
  if (static_cast<int>(out.size()) < levels || static_cast<int>(out.size()) > levels + 1)
    throw Error("malformed SID string '" + text + "'");
  return out;
}

namespace {

double round9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

}  // namespace

void save_sids_json(const std::vector<Codebook>& codebooks, const SidAssignment& a, const std::filesystem::path& path) {
  json j;
  j["sizes"] = a.sizes;
  j["dedup"] = a.dedup;
  json cbs = json::array();
  for (const auto& cb : codebooks) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < cb.centroids.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < cb.centroids.cols(); ++c) row.push_back(round9(cb.centroids(r, c)));
      rows.push_back(std::move(row));
    }
    cbs.push_back(std::move(rows));
  }
  j["codebooks"] = std::move(cbs);
  json sids = json::object();
  for (const auto& [id, s] : a.sids) sids[id] = s;
  j["sids"] = std::move(sids);
  json norms = json::array();
  for (double v : a.residual_norms) norms.push_back(round9(v));
  j["residual_norms"] = std::move(norms);
  j["collision_rate"] = round9(a.collision_rate);
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump() << '\n';
}

LoadedSids load_sids_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing artifact: " + path.filename().string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.filename().string() + ": " + e.what());
  }
  LoadedSids out;
  auto& a = out.assignment;
  a.sizes = j.at("sizes").get<std::vector<int>>();
  a.dedup = j.value("dedup", false);
  int level = 1;
  for (const auto& rows : j.at("codebooks")) {
    Codebook cb;
    cb.level = level++;
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = n > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
    cb.centroids.resize(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) cb.centroids(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
    }
    out.codebooks.push_back(std::move(cb));
  }
  for (const auto& [id, s] : j.at("sids").items()) a.sids[id] = s.get<Sid>();
  if (j.contains("residual_norms")) a.residual_norms = j["residual_norms"].get<std::vector<double>>();
  a.collision_rate = j.value("collision_rate", 0.0);
  a.validate();
  return out;
}

}  // namespace geosid
