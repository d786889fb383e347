#include "geosid/corpus.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "geosid/common.hpp"
#include "json.hpp"

namespace geosid {

using nlohmann::json;

std::string to_string(Action a) {
  switch (a) {
    case Action::kClick: return "click";
    case Action::kNavigate: return "navigate";
    case Action::kBook: return "book";
    case Action::kReserve: return "reserve";
    case Action::kCollect: return "collect";
    case Action::kCheckin: return "checkin";
  }
  return "checkin";
}

Action parse_action(const std::string& s) {
  for (Action a : kAllActions) {
    if (to_string(a) == s) return a;
  }
  throw Error("unknown action '" + s + "'");
}

std::string to_string(SplitTag t) {
  switch (t) {
    case SplitTag::kTrain: return "train";
    case SplitTag::kValid: return "valid";
    case SplitTag::kTest: return "test";
  }
  return "train";
}

SplitTag parse_split_tag(const std::string& s) {
  if (s == "train") return SplitTag::kTrain;
  if (s == "valid") return SplitTag::kValid;
  if (s == "test") return SplitTag::kTest;
  throw Error("unknown split tag '" + s + "'");
}

// ---------------------------------------------------------------------------
// Dataset

Dataset Dataset::build(std::vector<Poi> pois, std::vector<Interaction> interactions) {
  Dataset ds;
  for (auto& p : pois) {
    if (!valid_point(p.point())) throw Error("POI " + p.id + ": coordinate out of range");
    p.geohash = geohash_encode(p.point(), kPoiGeohashPrecision);
    const std::string id = p.id;
    if (!ds.pois_.emplace(id, std::move(p)).second) throw Error("duplicate POI id " + id);
  }
  for (const auto& r : interactions) {
    if (!ds.pois_.count(r.poi_id)) throw Error("interaction references unknown POI " + r.poi_id);
    if (r.timestamp <= 0) throw Error("interaction timestamp must be positive");
    if (r.context.lat.has_value() != r.context.lon.has_value())
      throw Error("context lat and lon must be given together");
    if (r.context.lat && !valid_point({*r.context.lat, *r.context.lon}))
      throw Error("context coordinate out of range");
  }
  std::stable_sort(interactions.begin(), interactions.end(), [](const Interaction& a, const Interaction& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.user_id < b.user_id;
  });
  ds.interactions_ = std::move(interactions);
  for (std::size_t i = 0; i < ds.interactions_.size(); ++i) {
    const auto& user = ds.interactions_[i].user_id;
    auto& traj = ds.trajectories_[user];
    traj.user_id = user;
    traj.events.push_back(i);
  }
  return ds;
}

const Poi& Dataset::poi(const std::string& id) const {
  auto it = pois_.find(id);
  if (it == pois_.end()) throw Error("unknown POI id " + id);
  return it->second;
}

Dataset Dataset::with_split(std::vector<SplitTag> tags) const {
  if (tags.size() != interactions_.size()) throw Error("split size does not match interaction count");
  Dataset copy = *this;
  copy.split_ = std::move(tags);
  return copy;
}

bool Dataset::operator==(const Dataset& other) const {
  return pois_ == other.pois_ && interactions_ == other.interactions_ && split_ == other.split_;
}

// ---------------------------------------------------------------------------
// TSV ingestion

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw Error("cannot parse " + what + " '" + s + "'");
  }
  if (used != s.size()) throw Error("cannot parse " + what + " '" + s + "'");
  return v;
}

int month_index(const std::string& m) {
  static const char* kMonths[] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                  "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  for (int i = 0; i < 12; ++i) {
    if (m == kMonths[i]) return i + 1;
  }
  throw Error("unknown month '" + m + "'");
}

}  // namespace

std::int64_t parse_checkin_time(const std::string& text) {
  std::istringstream in(text);
  std::string dow, mon, hms, zone;
  int day = 0, year = 0;
  if (!(in >> dow >> mon >> day >> hms >> zone >> year)) throw Error("malformed time '" + text + "'");
  int hh = 0, mm = 0, ss = 0;
  if (std::sscanf(hms.c_str(), "%d:%d:%d", &hh, &mm, &ss) != 3) throw Error("malformed time '" + text + "'");
  if (zone.size() != 5 || (zone[0] != '+' && zone[0] != '-')) throw Error("malformed zone '" + zone + "'");
  const int zh = std::stoi(zone.substr(1, 2));
  const int zm = std::stoi(zone.substr(3, 2));
  const int offset = (zone[0] == '-' ? -1 : 1) * (zh * 3600 + zm * 60);
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month_index(mon))},
                           std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok()) throw Error("invalid date in '" + text + "'");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + hh * 3600 + mm * 60 + ss - offset;
}

Dataset load_checkins_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<Poi> pois;
  std::set<std::string> seen_venues;
  std::vector<Interaction> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (f.size() != 8) throw Error(where + "expected 8 tab-separated fields, got " + std::to_string(f.size()));
    double lat, lon;
    std::int64_t ts;
    try {
      lat = parse_double(f[4], "latitude");
      lon = parse_double(f[5], "longitude");
      ts = parse_checkin_time(f[7]);
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
    if (!valid_point({lat, lon})) throw Error(where + "coordinate out of range");
    if (f[0].empty() || f[1].empty()) throw Error(where + "empty user or venue id");
    if (seen_venues.insert(f[1]).second) {
      Poi p;
      p.id = f[1];
      p.name = f[3];
      p.category = f[3];
      p.lat = lat;
      p.lon = lon;
      pois.push_back(std::move(p));
    }
    Interaction r;
    r.user_id = f[0];
    r.poi_id = f[1];
    r.timestamp = ts;
    r.action = Action::kCheckin;
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw Error("empty check-in file " + path.string());
  Dataset ds = Dataset::build(std::move(pois), std::move(rows));
  // Collapse repeated (user, poi, timestamp) rows that end up adjacent in a trajectory.
  std::vector<Interaction> kept;
  kept.reserve(ds.interactions().size());
  for (const auto& [user, traj] : ds.trajectories()) {
    const Interaction* prev = nullptr;
    for (auto idx : traj.events) {
      const auto& r = ds.interactions()[idx];
      if (prev && prev->poi_id == r.poi_id && prev->timestamp == r.timestamp) continue;
      kept.push_back(r);
      prev = &r;
    }
  }
  std::vector<Poi> poi_list;
  for (const auto& [id, p] : ds.pois()) poi_list.push_back(p);
  return Dataset::build(std::move(poi_list), std::move(kept));
}

// ---------------------------------------------------------------------------
// Split

Dataset temporal_split(const Dataset& ds, const SplitFractions& fr) {
  if (fr.train <= 0 || fr.valid <= 0 || fr.test <= 0) throw Error("fractions must be positive");
  if (std::abs(fr.train + fr.valid + fr.test - 1.0) > 1e-9) throw Error("fractions must sum to 1");
  const std::size_t n = ds.interactions().size();
  if (n < 3) throw Error("temporal_split needs at least 3 interactions");
  // Interactions are already in global timestamp order.
  const auto n_train = static_cast<std::size_t>(std::floor(fr.train * static_cast<double>(n) + 1e-9));
  const auto n_valid = static_cast<std::size_t>(std::floor(fr.valid * static_cast<double>(n) + 1e-9));
  std::vector<SplitTag> tags(n, SplitTag::kTest);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) {
      tags[i] = SplitTag::kTrain;
    } else if (i < n_train + n_valid) {
      tags[i] = SplitTag::kValid;
    }
  }
  return ds.with_split(std::move(tags));
}

// ---------------------------------------------------------------------------
// Featurization

std::string coord_bucket(double degrees) {
  const auto b = static_cast<long long>(std::floor(degrees * 100.0 + 1e-9));
  const long long mag = b < 0 ? -b : b;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%lld.%02lld", b < 0 ? "-" : "", mag / 100, mag % 100);
  return buf;
}

namespace {

void append_words(std::vector<std::string>& out, const std::string& prefix, const std::string& text) {
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(prefix + w);
}

}  // namespace

std::vector<std::string> featurize_poi(const Poi& p) {
  std::vector<std::string> out;
  out.push_back("LON:" + coord_bucket(p.lon));
  out.push_back("LAT:" + coord_bucket(p.lat));
  out.push_back("GEO:" + geohash_encode(p.point(), 5));
  if (!p.category.empty()) out.push_back("CAT:" + p.category);
  append_words(out, "NAME:", p.name);
  append_words(out, "ADDR:", p.address);
  if (p.brand && !p.brand->empty()) out.push_back("BRAND:" + *p.brand);
  for (const auto& [k, v] : p.extras) out.push_back(k + ":" + v);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

const char* const kCategories[] = {
    "Coffee Shop", "Bakery",     "Pizza Place",  "Sushi Bar",   "Gym",         "Park",
    "Bookstore",   "Museum",     "Bar",          "Noodle House", "Cinema",     "Pharmacy",
    "Supermarket", "Hotel",      "Office",       "School",      "Hospital",    "Train Station",
    "Mall",        "Library",    "Steakhouse",   "Tea House",   "Art Gallery", "Bike Shop"};
constexpr int kNumCategories = sizeof(kCategories) / sizeof(kCategories[0]);

const char* const kAdjectives[] = {"Golden", "Blue",   "Urban", "Corner", "Little", "Grand",
                                   "Harbor", "Maple",  "North", "Silver", "Sunny",  "Royal",
                                   "Hidden", "Central", "Old",  "New"};
const char* const kStreets[] = {"Oak",   "Pine",  "Cedar", "Elm",    "Birch", "Walnut", "Cherry",
                                "Hill",  "Lake",  "River", "Market", "Park",  "Bridge", "Church",
                                "Mill",  "Union", "Grove", "Spring", "Ridge", "Valley"};
const char* const kPrices[] = {"$", "$$", "$$$", "$$$$"};
const char* const kPeriods[] = {"morning", "afternoon", "evening", "night"};
const char* const kWeather[] = {"sunny", "cloudy", "rainy", "snowy"};

constexpr double kBaseLat = 40.0;
constexpr double kBaseLon = -75.0;
constexpr double kBoxKm = 100.0;
constexpr double kKmPerDegLat = M_PI * kEarthRadiusKm / 180.0;

constexpr int kFavorites = 8;
constexpr int kNeighbors = 10;

template <typename T, std::size_t N>
const T& pick(const T (&arr)[N], Rng& rng) {
  return arr[rng.below(N)];
}

GeoPoint offset_km(GeoPoint origin, double north_km, double east_km) {
  const double lat = origin.lat + north_km / kKmPerDegLat;
  const double lon = origin.lon + east_km / (kKmPerDegLat * std::cos(origin.lat * M_PI / 180.0));
  return {lat, lon};
}

std::string padded(const char* prefix, int v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, v);
  return buf;
}

}  // namespace

Dataset synthesize_dataset(const SynthSpec& spec) {
  if (spec.n_hubs < 1 || spec.pois_per_hub < 1 || spec.n_users < 1 || spec.visits_per_user < 1)
    throw Error("synth counts must be >= 1");
  if (!(spec.hub_radius_km > 0)) throw Error("hub_radius_km must be positive");
  Rng rng(spec.seed);

  struct Hub {
    GeoPoint center;
    int theme[3];
    int streets[4];
  };
  std::vector<Hub> hubs(static_cast<std::size_t>(spec.n_hubs));
  for (auto& h : hubs) {
    h.center = offset_km({kBaseLat, kBaseLon}, rng.uniform(0, kBoxKm), rng.uniform(0, kBoxKm));
    for (int& t : h.theme) t = static_cast<int>(rng.below(kNumCategories));
    for (int& s : h.streets) s = static_cast<int>(rng.below(std::size(kStreets)));
  }

  std::vector<Poi> pois;
  std::vector<int> poi_hub;
  std::vector<std::vector<int>> hub_members(hubs.size());
  for (int h = 0; h < spec.n_hubs; ++h) {
    for (int k = 0; k < spec.pois_per_hub; ++k) {
      const auto& hub = hubs[static_cast<std::size_t>(h)];
      const double r = spec.hub_radius_km * std::sqrt(rng.uniform());
      const double theta = rng.uniform(0, 2 * M_PI);
      const GeoPoint at = offset_km(hub.center, r * std::cos(theta), r * std::sin(theta));
      const int cat = rng.uniform() < 0.7 ? hub.theme[rng.below(3)] : static_cast<int>(rng.below(kNumCategories));
      Poi p;
      p.id = padded("poi_", static_cast<int>(pois.size()), 5);
      p.category = kCategories[cat];
      const std::string head = p.category.substr(p.category.rfind(' ') + 1);
      p.name = std::string(pick(kAdjectives, rng)) + " " + head;
      p.address = std::to_string(1 + rng.below(400)) + " " + kStreets[hub.streets[rng.below(4)]] + " St District" +
                  std::to_string(h);
      p.lat = at.lat;
      p.lon = at.lon;
      p.extras = {{"PRICE", pick(kPrices, rng)}, {"ACTIVE", pick(kPeriods, rng)}};
      hub_members[static_cast<std::size_t>(h)].push_back(static_cast<int>(pois.size()));
      poi_hub.push_back(h);
      pois.push_back(std::move(p));
    }
  }

  // Nearest hub-mates of each POI (excluding itself), ties by index.
  std::vector<std::vector<int>> neighbors(pois.size());
  for (std::size_t i = 0; i < pois.size(); ++i) {
    const auto& mates = hub_members[static_cast<std::size_t>(poi_hub[i])];
    std::vector<std::pair<double, int>> d;
    for (int j : mates) {
      if (static_cast<std::size_t>(j) == i) continue;
      d.emplace_back(haversine_km(pois[i].point(), pois[static_cast<std::size_t>(j)].point()), j);
    }
    std::sort(d.begin(), d.end());
    for (std::size_t k = 0; k < d.size() && k < kNeighbors; ++k) neighbors[i].push_back(d[k].second);
  }

  const std::int64_t t0 = 1333000000;  // 2012-03-29
  std::vector<Interaction> rows;
  for (int u = 0; u < spec.n_users; ++u) {
    const std::string user = padded("user_", u, 4);
    const int n_home = std::min(spec.n_hubs, 2 + static_cast<int>(rng.below(2)));
    std::vector<int> home;
    while (static_cast<int>(home.size()) < n_home) {
      const int h = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_hubs)));
      if (std::find(home.begin(), home.end(), h) == home.end()) home.push_back(h);
    }
    std::vector<int> home_pois;
    for (int h : home) {
      const auto& m = hub_members[static_cast<std::size_t>(h)];
      home_pois.insert(home_pois.end(), m.begin(), m.end());
    }
    std::vector<int> favorites;
    for (int k = 0; k < kFavorites; ++k) favorites.push_back(home_pois[rng.below(home_pois.size())]);
    // Zipf-like weights over favorite ranks.
    std::vector<double> fav_cdf;
    double acc = 0;
    for (int k = 0; k < kFavorites; ++k) fav_cdf.push_back(acc += 1.0 / (k + 1));

    std::int64_t ts = t0 + static_cast<std::int64_t>(rng.below(86400 * 3));
    int current = -1;
    for (int v = 0; v < spec.visits_per_user; ++v) {
      int next;
      const double roll = rng.uniform();
      if (current < 0) {
        next = home_pois[rng.below(home_pois.size())];
      } else if (roll < 0.45) {
        const double x = rng.uniform() * acc;
        std::size_t k = 0;
        while (k + 1 < fav_cdf.size() && fav_cdf[k] <= x) ++k;
        next = favorites[k];
      } else if (roll < 0.85 && !neighbors[static_cast<std::size_t>(current)].empty()) {
        const auto& nb = neighbors[static_cast<std::size_t>(current)];
        next = nb[rng.below(nb.size())];
      } else if (roll < 0.97) {
        next = home_pois[rng.below(home_pois.size())];
      } else {
        next = static_cast<int>(rng.below(pois.size()));
      }
      Interaction r;
      r.user_id = user;
      r.poi_id = pois[static_cast<std::size_t>(next)].id;
      r.timestamp = ts;
      const double a = rng.uniform();
      r.action = a < 0.4    ? Action::kClick
                 : a < 0.7  ? Action::kNavigate
                 : a < 0.8  ? Action::kBook
                 : a < 0.85 ? Action::kReserve
                 : a < 0.9  ? Action::kCollect
                            : Action::kCheckin;
      if (rng.uniform() < 0.3) r.context.query = pois[static_cast<std::size_t>(next)].category;
      const GeoPoint here = current >= 0 ? pois[static_cast<std::size_t>(current)].point()
                                         : hubs[static_cast<std::size_t>(home[0])].center;
      const GeoPoint jitter = offset_km(here, rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
      r.context.lat = jitter.lat;
      r.context.lon = jitter.lon;
      const auto day = static_cast<std::uint64_t>(ts / 86400);
      r.context.weather = kWeather[splitmix64(day ^ spec.seed) % std::size(kWeather)];
      rows.push_back(std::move(r));
      current = next;
      ts += 1800 + static_cast<std::int64_t>(rng.below(6 * 3600));
    }
  }
  return Dataset::build(std::move(pois), std::move(rows));
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

json poi_to_json(const Poi& p) {
  json j;
  j["id"] = p.id;
  j["name"] = p.name;
  j["category"] = p.category;
  j["brand"] = p.brand ? json(*p.brand) : json(nullptr);
  j["address"] = p.address;
  j["lat"] = p.lat;
  j["lon"] = p.lon;
  j["geohash"] = p.geohash;
  json extras = json::array();
  for (const auto& [k, v] : p.extras) extras.push_back(json::array({k, v}));
  j["extras"] = extras;
  return j;
}

Poi poi_from_json(const json& j) {
  Poi p;
  p.id = j.at("id").get<std::string>();
  p.name = j.at("name").get<std::string>();
  p.category = j.at("category").get<std::string>();
  if (j.contains("brand") && !j["brand"].is_null()) p.brand = j["brand"].get<std::string>();
  p.address = j.value("address", "");
  p.lat = j.at("lat").get<double>();
  p.lon = j.at("lon").get<double>();
  if (j.contains("extras")) {
    for (const auto& kv : j["extras"]) p.extras.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
  }
  return p;
}

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

json interaction_to_json(const Interaction& r) {
  json ctx;
  ctx["query"] = opt(r.context.query);
  ctx["lat"] = opt(r.context.lat);
  ctx["lon"] = opt(r.context.lon);
  ctx["weather"] = opt(r.context.weather);
  return json{{"user_id", r.user_id},
              {"poi_id", r.poi_id},
              {"timestamp", r.timestamp},
              {"action", to_string(r.action)},
              {"context", ctx}};
}

Interaction interaction_from_json(const json& j) {
  Interaction r;
  r.user_id = j.at("user_id").get<std::string>();
  r.poi_id = j.at("poi_id").get<std::string>();
  r.timestamp = j.at("timestamp").get<std::int64_t>();
  r.action = parse_action(j.at("action").get<std::string>());
  if (j.contains("context")) {
    const auto& c = j["context"];
    if (c.contains("query") && !c["query"].is_null()) r.context.query = c["query"].get<std::string>();
    if (c.contains("lat") && !c["lat"].is_null()) r.context.lat = c["lat"].get<double>();
    if (c.contains("lon") && !c["lon"].is_null()) r.context.lon = c["lon"].get<double>();
    if (c.contains("weather") && !c["weather"].is_null()) r.context.weather = c["weather"].get<std::string>();
  }
  return r;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "pois.jsonl");
    for (const auto& [id, p] : ds.pois()) out << poi_to_json(p).dump() << '\n';
  }
  {
    auto out = open_out(dir / "interactions.jsonl");
    for (const auto& r : ds.interactions()) out << interaction_to_json(r).dump() << '\n';
  }
  auto out = open_out(dir / "split.json");
  json split = json::object();
  for (std::size_t i = 0; i < ds.split().size(); ++i) split[std::to_string(i)] = to_string(ds.split()[i]);
  out << split.dump() << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  auto read_lines = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("missing artifact: " + p.filename().string());
    std::vector<json> rows;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        rows.push_back(json::parse(line));
      } catch (const json::exception& e) {
        throw Error(p.filename().string() + " line " + std::to_string(n) + ": " + e.what());
      }
    }
    return rows;
  };
  std::vector<Poi> pois;
  for (const auto& j : read_lines(dir / "pois.jsonl")) pois.push_back(poi_from_json(j));
  std::vector<Interaction> rows;
  for (const auto& j : read_lines(dir / "interactions.jsonl")) rows.push_back(interaction_from_json(j));
  Dataset ds = Dataset::build(std::move(pois), std::move(rows));
  std::ifstream sin(dir / "split.json");
  if (!sin) return ds;
  const json split = json::parse(sin);
  if (split.empty()) return ds;
  std::vector<SplitTag> tags(ds.interactions().size(), SplitTag::kTrain);
  if (split.size() != tags.size()) throw Error("split.json does not cover every interaction");
  for (const auto& [k, v] : split.items()) {
    const auto idx = std::stoul(k);
    if (idx >= tags.size()) throw Error("split.json index out of range: " + k);
    tags[idx] = parse_split_tag(v.get<std::string>());
  }
  return ds.with_split(std::move(tags));
}

}  // namespace geosid
