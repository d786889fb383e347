#include "geosid/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace geosid {

using nlohmann::json;

namespace {

const char* const kSpecials[] = {"<pad>", "<bos>", "<eos>", "<sep>", "<mask_ctx>", "<unk>"};
const char* const kDefaultWeather[] = {"sunny", "cloudy", "rainy", "snowy", "none"};

// Code token spelling matches sid_to_string: <a_5>, <b_3>, ..., <d_k> for dedup.
std::string code_token(int level, int q, int levels) {
  Sid s(static_cast<std::size_t>(level) + 1, 0);
  s.back() = q;
  const std::string full = sid_to_string(s, levels);
  return full.substr(full.rfind('<'));
}

}  // namespace

std::string hour_token(std::int64_t ts) {
  const auto h = ((ts % 86400) + 86400) % 86400 / 3600;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "HOUR:%02d", static_cast<int>(h));
  return buf;
}

std::string weekday_token(std::int64_t ts) {
  const auto days = ts >= 0 ? ts / 86400 : (ts - 86399) / 86400;
  const auto dow = ((days + 4) % 7 + 7) % 7;  // 1970-01-01 was a Thursday; 0 = Sunday
  return "DOW:" + std::to_string(dow);
}

std::string action_token(Action a) { return "ACT:" + to_string(a); }

void Vocab::add(const std::string& token) {
  if (ids_.count(token)) return;
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocab Vocab::build(const Dataset& ds, const std::vector<int>& sizes, int dedup_slots) {
  if (sizes.empty()) throw Error("vocab needs at least one code level");
  if (dedup_slots < 0) throw Error("vocab dedup_slots must be >= 0");
  Vocab v;
  for (const char* s : kSpecials) v.add(s);
  for (const char* k : {kTask, kProfile, kPoi, kIs, kLocated, kWhat, kDescribe}) v.add(k);
  const int levels = static_cast<int>(sizes.size());
  for (int l = 0; l < levels; ++l) {
    for (int q = 0; q < sizes[static_cast<std::size_t>(l)]; ++q) v.add(code_token(l, q, levels));
  }
  for (int k = 0; k < dedup_slots; ++k) v.add(code_token(levels, k, levels));
  for (Action a : kAllActions) v.add(action_token(a));
  for (int h = 0; h < 24; ++h) v.add(hour_token(h * 3600));
  for (int d = 0; d < 7; ++d) v.add("DOW:" + std::to_string(d));
  for (const char* w : kDefaultWeather) v.add(std::string("WX:") + w);
  v.add("LAT:none");
  v.add("LON:none");

  // Sorted harvest keeps ids independent of map/iteration quirks.
  std::set<std::string> harvested;
  for (const auto& [id, p] : ds.pois()) {
    for (auto& t : featurize_poi(p)) harvested.insert(std::move(t));
  }
  for (const auto& r : ds.interactions()) {
    const auto& c = r.context;
    if (c.query) {
      std::istringstream in(*c.query);
      std::string w;
      while (in >> w) {
        std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return std::tolower(ch); });
        harvested.insert("Q:" + w);
      }
    }
    if (c.lat) {
      harvested.insert("LAT:" + coord_bucket(*c.lat));
      harvested.insert("LON:" + coord_bucket(*c.lon));
    }
    if (c.weather) harvested.insert("WX:" + *c.weather);
  }
  for (const auto& t : harvested) v.add(t);
  v.index_codes();
  return v;
}

void Vocab::index_codes() {
  // Code blocks are contiguous; recover their layout from the token spellings.
  code_base_.clear();
  sizes_.clear();
  dedup_base_ = -1;
  dedup_slots_ = 0;
  for (int id = 0; id < size(); ++id) {
    const auto& t = tokens_[static_cast<std::size_t>(id)];
    if (t.size() < 5 || t.front() != '<' || t[2] != '_' || t.back() != '>') continue;
    if (t.find_first_not_of("0123456789", 3) != t.size() - 1) continue;
    const int q = std::stoi(t.substr(3, t.size() - 4));
    if (t[1] == 'd') {
      if (dedup_base_ < 0) dedup_base_ = id;
      if (id - dedup_base_ != q) throw Error("vocab: dedup tokens out of order");
      ++dedup_slots_;
      continue;
    }
    if (q == 0) {
      code_base_.push_back(id);
      sizes_.push_back(0);
    }
    if (code_base_.empty() || id - code_base_.back() != q) throw Error("vocab: code tokens out of order");
    ++sizes_.back();
  }
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw Error("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::code_id(int level, int q) const {
  if (level == levels()) {
    if (q < 0 || q >= dedup_slots_) throw Error("dedup ordinal " + std::to_string(q) + " exceeds reserved slots");
    return dedup_base_ + q;
  }
  if (level < 0 || level > levels() || q < 0 || q >= sizes_[static_cast<std::size_t>(level)])
    throw Error("code out of vocabulary range");
  return code_base_[static_cast<std::size_t>(level)] + q;
}

std::optional<std::pair<int, int>> Vocab::decode_code(int id) const {
  for (int l = 0; l < levels(); ++l) {
    const int base = code_base_[static_cast<std::size_t>(l)];
    if (id >= base && id < base + sizes_[static_cast<std::size_t>(l)]) return std::make_pair(l, id - base);
  }
  if (dedup_base_ >= 0 && id >= dedup_base_ && id < dedup_base_ + dedup_slots_)
    return std::make_pair(levels(), id - dedup_base_);
  return std::nullopt;
}

std::vector<int> Vocab::encode_sid(const Sid& sid) const {
  std::vector<int> out;
  out.reserve(sid.size());
  for (std::size_t l = 0; l < sid.size(); ++l) out.push_back(code_id(static_cast<int>(l), sid[l]));
  return out;
}

void Vocab::save_json(const std::filesystem::path& path) const {
  json j = json::object();
  for (int id = 0; id < size(); ++id) j[std::to_string(id)] = tokens_[static_cast<std::size_t>(id)];
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump() << '\n';
}

Vocab Vocab::load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing artifact: " + path.filename().string());
  const json j = json::parse(in);
  Vocab v;
  v.tokens_.resize(j.size());
  for (const auto& [k, t] : j.items()) {
    const auto id = std::stoul(k);
    if (id >= v.tokens_.size()) throw Error("vocab.json: id out of range " + k);
    v.tokens_[id] = t.get<std::string>();
  }
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.ids_.emplace(v.tokens_[i], static_cast<int>(i));
  v.index_codes();
  return v;
}

}  // namespace geosid
