#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "geosid/geo.hpp"

namespace geosid {

enum class Action { kClick, kNavigate, kBook, kReserve, kCollect, kCheckin };

inline constexpr Action kAllActions[] = {Action::kClick,   Action::kNavigate, Action::kBook,
                                         Action::kReserve, Action::kCollect,  Action::kCheckin};

std::string to_string(Action a);
Action parse_action(const std::string& s);

enum class SplitTag { kTrain, kValid, kTest };

std::string to_string(SplitTag t);
SplitTag parse_split_tag(const std::string& s);

struct Context {
  std::optional<std::string> query;
  std::optional<double> lat;
  std::optional<double> lon;
  std::optional<std::string> weather;

  bool operator==(const Context&) const = default;
};

struct Poi {
  std::string id;
  std::string name;
  std::string category;
  std::optional<std::string> brand;
  std::string address;
  double lat = 0.0;
  double lon = 0.0;
  std::string geohash;  // derived from lat/lon, precision kPoiGeohashPrecision
  std::vector<std::pair<std::string, std::string>> extras;

  GeoPoint point() const { return {lat, lon}; }
  bool operator==(const Poi&) const = default;
};

inline constexpr int kPoiGeohashPrecision = 9;

struct Interaction {
  std::string user_id;
  std::string poi_id;
  std::int64_t timestamp = 0;  // UTC seconds
  Action action = Action::kCheckin;
  Context context;

  bool operator==(const Interaction&) const = default;
};

/// A user's events as indices into Dataset::interactions(), ascending by time.
struct Trajectory {
  std::string user_id;
  std::vector<std::size_t> events;
};

/// Immutable check-in corpus. Interactions are kept in one canonical order
/// (ascending timestamp, ties by user id, then input order), and every other
/// index (trajectories, split tags) refers to positions in that order.
class Dataset {
 public:
  Dataset() = default;

  /// Validates and canonicalizes. Throws Error on unknown POIs, bad
  /// coordinates, duplicate POI ids or non-positive timestamps.
  static Dataset build(std::vector<Poi> pois, std::vector<Interaction> interactions);

  const std::map<std::string, Poi>& pois() const { return pois_; }
  const std::vector<Interaction>& interactions() const { return interactions_; }
  const std::map<std::string, Trajectory>& trajectories() const { return trajectories_; }
  const std::vector<SplitTag>& split() const { return split_; }
  bool has_split() const { return !split_.empty(); }

  const Poi& poi(const std::string& id) const;
  bool is_train(std::size_t event) const { return has_split() && split_[event] == SplitTag::kTrain; }

  /// Copy with the given per-interaction tags. Sizes must match.
  Dataset with_split(std::vector<SplitTag> tags) const;

  bool operator==(const Dataset& other) const;

 private:
  std::map<std::string, Poi> pois_;
  std::vector<Interaction> interactions_;
  std::map<std::string, Trajectory> trajectories_;
  std::vector<SplitTag> split_;
};

/// Foursquare-style check-ins: user, venue, category id, category name, lat,
/// lon, tz offset (minutes), "EEE MMM dd HH:mm:ss Z yyyy".
Dataset load_checkins_tsv(const std::filesystem::path& path);

/// Parses the Foursquare time column into UTC seconds.
std::int64_t parse_checkin_time(const std::string& text);

struct SplitFractions {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

Dataset temporal_split(const Dataset& ds, const SplitFractions& fractions);

/// Deterministic attribute tokens for one POI:
/// LON, LAT (2-decimal floor buckets), GEO (geohash-5), CAT, NAME*, ADDR*, BRAND?, extras.
std::vector<std::string> featurize_poi(const Poi& p);

/// Coordinate bucket token body, e.g. 40.719 -> "40.71".
std::string coord_bucket(double degrees);

struct SynthSpec {
  int n_hubs = 4;
  int pois_per_hub = 50;
  int n_users = 100;
  int visits_per_user = 80;
  double hub_radius_km = 2.0;
  std::uint64_t seed = 1;
};

/// Planted-structure generator: POIs clustered around hubs with hub-flavored
/// categories, and users that favor a few home hubs and revisit nearby POIs.
Dataset synthesize_dataset(const SynthSpec& spec);

/// pois.jsonl, interactions.jsonl and split.json under dir.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace geosid
