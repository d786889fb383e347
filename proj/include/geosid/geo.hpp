#pragma once

#include <string>

namespace geosid {

/// Mean Earth radius (IUGG), kilometers.
inline constexpr double kEarthRadiusKm = 6371.0088;

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

struct GeoBox {
  double lat_min, lat_max, lon_min, lon_max;

  bool contains(const GeoPoint& p) const {
    return p.lat >= lat_min && p.lat <= lat_max && p.lon >= lon_min && p.lon <= lon_max;
  }
};

bool valid_point(const GeoPoint& p);

/// Great-circle distance on the sphere of radius kEarthRadiusKm.
double haversine_km(const GeoPoint& a, const GeoPoint& b);

bool within_radius(const GeoPoint& a, const GeoPoint& b, double r_km);

/// Standard base-32 geohash, precision in [1, 12] characters.
std::string geohash_encode(const GeoPoint& p, int precision);

/// Bounding box of the cell named by a geohash string.
GeoBox geohash_bounds(const std::string& hash);

}  // namespace geosid
