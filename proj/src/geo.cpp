#include "geosid/geo.hpp"

#include <cmath>
#include <string_view>

#include "geosid/common.hpp"

namespace geosid {

namespace {

constexpr std::string_view kBase32 = "0123456789bcdefghjkmnpqrstuvwxyz";

double radians(double deg) { return deg * M_PI / 180.0; }

}  // namespace

bool valid_point(const GeoPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.lon >= -180.0 && p.lon <= 180.0;
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  // Order the operands so that d(a, b) and d(b, a) run identical arithmetic.
  const bool swap = a.lat > b.lat || (a.lat == b.lat && a.lon > b.lon);
  const GeoPoint& p = swap ? b : a;
  const GeoPoint& q = swap ? a : b;
  const double dlat = radians(q.lat - p.lat);
  const double dlon = radians(q.lon - p.lon);
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  double h = s1 * s1 + std::cos(radians(p.lat)) * std::cos(radians(q.lat)) * s2 * s2;
  h = std::min(1.0, std::max(0.0, h));
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

bool within_radius(const GeoPoint& a, const GeoPoint& b, double r_km) {
  if (r_km < 0.0) throw Error("within_radius: negative radius");
  return haversine_km(a, b) <= r_km;
}

std::string geohash_encode(const GeoPoint& p, int precision) {
  if (precision < 1 || precision > 12) throw Error("geohash precision must be in [1, 12]");
  if (!valid_point(p)) throw Error("coordinate out of range");
  double lat_lo = -90.0, lat_hi = 90.0;
  double lon_lo = -180.0, lon_hi = 180.0;
  std::string out;
  out.reserve(static_cast<std::size_t>(precision));
  bool even = true;  // even bits refine longitude
  int bit = 0;
  int ch = 0;
  while (static_cast<int>(out.size()) < precision) {
    if (even) {
      const double mid = (lon_lo + lon_hi) / 2.0;
      if (p.lon >= mid) {
        ch = (ch << 1) | 1;
        lon_lo = mid;
      } else {
        ch <<= 1;
        lon_hi = mid;
      }
    } else {
      const double mid = (lat_lo + lat_hi) / 2.0;
      if (p.lat >= mid) {
        ch = (ch << 1) | 1;
        lat_lo = mid;
      } else {
        ch <<= 1;
        lat_hi = mid;
      }
    }
    even = !even;
    if (++bit == 5) {
      out.push_back(kBase32[static_cast<std::size_t>(ch)]);
      bit = 0;
      ch = 0;
    }
  }
  return out;
}

GeoBox geohash_bounds(const std::string& hash) {
  if (hash.empty() || hash.size() > 12) throw Error("geohash length must be in [1, 12]");
  GeoBox box{-90.0, 90.0, -180.0, 180.0};
  bool even = true;
  for (char c : hash) {
    const auto idx = kBase32.find(c);
    if (idx == std::string_view::npos) throw Error(std::string("invalid geohash character '") + c + "'");
    for (int b = 4; b >= 0; --b) {
      const bool on = (idx >> b) & 1U;
      if (even) {
        const double mid = (box.lon_min + box.lon_max) / 2.0;
        (on ? box.lon_min : box.lon_max) = mid;
      } else {
        const double mid = (box.lat_min + box.lat_max) / 2.0;
        (on ? box.lat_min : box.lat_max) = mid;
      }
      even = !even;
    }
  }
  return box;
}

}  // namespace geosid
