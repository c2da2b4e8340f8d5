#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <numbers>

#include "mapval/error.hpp"

namespace mapval::geo {

/// WGS84 semi-major axis, used as the sphere radius of the local projection.
inline constexpr double kEarthRadius = 6378137.0;

inline constexpr double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Wraps any angle in degrees into [0, 360).
inline double normalize_heading(double deg) {
  double h = std::fmod(deg, 360.0);
  if (h < 0.0) h += 360.0;
  if (h >= 360.0) h -= 360.0;  // fmod of tiny negatives can round up to 360
  return h;
}

struct GeoPoint {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees

  bool valid() const {
    return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 &&
           lon >= -180.0 && lon <= 180.0;
  }
  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

/// Position plus heading in degrees clockwise from true north.
class Pose {
 public:
  Pose() = default;
  Pose(GeoPoint position, double heading_deg)
      : position_(position), heading_(normalize_heading(heading_deg)) {}

  const GeoPoint& position() const noexcept { return position_; }
  double heading() const noexcept { return heading_; }

  friend bool operator==(const Pose&, const Pose&) = default;

 private:
  GeoPoint position_{};
  double heading_ = 0.0;
};

struct LocalPoint {
  double east = 0.0;   // meters
  double north = 0.0;  // meters

  friend LocalPoint operator+(LocalPoint a, LocalPoint b) { return {a.east + b.east, a.north + b.north}; }
  friend LocalPoint operator-(LocalPoint a, LocalPoint b) { return {a.east - b.east, a.north - b.north}; }
  friend LocalPoint operator*(double s, LocalPoint a) { return {s * a.east, s * a.north}; }
  friend bool operator==(const LocalPoint&, const LocalPoint&) = default;
};

inline double norm(LocalPoint p) { return std::hypot(p.east, p.north); }
inline double dot(LocalPoint a, LocalPoint b) { return a.east * b.east + a.north * b.north; }

/// Heading (clockwise from north, [0, 360)) of a direction vector.
inline double heading_of(LocalPoint dir) {
  return normalize_heading(rad2deg(std::atan2(dir.east, dir.north)));
}

/// Unit vector pointing along a heading.
inline LocalPoint heading_vector(double heading_deg) {
  const double h = deg2rad(heading_deg);
  return {std::sin(h), std::cos(h)};
}

/// Equirectangular tangent frame anchored at `origin`.
struct LocalFrame {
  GeoPoint origin{};
};

struct GeoBBox {
  double min_lat = 0.0, min_lon = 0.0, max_lat = 0.0, max_lon = 0.0;

  bool contains(const GeoPoint& p) const {
    return p.lat >= min_lat && p.lat <= max_lat && p.lon >= min_lon && p.lon <= max_lon;
  }
};

namespace detail {

inline void require_valid(const GeoPoint& p, const char* what) {
  if (!p.valid()) throw InvalidInput(std::string(what) + ": coordinate out of range or not finite");
}

inline double wrap_lon_delta(double d) {
  if (d > 180.0) d -= 360.0;
  if (d < -180.0) d += 360.0;
  return d;
}

/// Projection without the small-area precondition; used for coarse culling of far geometry.
inline LocalPoint project(const GeoPoint& origin, const GeoPoint& p) {
  const double dlat = deg2rad(p.lat - origin.lat);
  const double dlon = deg2rad(wrap_lon_delta(p.lon - origin.lon));
  return {dlon * kEarthRadius * std::cos(deg2rad(origin.lat)), dlat * kEarthRadius};
}

}  // namespace detail

inline LocalPoint to_local(const LocalFrame& frame, const GeoPoint& p) {
  detail::require_valid(frame.origin, "to_local origin");
  detail::require_valid(p, "to_local point");
  if (std::abs(p.lat - frame.origin.lat) >= 1.0)
    throw InvalidInput("to_local: point lies more than 1 degree of latitude from the frame origin");
  return detail::project(frame.origin, p);
}

inline GeoPoint from_local(const LocalFrame& frame, const LocalPoint& p) {
  detail::require_valid(frame.origin, "from_local origin");
  if (!std::isfinite(p.east) || !std::isfinite(p.north))
    throw InvalidInput("from_local: non-finite local point");
  const double lat = frame.origin.lat + rad2deg(p.north / kEarthRadius);
  double lon = frame.origin.lon +
               rad2deg(p.east / (kEarthRadius * std::cos(deg2rad(frame.origin.lat))));
  if (lon > 180.0) lon -= 360.0;
  if (lon < -180.0) lon += 360.0;
  return {lat, lon};
}

/// Vehicle-centred coordinates: `east` is lateral (right of travel), `north` is forward.
inline LocalPoint to_vehicle_frame(const Pose& pose, const LocalFrame& frame, const LocalPoint& p) {
  const LocalPoint d = p - to_local(frame, pose.position());
  const double h = deg2rad(pose.heading());
  const double s = std::sin(h);
  const double c = std::cos(h);
  return {d.east * c - d.north * s, d.east * s + d.north * c};
}

/// Inverse of to_vehicle_frame.
inline LocalPoint from_vehicle_frame(const Pose& pose, const LocalFrame& frame, const LocalPoint& v) {
  const double h = deg2rad(pose.heading());
  const double s = std::sin(h);
  const double c = std::cos(h);
  const LocalPoint d{v.east * c + v.north * s, -v.east * s + v.north * c};
  return to_local(frame, pose.position()) + d;
}

inline GeoBBox bbox_around(const Pose& pose, double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw InvalidInput("bbox_around: radius must be > 0");
  const GeoPoint& c = pose.position();
  detail::require_valid(c, "bbox_around");
  const double dlat = rad2deg(radius / kEarthRadius);
  // Same east scaling as to_local about the pose, so the box holds every preimage of the disc.
  const double dlon = rad2deg(radius / (kEarthRadius * std::max(std::cos(deg2rad(c.lat)), 1e-12)));
  return {c.lat - dlat, c.lon - dlon, c.lat + dlat, c.lon + dlon};
}

/// Ingestion-side heading convention for sources that do not report clockwise-from-north.
struct HeadingConvention {
  double offset_deg = 0.0;
  bool counter_clockwise = false;

  double apply(double raw) const {
    return normalize_heading((counter_clockwise ? -raw : raw) + offset_deg);
  }
};

}  // namespace mapval::geo
