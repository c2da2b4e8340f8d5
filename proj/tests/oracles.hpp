#pragma once

// Independent reference computations used as test oracles. Nothing here calls into the
// code path being checked.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mapval/metrics.hpp"

namespace oracle {

/// Point-to-segment distance via projection onto the infinite line, then endpoint checks.
inline double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double wx = px - ax, wy = py - ay;
  const double c1 = vx * wx + vy * wy;
  if (c1 <= 0) return std::hypot(wx, wy);
  const double c2 = vx * vx + vy * vy;
  if (c2 <= c1) return std::hypot(px - bx, py - by);
  const double t = c1 / c2;
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

struct Segment {
  double ax, ay, bx, by, width;
};

/// Brute-force road raster: pixel is road iff its centre lies within width/2 of some centerline.
/// Pixel centre: x = (col - vc) * res, y = (vr - row) * res.
inline std::vector<std::uint8_t> brute_force_raster(const std::vector<Segment>& segs, double res, int w, int h,
                                                    int vc, int vr) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h, 0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double x = (c - vc) * res, y = (vr - r) * res;
      for (const auto& s : segs)
        if (point_segment_distance(x, y, s.ax, s.ay, s.bx, s.by) <= s.width / 2) {
          out[static_cast<std::size_t>(r) * w + c] = 1;
          break;
        }
    }
  return out;
}

struct Counts {
  std::uint64_t tp = 0, fp = 0, fn = 0, occluded = 0, ignored = 0, invalid = 0;
};

/// Per-pixel classifier written from the metric definitions, using explicit id lists.
inline Counts brute_force_counts(const std::vector<std::uint8_t>& labels, const std::vector<std::uint8_t>& valid,
                                 const std::vector<std::uint8_t>& map, const std::vector<int>& road_ids,
                                 const std::vector<int>& occluder_ids, const std::vector<int>& ignore_ids) {
  auto in = [](const std::vector<int>& ids, int l) {
    for (int id : ids) if (id == l) return true;
    return false;
  };
  Counts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!valid[i]) { ++c.invalid; continue; }
    if (in(ignore_ids, labels[i])) { ++c.ignored; continue; }
    const bool sr = in(road_ids, labels[i]);
    const bool sd = in(occluder_ids, labels[i]);
    const bool mr = map[i] != 0;
    if (sr && mr) ++c.tp;
    if (sr && !mr) ++c.fp;
    if (!sr && mr && sd) ++c.occluded;
    if (!sr && mr && !sd) ++c.fn;
  }
  return c;
}

/// Forward distance at which the ray through image row v meets flat ground, for a camera at
/// `height` pitched down by `pitch_deg` with focal length fy and principal row cy.
inline double forward_distance(double height, double pitch_deg, double fy, double cy, double v) {
  const double depression = pitch_deg * M_PI / 180.0 + std::atan((v - cy) / fy);
  return height / std::tan(depression);
}

}  // namespace oracle
