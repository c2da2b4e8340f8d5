#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mapval/error.hpp"
#include "mapval/geodesy.hpp"
#include "mapval/grid.hpp"
#include "mapval/mapio.hpp"

namespace mapval::bev {

/// Metric bird's-eye raster around the vehicle. Pixel (col, row) has its centre at
/// lateral x = (col - vehicle_col) * resolution and forward y = (vehicle_row - row) * resolution.
class GridSpec {
 public:
  GridSpec() = default;
  GridSpec(double resolution, int width_px, int height_px, int vehicle_col, int vehicle_row)
      : resolution_(resolution), width_(width_px), height_(height_px),
        vehicle_col_(vehicle_col), vehicle_row_(vehicle_row) {
    if (!(resolution > 0.0) || !std::isfinite(resolution)) throw InvalidInput("grid resolution must be > 0");
    if (width_px <= 0 || height_px <= 0) throw InvalidInput("grid dimensions must be positive");
    if (vehicle_col < 0 || vehicle_col >= width_px || vehicle_row < 0 || vehicle_row >= height_px)
      throw InvalidInput("vehicle anchor must lie inside the grid");
  }

  /// 0.1 m/px, 40 m wide, vehicle bottom-centre 10 m above the lower edge (50 m visible ahead).
  static GridSpec default_grid() { return {0.1, 400, 600, 200, 500}; }

  double resolution() const noexcept { return resolution_; }
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int vehicle_col() const noexcept { return vehicle_col_; }
  int vehicle_row() const noexcept { return vehicle_row_; }
  std::size_t area() const noexcept { return static_cast<std::size_t>(width_) * height_; }

  double col_x(int col) const noexcept { return (col - vehicle_col_) * resolution_; }
  double row_y(int row) const noexcept { return (vehicle_row_ - row) * resolution_; }
  geo::LocalPoint pixel_center(int col, int row) const noexcept { return {col_x(col), row_y(row)}; }

  /// Largest distance from the vehicle to any grid corner.
  double reach() const noexcept {
    const double dx = std::max(vehicle_col_ + 0.5, width_ - vehicle_col_ - 0.5) * resolution_;
    const double dy = std::max(vehicle_row_ + 0.5, height_ - vehicle_row_ - 0.5) * resolution_;
    return std::hypot(dx, dy);
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;

 private:
  double resolution_ = 0.1;
  int width_ = 400;
  int height_ = 600;
  int vehicle_col_ = 200;
  int vehicle_row_ = 500;
};

/// Pinhole camera mounted over the vehicle origin. Angles in degrees; pitch > 0 tilts down.
struct CameraModel {
  double fx = 1000.0, fy = 1000.0;
  double cx = 960.0, cy = 540.0;
  double camera_height = 1.5;
  double pitch = 0.0, roll = 0.0, yaw = 0.0;
  int image_width = 1920, image_height = 1080;

  void check() const {
    if (!(fx > 0) || !(fy > 0)) throw InvalidInput("camera focal lengths must be > 0");
    if (!(camera_height > 0)) throw InvalidInput("camera height must be > 0");
    if (image_width <= 0 || image_height <= 0) throw InvalidInput("camera image size must be positive");
    if (cx < 0 || cy < 0 || cx > image_width || cy > image_height)
      throw InvalidInput("principal point must lie inside the image");
    if (!(std::abs(pitch) <= 90.0) || !std::isfinite(roll) || !std::isfinite(yaw))
      throw InvalidInput("camera pitch must be within [-90, 90] degrees");
  }
};

/// Camera-image class ids, row-major.
struct LabelMask {
  LabelGrid labels;
  int width() const noexcept { return labels.width(); }
  int height() const noexcept { return labels.height(); }
};

struct BevMask {
  GridSpec grid;
  LabelGrid labels;  // void id where !valid
  BoolGrid valid;    // pixel received camera content
};

struct RoadMask {
  GridSpec grid;
  BoolGrid road;
};

/// Rotation taking camera axes (right, down, forward) to vehicle axes (right, forward, up).
inline Eigen::Matrix3d camera_to_vehicle(const CameraModel& cam) {
  Eigen::Matrix3d base;
  base << 1, 0, 0,
          0, 0, 1,
          0, -1, 0;
  const Eigen::Matrix3d roll = Eigen::AngleAxisd(geo::deg2rad(cam.roll), Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Eigen::Matrix3d pitch = Eigen::AngleAxisd(-geo::deg2rad(cam.pitch), Eigen::Vector3d::UnitX()).toRotationMatrix();
  const Eigen::Matrix3d yaw = Eigen::AngleAxisd(-geo::deg2rad(cam.yaw), Eigen::Vector3d::UnitZ()).toRotationMatrix();
  return yaw * pitch * base * roll;
}

inline Eigen::Matrix3d intrinsics(const CameraModel& cam) {
  Eigen::Matrix3d k;
  k << cam.fx, 0, cam.cx,
       0, cam.fy, cam.cy,
       0, 0, 1;
  return k;
}

/// Flat-ground homography from homogeneous image pixels to homogeneous ground points
/// (x lateral, y forward, w). A pixel's ray reaches the ground ahead iff w > 0.
inline Eigen::Matrix3d ground_homography(const CameraModel& cam) {
  cam.check();
  Eigen::Matrix3d scale = Eigen::Matrix3d::Identity();
  scale(2, 2) = -1.0 / cam.camera_height;
  return scale * camera_to_vehicle(cam) * intrinsics(cam).inverse();
}

namespace detail {
inline constexpr double kHorizonEps = 1e-12;
}

/// Ground point seen by image pixel (u, v), or nullopt when the ray misses the ground.
inline std::optional<geo::LocalPoint> image_to_ground(const Eigen::Matrix3d& h, double u, double v) {
  const Eigen::Vector3d g = h * Eigen::Vector3d(u, v, 1.0);
  if (!(g.z() > detail::kHorizonEps)) return std::nullopt;
  return geo::LocalPoint{g.x() / g.z(), g.y() / g.z()};
}

/// Image position of a ground point, or nullopt when it lies behind the camera.
inline std::optional<Eigen::Vector2d> ground_to_image(const Eigen::Matrix3d& h_inv, const geo::LocalPoint& p) {
  const Eigen::Vector3d q = h_inv * Eigen::Vector3d(p.east, p.north, 1.0);
  if (!(q.z() > detail::kHorizonEps)) return std::nullopt;
  return Eigen::Vector2d(q.x() / q.z(), q.y() / q.z());
}

/// Nearest-neighbour inverse perspective mapping of a label image onto the ground grid.
/// Image pixel (c, r) is centred at (u, v) = (c, r).
inline BevMask warp_to_bev(const LabelMask& mask, const CameraModel& cam, const GridSpec& grid,
                           std::uint8_t void_id) {
  if (mask.width() != cam.image_width || mask.height() != cam.image_height)
    throw InvalidInput("label mask size does not match the camera image size");
  const Eigen::Matrix3d h_inv = ground_homography(cam).inverse();
  BevMask out{grid, LabelGrid(grid.width(), grid.height(), void_id), BoolGrid(grid.width(), grid.height(), 0)};
  for (int row = 0; row < grid.height(); ++row) {
    for (int col = 0; col < grid.width(); ++col) {
      auto uv = ground_to_image(h_inv, grid.pixel_center(col, row));
      if (!uv) continue;
      const double u = std::floor((*uv).x() + 0.5);
      const double v = std::floor((*uv).y() + 0.5);
      if (!(u >= 0 && v >= 0 && u < mask.width() && v < mask.height())) continue;
      out.labels(col, row) = mask.labels(static_cast<int>(u), static_cast<int>(v));
      out.valid(col, row) = 1;
    }
  }
  return out;
}

/// A BEV raster read straight from disk: every non-void pixel is valid.
inline BevMask bev_from_labels(LabelGrid labels, const GridSpec& grid, std::uint8_t void_id) {
  if (labels.width() != grid.width() || labels.height() != grid.height())
    throw InvalidInput("BEV raster size does not match the grid");
  BoolGrid valid(grid.width(), grid.height(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) valid.data()[i] = labels.data()[i] != void_id;
  return {grid, std::move(labels), std::move(valid)};
}

/// Inclusive column range [c0, c1] of road pixels in one row.
struct Span {
  int row;
  int c0;
  int c1;
};

namespace detail {

struct Capsule {
  geo::LocalPoint a, b;
  double r;
};

/// Canonical centre-of-pixel test: distance from p to segment a-b at most r.
inline bool in_capsule(double px, double py, const Capsule& k) {
  const double dx = k.b.east - k.a.east;
  const double dy = k.b.north - k.a.north;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - k.a.east) * dx + (py - k.a.north) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = px - (k.a.east + t * dx);
  const double ey = py - (k.a.north + t * dy);
  return ex * ex + ey * ey <= k.r * k.r;
}

struct Interval {
  double lo = INFINITY, hi = -INFINITY;
  bool empty() const { return !(lo <= hi); }
  void cover(Interval o) {
    if (o.empty()) return;
    lo = std::min(lo, o.lo);
    hi = std::max(hi, o.hi);
  }
};

/// {x : lo <= coef * x + c <= hi}
inline Interval solve_linear(double coef, double c, double lo, double hi) {
  if (coef == 0.0) return (c >= lo && c <= hi) ? Interval{-INFINITY, INFINITY} : Interval{};
  double x0 = (lo - c) / coef, x1 = (hi - c) / coef;
  if (x0 > x1) std::swap(x0, x1);
  return {x0, x1};
}

inline Interval disc_interval(geo::LocalPoint ctr, double r, double y) {
  const double dy = y - ctr.north;
  const double rem = r * r - dy * dy;
  if (rem < 0.0) return {};
  const double s = std::sqrt(rem);
  return {ctr.east - s, ctr.east + s};
}

/// x-extent of the capsule on the horizontal line at height y.
inline Interval capsule_row(const Capsule& k, double y) {
  Interval out = disc_interval(k.a, k.r, y);
  out.cover(disc_interval(k.b, k.r, y));
  const geo::LocalPoint d = k.b - k.a;
  const double len = geo::norm(d);
  if (len > 0.0) {
    const double ux = d.east / len, uy = d.north / len;
    // along = (x - ax) ux + (y - ay) uy in [0, len]; across = (x - ax) uy - (y - ay) ux in [-r, r]
    const double ry = y - k.a.north;
    Interval along = solve_linear(ux, -k.a.east * ux + ry * uy, 0.0, len);
    Interval across = solve_linear(uy, -k.a.east * uy - ry * ux, -k.r, k.r);
    Interval strip{std::max(along.lo, across.lo), std::min(along.hi, across.hi)};
    out.cover(strip);
  }
  return out;
}

inline void append_element_spans(const Capsule& k, const GridSpec& grid, std::vector<Span>& out) {
  const double res = grid.resolution();
  const double ymin = std::min(k.a.north, k.b.north) - k.r;
  const double ymax = std::max(k.a.north, k.b.north) + k.r;
  const double xmin = std::min(k.a.east, k.b.east) - k.r;
  const double xmax = std::max(k.a.east, k.b.east) + k.r;
  const int vc = grid.vehicle_col(), vr = grid.vehicle_row();
  if (xmax < grid.col_x(0) - res || xmin > grid.col_x(grid.width() - 1) + res) return;
  const int row_lo = std::max(0, static_cast<int>(std::floor(vr - ymax / res)) - 1);
  const int row_hi = std::min(grid.height() - 1, static_cast<int>(std::ceil(vr - ymin / res)) + 1);
  for (int row = row_lo; row <= row_hi; ++row) {
    const double y = grid.row_y(row);
    const Interval iv = capsule_row(k, y);
    if (iv.empty()) continue;
    const double f0 = std::ceil(iv.lo / res + vc);
    const double f1 = std::floor(iv.hi / res + vc);
    const double last = grid.width() - 1;
    int c0 = static_cast<int>(std::clamp(f0, 0.0, last));
    int c1 = static_cast<int>(std::clamp(f1, -1.0, last));
    // The analytic bounds can be off by a rounding step; settle them on the canonical test.
    while (c0 > 0 && in_capsule(grid.col_x(c0 - 1), y, k)) --c0;
    while (c1 + 1 >= 0 && c1 + 1 < grid.width() && in_capsule(grid.col_x(c1 + 1), y, k)) ++c1;
    while (c0 <= c1 && !in_capsule(grid.col_x(c0), y, k)) ++c0;
    while (c1 >= c0 && !in_capsule(grid.col_x(c1), y, k)) --c1;
    if (c0 <= c1) out.push_back({row, c0, c1});
  }
}

}  // namespace detail

/// Row spans covered by the road elements seen from `pose`; sorted by row, merged, disjoint.
inline std::vector<Span> road_spans(std::span<const osm::RoadElement> elements, const geo::Pose& pose,
                                    const geo::LocalFrame& frame, const GridSpec& grid) {
  std::vector<Span> raw;
  for (const auto& e : elements) {
    const detail::Capsule k{geo::to_vehicle_frame(pose, frame, e.a), geo::to_vehicle_frame(pose, frame, e.b),
                            e.width / 2.0};
    detail::append_element_spans(k, grid, raw);
  }
  std::sort(raw.begin(), raw.end(),
            [](const Span& x, const Span& y) { return x.row != y.row ? x.row < y.row : x.c0 < y.c0; });
  std::vector<Span> merged;
  for (const Span& s : raw) {
    if (!merged.empty() && merged.back().row == s.row && s.c0 <= merged.back().c1 + 1)
      merged.back().c1 = std::max(merged.back().c1, s.c1);
    else
      merged.push_back(s);
  }
  return merged;
}

/// Union of width-buffered centerlines (capsules) in the vehicle-aligned grid.
inline RoadMask rasterize_roads(std::span<const osm::RoadElement> elements, const geo::Pose& pose,
                                const geo::LocalFrame& frame, const GridSpec& grid) {
  RoadMask out{grid, BoolGrid(grid.width(), grid.height(), 0)};
  for (const Span& s : road_spans(elements, pose, frame, grid)) {
    std::uint8_t* row = out.road.row_ptr(s.row);
    std::fill(row + s.c0, row + s.c1 + 1, std::uint8_t{1});
  }
  return out;
}

}  // namespace mapval::bev
