#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mapval/bev.hpp"
#include "mapval/error.hpp"
#include "mapval/geodesy.hpp"
#include "mapval/mapio.hpp"
#include "mapval/metrics.hpp"

namespace mapval::synth {

enum class Layout { kStraight, kTIntersection, kCrossroads, kParkingStrip };

inline std::string to_string(Layout l) {
  switch (l) {
    case Layout::kStraight: return "straight";
    case Layout::kTIntersection: return "t-intersection";
    case Layout::kCrossroads: return "crossroads";
    case Layout::kParkingStrip: return "parking-strip";
  }
  return "straight";
}

inline Layout parse_layout(const std::string& s) {
  if (s == "straight") return Layout::kStraight;
  if (s == "t-intersection") return Layout::kTIntersection;
  if (s == "crossroads") return Layout::kCrossroads;
  if (s == "parking-strip") return Layout::kParkingStrip;
  throw InvalidInput("unknown layout '" + s + "'");
}

struct LayoutSpec {
  Layout layout = Layout::kStraight;
  double width = 6.5;    // meters, written as an explicit width tag
  double heading = 0.0;  // direction of the main road, degrees
  std::uint64_t seed = 0;
  double arm_length = 150.0;
  double node_spacing = 25.0;
};

/// Origin of every synthetic map.
inline constexpr geo::GeoPoint kSynthOrigin{50.7495, 7.2035};

struct SynthMap {
  osm::RoadGraph graph;
  geo::LocalFrame frame;
};

/// The main road runs through the origin along `heading`. The T branch leaves the origin
/// to the right of the main heading; crossroads adds a full second road. The parking-strip
/// map is a straight road (the strip only exists in the segmentation). Geometry depends on
/// the layout, width and heading only.
inline SynthMap gen_map(const LayoutSpec& spec) {
  if (!(spec.width > 0)) throw InvalidInput("road width must be > 0");
  if (!(spec.node_spacing > 0) || !(spec.arm_length >= spec.node_spacing))
    throw InvalidInput("invalid synthetic node spacing");
  SynthMap out;
  out.frame.origin = kSynthOrigin;
  osm::NodeId next_node = 1;

  auto add_node = [&](geo::LocalPoint p) {
    const osm::NodeId id = next_node++;
    out.graph.nodes[id] = geo::from_local(out.frame, p);
    return id;
  };
  const int steps = static_cast<int>(std::floor(spec.arm_length / spec.node_spacing + 1e-9));
  auto road = [&](double heading, int from, osm::NodeId centre, osm::WayId way_id) {
    const geo::LocalPoint dir = geo::heading_vector(heading);
    osm::RoadWay w;
    w.id = way_id;
    w.highway_class = "residential";
    w.explicit_width = spec.width;
    for (int k = from; k <= steps; ++k) {
      if (k == 0) w.node_refs.push_back(centre);
      else w.node_refs.push_back(add_node((k * spec.node_spacing) * dir));
    }
    out.graph.ways.push_back(std::move(w));
  };

  const osm::NodeId centre = add_node({0.0, 0.0});
  road(spec.heading, -steps, centre, 1000);
  if (spec.layout == Layout::kTIntersection) road(spec.heading + 90.0, 0, centre, 1001);
  if (spec.layout == Layout::kCrossroads) road(spec.heading + 90.0, -steps, centre, 1001);
  return out;
}

/// Sub-rectangle of the vehicle-aligned BEV, meters (x lateral, y forward).
struct Rect {
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  bool contains(geo::LocalPoint p) const {
    return p.east >= x_min && p.east <= x_max && p.north >= y_min && p.north <= y_max;
  }
};

struct Jitter {
  double along = 0.0;    // meters, along the truth heading
  double across = 0.0;   // meters, to the right of the truth heading
  double heading = 0.0;  // degrees
};

struct PerturbationSpec {
  std::optional<Rect> fp_blob;   // painted as road wherever neither the map nor the segmentation has road
  std::optional<Rect> fn_erase;  // road pixels inside are relabelled background in the prediction
  std::optional<Jitter> pose_jitter;
  int occluder_blobs = 0;
  double occluder_size = 1.5;  // meters, square side
  std::uint64_t seed = 0;
};

/// Class ids the generator paints.
struct SynthLabels {
  std::uint8_t road = 7;
  std::uint8_t background = 8;
  std::uint8_t occluder = 26;

  static SynthLabels from_policy(const metrics::LabelPolicy& policy) {
    SynthLabels l;
    auto first = [](const metrics::LabelSet& s) {
      for (int i = 0; i < 256; ++i) if (s.test(static_cast<std::size_t>(i))) return static_cast<std::uint8_t>(i);
      return std::uint8_t{0};
    };
    l.road = first(policy.road_ids);
    // Cityscapes "car" and "sidewalk" when the policy allows them; otherwise the first fitting id.
    if (policy.road_ids.test(7)) l.road = 7;
    if (policy.occluder_ids.test(26)) l.occluder = 26;
    else l.occluder = policy.occluder_ids.any() ? first(policy.occluder_ids) : l.road;
    const metrics::LabelSet used = policy.road_ids | policy.occluder_ids | policy.ignore_ids;
    auto is_free = [&](int i) { return !used.test(static_cast<std::size_t>(i)) && i != policy.void_id; };
    if (is_free(8)) l.background = 8;
    else for (int i = 0; i < 256; ++i) if (is_free(i)) { l.background = static_cast<std::uint8_t>(i); break; }
    return l;
  }
};

struct SynthScene {
  bev::BevMask gt;
  bev::BevMask pred;
  geo::Pose gps_pose;
  geo::Pose truth_pose;
  std::size_t fp_pixels = 0;  // injected false-positive road pixels
  std::size_t fn_pixels = 0;  // map road pixels erased from the prediction
};

inline geo::Pose displace(const geo::Pose& pose, const geo::LocalFrame& frame, const Jitter& j) {
  const geo::LocalPoint v{j.across, j.along};
  const geo::LocalPoint p = geo::from_vehicle_frame(pose, frame, v);
  return {geo::from_local(frame, p), pose.heading() + j.heading};
}

/// Ground truth is the map rasterized at the truth pose; the prediction starts as a copy and
/// receives the requested perturbations. Occluder blobs land in both masks.
inline SynthScene gen_scene(std::span<const osm::RoadElement> elements, const geo::LocalFrame& frame,
                            const geo::Pose& truth_pose, const bev::GridSpec& grid,
                            const metrics::LabelPolicy& policy, const PerturbationSpec& pert) {
  const SynthLabels lab = SynthLabels::from_policy(policy);
  const bev::RoadMask map = bev::rasterize_roads(elements, truth_pose, frame, grid);
  if (!map.road(grid.vehicle_col(), grid.vehicle_row()))
    throw InvalidInput("truth pose does not lie on a road of the map");

  SynthScene s;
  s.truth_pose = truth_pose;
  s.gps_pose = pert.pose_jitter ? displace(truth_pose, frame, *pert.pose_jitter) : truth_pose;
  s.gt = bev::BevMask{grid, LabelGrid(grid.width(), grid.height(), lab.background),
                      BoolGrid(grid.width(), grid.height(), 1)};
  for (std::size_t i = 0; i < map.road.size(); ++i)
    if (map.road.data()[i]) s.gt.labels.data()[i] = lab.road;

  std::mt19937_64 rng(pert.seed);
  if (pert.occluder_blobs > 0) {
    const int side = std::max(1, static_cast<int>(std::lround(pert.occluder_size / grid.resolution())));
    std::uniform_int_distribution<int> col_dist(0, std::max(0, grid.width() - side));
    std::uniform_int_distribution<int> row_dist(0, std::max(0, grid.height() - side));
    for (int b = 0; b < pert.occluder_blobs; ++b) {
      const int c0 = col_dist(rng), r0 = row_dist(rng);
      for (int r = r0; r < std::min(grid.height(), r0 + side); ++r)
        for (int c = c0; c < std::min(grid.width(), c0 + side); ++c) s.gt.labels(c, r) = lab.occluder;
    }
  }

  s.pred = s.gt;
  for (int r = 0; r < grid.height(); ++r) {
    for (int c = 0; c < grid.width(); ++c) {
      const geo::LocalPoint p = grid.pixel_center(c, r);
      std::uint8_t& l = s.pred.labels(c, r);
      if (pert.fp_blob && pert.fp_blob->contains(p) && !map.road(c, r) && l == lab.background) {
        l = lab.road;
        ++s.fp_pixels;
      }
      if (pert.fn_erase && pert.fn_erase->contains(p) && l == lab.road && map.road(c, r)) {
        l = lab.background;
        ++s.fn_pixels;
      }
    }
  }
  return s;
}

/// Renders a BEV label raster into a camera image through the ground homography.
/// Pixels whose ray misses the ground get `sky_label`; ground outside the grid gets `outside_label`.
inline bev::LabelMask render_camera_mask(const bev::BevMask& bev_mask, const bev::CameraModel& cam,
                                         std::uint8_t sky_label, std::uint8_t outside_label) {
  const Eigen::Matrix3d h = bev::ground_homography(cam);
  const bev::GridSpec& g = bev_mask.grid;
  bev::LabelMask out{LabelGrid(cam.image_width, cam.image_height, sky_label)};
  for (int v = 0; v < cam.image_height; ++v) {
    for (int u = 0; u < cam.image_width; ++u) {
      auto p = bev::image_to_ground(h, u, v);
      if (!p) continue;
      const double col = std::floor(p->east / g.resolution() + g.vehicle_col() + 0.5);
      const double row = std::floor(g.vehicle_row() - p->north / g.resolution() + 0.5);
      if (col >= 0 && row >= 0 && col < g.width() && row < g.height() &&
          bev_mask.valid(static_cast<int>(col), static_cast<int>(row)))
        out.labels(u, v) = bev_mask.labels(static_cast<int>(col), static_cast<int>(row));
      else
        out.labels(u, v) = outside_label;
    }
  }
  return out;
}

}  // namespace mapval::synth
