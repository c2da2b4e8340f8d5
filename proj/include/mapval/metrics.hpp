#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>

#include "mapval/bev.hpp"
#include "mapval/error.hpp"
#include "mapval/grid.hpp"

namespace mapval::metrics {

using LabelSet = std::bitset<256>;

inline LabelSet label_set(std::initializer_list<int> ids) {
  LabelSet s;
  for (int id : ids) s.set(static_cast<std::size_t>(id));
  return s;
}

/// Which class ids count as road (S_R), as possible occluders of road (S_D), and which are excluded.
struct LabelPolicy {
  LabelSet road_ids;
  LabelSet occluder_ids;
  LabelSet ignore_ids;
  std::uint8_t void_id = 255;

  bool is_road(std::uint8_t l) const { return road_ids.test(l); }
  bool is_occluder(std::uint8_t l) const { return occluder_ids.test(l); }
  bool is_ignored(std::uint8_t l) const { return ignore_ids.test(l); }

  void check() const {
    LabelSet v;
    v.set(void_id);
    if ((road_ids & occluder_ids).any() || (road_ids & ignore_ids).any() ||
        (occluder_ids & ignore_ids).any() || ((road_ids | occluder_ids | ignore_ids) & v).any())
      throw InvalidInput("label policy sets and the void id must be pairwise disjoint");
    if (road_ids.none()) throw InvalidInput("label policy needs at least one road id");
  }

  /// Cityscapes label ids: road 7; ground 6 ignored; ego vehicle, dynamic, vegetation,
  /// humans and vehicles as occluders.
  static LabelPolicy cityscapes() {
    LabelPolicy p;
    p.road_ids = label_set({7});
    p.occluder_ids = label_set({1, 5, 21, 24, 25, 26, 27, 28, 29, 30, 31, 32, 33});
    p.ignore_ids = label_set({6});
    p.void_id = 255;
    return p;
  }
};

enum class PixelClass : std::uint8_t { kInvalid, kIgnored, kTruePositive, kFalsePositive, kOccluded, kFalseNegative, kTrueNegative };

inline PixelClass classify(bool valid, std::uint8_t label, bool map_road, const LabelPolicy& policy) {
  if (!valid) return PixelClass::kInvalid;
  if (policy.is_ignored(label)) return PixelClass::kIgnored;
  if (policy.is_road(label)) return map_road ? PixelClass::kTruePositive : PixelClass::kFalsePositive;
  if (!map_road) return PixelClass::kTrueNegative;
  return policy.is_occluder(label) ? PixelClass::kOccluded : PixelClass::kFalseNegative;
}

struct OverlapCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, occluded = 0, ignored = 0, invalid = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + occluded + ignored + invalid + tn; }
  void add(PixelClass c) {
    switch (c) {
      case PixelClass::kInvalid: ++invalid; break;
      case PixelClass::kIgnored: ++ignored; break;
      case PixelClass::kTruePositive: ++tp; break;
      case PixelClass::kFalsePositive: ++fp; break;
      case PixelClass::kOccluded: ++occluded; break;
      case PixelClass::kFalseNegative: ++fn; break;
      case PixelClass::kTrueNegative: ++tn; break;
    }
  }
  friend bool operator==(const OverlapCounts&, const OverlapCounts&) = default;
};

/// Ratio metrics; nullopt marks an empty denominator.
using Ratio = std::optional<double>;

struct ValidationMetrics {
  Ratio ios;
  Ratio iom;
  Ratio dice;
};

struct ErrorMasks {
  BoolGrid fp_mask;
  BoolGrid fn_mask;
};

namespace detail {
inline void require_same_grid(const bev::BevMask& bev, const bev::RoadMask& map) {
  if (!(bev.grid == map.grid) || !bev.labels.same_shape(map.road) || !bev.valid.same_shape(map.road))
    throw InvalidInput("segmentation and map rasters use different grids");
}
}  // namespace detail

inline OverlapCounts overlap_counts(const bev::BevMask& bev, const bev::RoadMask& map, const LabelPolicy& policy) {
  detail::require_same_grid(bev, map);
  OverlapCounts c;
  const auto& labels = bev.labels.data();
  const auto& valid = bev.valid.data();
  const auto& road = map.road.data();
  for (std::size_t i = 0; i < labels.size(); ++i) c.add(classify(valid[i] != 0, labels[i], road[i] != 0, policy));
  return c;
}

inline Ratio ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

/// Intersection over Segmentation: tp / (tp + fp).
inline Ratio ios(const OverlapCounts& c) { return ratio(c.tp, c.tp + c.fp); }

/// Intersection over Map, with occluded map road left out: tp / (tp + fn).
inline Ratio iom(const OverlapCounts& c) { return ratio(c.tp, c.tp + c.fn); }

inline Ratio dice(const OverlapCounts& c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn); }

inline ValidationMetrics compute_metrics(const OverlapCounts& c) { return {ios(c), iom(c), dice(c)}; }

inline ErrorMasks error_masks(const bev::BevMask& bev, const bev::RoadMask& map, const LabelPolicy& policy) {
  detail::require_same_grid(bev, map);
  const int w = bev.grid.width(), h = bev.grid.height();
  ErrorMasks out{BoolGrid(w, h, 0), BoolGrid(w, h, 0)};
  const auto& labels = bev.labels.data();
  const auto& valid = bev.valid.data();
  const auto& road = map.road.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const PixelClass c = classify(valid[i] != 0, labels[i], road[i] != 0, policy);
    out.fp_mask.data()[i] = c == PixelClass::kFalsePositive;
    out.fn_mask.data()[i] = c == PixelClass::kFalseNegative;
  }
  return out;
}

/// RGB colours for overlay export.
struct OverlayColors {
  std::array<std::uint8_t, 3> fp{255, 69, 0};     // orange red
  std::array<std::uint8_t, 3> fn{255, 20, 147};   // pink red
  std::array<std::uint8_t, 3> map_road{64, 64, 64};
  std::array<std::uint8_t, 3> seg_road{128, 64, 128};
  std::array<std::uint8_t, 3> background{0, 0, 0};
};

/// Interleaved RGB overlay of error regions on top of the matched road.
inline std::vector<std::uint8_t> render_overlay(const bev::BevMask& bev, const bev::RoadMask& map,
                                                const ErrorMasks& err, const LabelPolicy& policy,
                                                const OverlayColors& colors = {}) {
  detail::require_same_grid(bev, map);
  std::vector<std::uint8_t> rgb(bev.labels.size() * 3);
  for (std::size_t i = 0; i < bev.labels.size(); ++i) {
    const std::array<std::uint8_t, 3>* c = &colors.background;
    if (err.fp_mask.data()[i]) c = &colors.fp;
    else if (err.fn_mask.data()[i]) c = &colors.fn;
    else if (bev.valid.data()[i] && policy.is_road(bev.labels.data()[i])) c = &colors.seg_road;
    else if (map.road.data()[i]) c = &colors.map_road;
    std::copy(c->begin(), c->end(), rgb.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  return rgb;
}

}  // namespace mapval::metrics
