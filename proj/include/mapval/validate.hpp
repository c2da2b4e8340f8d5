#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mapval/bev.hpp"
#include "mapval/error.hpp"
#include "mapval/geodesy.hpp"
#include "mapval/mapio.hpp"
#include "mapval/metrics.hpp"

namespace mapval::validate {

using metrics::Ratio;

struct SceneRecord {
  std::string scene_id;
  std::string pred_mask_path;
  std::optional<std::string> gt_mask_path;
  geo::Pose pose;
  std::optional<geo::Pose> corrected_pose;

  const geo::Pose& effective_pose() const { return corrected_pose ? *corrected_pose : pose; }
};

enum class ErrorType : std::uint8_t { kNone = 0, kFalsePositive = 1, kFalseNegative = 2, kBoth = 3 };

inline std::string to_string(ErrorType t) {
  switch (t) {
    case ErrorType::kNone: return "none";
    case ErrorType::kFalsePositive: return "fp";
    case ErrorType::kFalseNegative: return "fn";
    case ErrorType::kBoth: return "fp+fn";
  }
  return "none";
}

struct PixelPRF {
  Ratio recall;
  Ratio precision;
  std::uint64_t intersection = 0;
  std::uint64_t detected = 0;
  std::uint64_t true_ = 0;
};

/// Map-matched overlay of one mask.
struct MaskValidation {
  metrics::OverlapCounts counts;
  metrics::ValidationMetrics metrics;
  metrics::ErrorMasks errors;
};

struct SceneResult {
  std::string scene_id;
  geo::Pose pose;  // pose the map was rasterized at
  MaskValidation pred;
  std::optional<MaskValidation> gt;
  std::optional<metrics::ErrorMasks> true_errors;  // prediction validated against ground truth
  std::optional<PixelPRF> prf;
  std::optional<PixelPRF> prf_fp;
  std::optional<PixelPRF> prf_fn;
  bev::BevMask pred_bev;
  bev::RoadMask map;
};

/// Loaded inputs of one scene, already in BEV space.
struct SceneData {
  std::string scene_id;
  geo::Pose pose;
  bev::BevMask pred_bev;
  std::optional<bev::BevMask> gt_bev;
};

/// Pixel-wise errors of the prediction against the ground-truth segmentation, with the same
/// occluder omission as the map path. Only pixels valid and non-ignored in both masks count.
inline metrics::ErrorMasks gt_error_masks(const bev::BevMask& pred, const bev::BevMask& gt,
                                          const metrics::LabelPolicy& policy) {
  if (!(pred.grid == gt.grid) || !pred.labels.same_shape(gt.labels))
    throw InvalidInput("prediction and ground-truth rasters use different grids");
  const int w = pred.grid.width(), h = pred.grid.height();
  metrics::ErrorMasks out{BoolGrid(w, h, 0), BoolGrid(w, h, 0)};
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    if (!pred.valid.data()[i] || !gt.valid.data()[i]) continue;
    const std::uint8_t pl = pred.labels.data()[i], gl = gt.labels.data()[i];
    if (policy.is_ignored(pl) || policy.is_ignored(gl)) continue;
    const bool pr = policy.is_road(pl), gr = policy.is_road(gl);
    out.fp_mask.data()[i] = pr && !gr;
    out.fn_mask.data()[i] = gr && !pr && !policy.is_occluder(pl);
  }
  return out;
}

namespace detail {
inline PixelPRF prf_of(const BoolGrid& detected, const BoolGrid& truth) {
  if (!detected.same_shape(truth)) throw InvalidInput("error masks use different grids");
  PixelPRF p;
  for (std::size_t i = 0; i < detected.size(); ++i) {
    const bool d = detected.data()[i] != 0, t = truth.data()[i] != 0;
    p.detected += d;
    p.true_ += t;
    p.intersection += d && t;
  }
  p.recall = metrics::ratio(p.intersection, p.true_);
  p.precision = metrics::ratio(p.intersection, p.detected);
  return p;
}

inline BoolGrid pooled(const metrics::ErrorMasks& m) {
  if (!m.fp_mask.same_shape(m.fn_mask)) throw InvalidInput("error masks use different grids");
  BoolGrid out(m.fp_mask.width(), m.fp_mask.height(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = m.fp_mask.data()[i] || m.fn_mask.data()[i];
  return out;
}
}  // namespace detail

/// Pooled (fp or fn) pixel recall and precision of detected errors against true errors.
inline PixelPRF compare_to_ground_truth(const metrics::ErrorMasks& detected, const metrics::ErrorMasks& true_) {
  return detail::prf_of(detail::pooled(detected), detail::pooled(true_));
}

inline PixelPRF compare_fp(const metrics::ErrorMasks& detected, const metrics::ErrorMasks& true_) {
  return detail::prf_of(detected.fp_mask, true_.fp_mask);
}

inline PixelPRF compare_fn(const metrics::ErrorMasks& detected, const metrics::ErrorMasks& true_) {
  return detail::prf_of(detected.fn_mask, true_.fn_mask);
}

inline MaskValidation validate_mask(const bev::BevMask& mask, const bev::RoadMask& map,
                                    const metrics::LabelPolicy& policy) {
  MaskValidation v;
  v.counts = metrics::overlap_counts(mask, map, policy);
  v.metrics = metrics::compute_metrics(v.counts);
  v.errors = metrics::error_masks(mask, map, policy);
  return v;
}

/// Overlays map and segmentation(s) of one scene and derives metrics, error rasters and,
/// when ground truth is present, the ground-truth comparison.
inline SceneResult validate_scene(const SceneData& scene, std::span<const osm::RoadElement> elements,
                                  const geo::LocalFrame& frame, const metrics::LabelPolicy& policy) {
  try {
    SceneResult r;
    r.scene_id = scene.scene_id;
    r.pose = scene.pose;
    r.map = bev::rasterize_roads(elements, scene.pose, frame, scene.pred_bev.grid);
    r.pred = validate_mask(scene.pred_bev, r.map, policy);
    if (scene.gt_bev) {
      r.gt = validate_mask(*scene.gt_bev, r.map, policy);
      r.true_errors = gt_error_masks(scene.pred_bev, *scene.gt_bev, policy);
      r.prf = compare_to_ground_truth(r.pred.errors, *r.true_errors);
      r.prf_fp = compare_fp(r.pred.errors, *r.true_errors);
      r.prf_fn = compare_fn(r.pred.errors, *r.true_errors);
    }
    r.pred_bev = scene.pred_bev;
    return r;
  } catch (const Error& e) {
    throw Error("scene " + scene.scene_id + ": " + e.what());
  }
}

// --- data cleaning --------------------------------------------------------------------------

struct CleanCandidate {
  std::string scene_id;
  bool has_gt = false;
  bool gt_has_ignored = false;       // see contains_ignored
  Ratio gt_dice;                     // map fit of the ground truth, if validated
  std::optional<std::string> error;  // load or validation failure
};

struct RemovedScene {
  std::string scene_id;
  std::string reason;
};

struct CleanResult {
  std::vector<std::string> kept;
  std::vector<RemovedScene> removed;
};

inline bool contains_ignored(const LabelGrid& labels, const metrics::LabelPolicy& policy) {
  return std::any_of(labels.data().begin(), labels.data().end(), [&](std::uint8_t l) { return policy.is_ignored(l); });
}

inline CleanCandidate clean_candidate(std::string scene_id, const LabelGrid* gt_labels, Ratio gt_dice,
                                      const metrics::LabelPolicy& policy) {
  return {std::move(scene_id), gt_labels != nullptr, gt_labels && contains_ignored(*gt_labels, policy), gt_dice, {}};
}

/// Drops scenes whose ground truth uses an ignore label, and, with `gt_fit_min`, scenes whose
/// ground truth fits the map with dice <= gt_fit_min. Unreadable scenes are dropped with their error.
inline CleanResult clean_scenes(std::span<const CleanCandidate> scenes, std::optional<double> gt_fit_min) {
  CleanResult out;
  for (const auto& s : scenes) {
    if (s.error) {
      out.removed.push_back({s.scene_id, "error: " + *s.error});
    } else if (s.gt_has_ignored) {
      out.removed.push_back({s.scene_id, "ground truth contains ignore-labelled pixels"});
    } else if (gt_fit_min && s.has_gt && !(s.gt_dice && *s.gt_dice > *gt_fit_min)) {
      out.removed.push_back({s.scene_id, "ground-truth map fit below threshold"});
    } else {
      out.kept.push_back(s.scene_id);
    }
  }
  return out;
}

// --- batch statistics -----------------------------------------------------------------------

struct MetricSummary {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  double lower_whisker = 0, upper_whisker = 0;
  double mean = 0, stddev = 0;
  std::size_t count = 0;      // defined values
  std::size_t undefined = 0;  // excluded values
  std::vector<double> outliers_low;
};

/// Linear-interpolation quantile of an ascending, non-empty sample.
inline double quantile(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Box-plot summary with Tukey whiskers at `fence` times the interquartile range.
inline MetricSummary summarize(std::span<const Ratio> values, double fence = 1.5) {
  std::vector<double> v;
  MetricSummary s;
  for (const auto& x : values) {
    if (x) v.push_back(*x);
    else ++s.undefined;
  }
  if (v.empty()) throw EmptyBatch("no defined metric values to summarize");
  std::sort(v.begin(), v.end());
  s.count = v.size();
  s.min = v.front();
  s.max = v.back();
  s.q1 = quantile(v, 0.25);
  s.median = quantile(v, 0.5);
  s.q3 = quantile(v, 0.75);
  const double iqr = s.q3 - s.q1;
  const double lo_fence = s.q1 - fence * iqr, hi_fence = s.q3 + fence * iqr;
  s.lower_whisker = *std::find_if(v.begin(), v.end(), [&](double x) { return x >= lo_fence; });
  s.upper_whisker = *std::find_if(v.rbegin(), v.rend(), [&](double x) { return x <= hi_fence; });
  for (double x : v) if (x < s.lower_whisker) s.outliers_low.push_back(x);
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

struct BatchSummary {
  MetricSummary dice, ios, iom;
  std::optional<MetricSummary> gt_dice, gt_ios, gt_iom;
  std::size_t total = 0, cleaned = 0, analyzed = 0;
};

inline BatchSummary batch_stats(std::span<const SceneResult> results, double fence = 1.5) {
  std::vector<Ratio> d, i, m, gd, gi, gm;
  for (const auto& r : results) {
    d.push_back(r.pred.metrics.dice);
    i.push_back(r.pred.metrics.ios);
    m.push_back(r.pred.metrics.iom);
    if (r.gt) {
      gd.push_back(r.gt->metrics.dice);
      gi.push_back(r.gt->metrics.ios);
      gm.push_back(r.gt->metrics.iom);
    }
  }
  BatchSummary b;
  b.dice = summarize(d, fence);
  b.ios = summarize(i, fence);
  b.iom = summarize(m, fence);
  auto optional_summary = [&](const std::vector<Ratio>& v) -> std::optional<MetricSummary> {
    if (std::none_of(v.begin(), v.end(), [](const Ratio& x) { return x.has_value(); })) return std::nullopt;
    return summarize(v, fence);
  };
  b.gt_dice = optional_summary(gd);
  b.gt_ios = optional_summary(gi);
  b.gt_iom = optional_summary(gm);
  b.analyzed = results.size();
  b.total = results.size();
  return b;
}

// --- outlier identification -----------------------------------------------------------------

/// Optional absolute limits that also mark a flagged scene as fp-type (ios below) or fn-type (iom below).
struct JudgementConfig {
  std::optional<double> ios_max;
  std::optional<double> iom_max;
  double tie_tolerance = 1e-9;
};

struct FlaggedScene {
  std::string scene_id;
  double dice = 0;
  Ratio ios, iom;
  ErrorType type = ErrorType::kNone;
};

inline ErrorType judge(const Ratio& ios, const Ratio& iom, const JudgementConfig& cfg) {
  unsigned t = 0;
  if (ios && iom) {
    if (std::abs(*ios - *iom) <= cfg.tie_tolerance) t = 3;
    else t = *ios < *iom ? 1 : 2;
  } else if (!ios) {
    t = 2;  // nothing predicted as road: only the map side can be wrong
  } else {
    t = 1;
  }
  if (cfg.ios_max && ios && *ios < *cfg.ios_max) t |= 1;
  if (cfg.iom_max && iom && *iom < *cfg.iom_max) t |= 2;
  return static_cast<ErrorType>(t);
}

/// Scenes with predicted dice strictly below `dice_pred_max`, each judged fp- or fn-type.
inline std::vector<FlaggedScene> flag_outliers(std::span<const SceneResult> results, double dice_pred_max,
                                               const JudgementConfig& cfg = {}) {
  std::vector<FlaggedScene> out;
  for (const auto& r : results) {
    const auto& m = r.pred.metrics;
    if (!m.dice || !(*m.dice < dice_pred_max)) continue;
    out.push_back({r.scene_id, *m.dice, m.ios, m.iom, judge(m.ios, m.iom, cfg)});
  }
  return out;
}

struct CurvePoint {
  double threshold = 0;
  double fraction = 0;
  std::size_t count = 0;
};

/// Share of scenes (with defined predicted dice) whose dice lies below each threshold.
inline std::vector<CurvePoint> relative_count_curve(std::span<const SceneResult> results,
                                                    std::span<const double> thresholds) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end()))
    throw InvalidInput("relative count thresholds must be sorted ascending");
  std::vector<double> dice;
  for (const auto& r : results) if (r.pred.metrics.dice) dice.push_back(*r.pred.metrics.dice);
  std::sort(dice.begin(), dice.end());
  std::vector<CurvePoint> out;
  for (double t : thresholds) {
    const auto n = static_cast<std::size_t>(std::lower_bound(dice.begin(), dice.end(), t) - dice.begin());
    out.push_back({t, dice.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(dice.size()), n});
  }
  return out;
}

}  // namespace mapval::validate
