#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <utility>
#include <span>
#include <vector>

#include "mapval/bev.hpp"
#include "mapval/error.hpp"
#include "mapval/geodesy.hpp"
#include "mapval/mapio.hpp"
#include "mapval/metrics.hpp"

namespace mapval::localize {

struct SearchConfig {
  double radius = 20.0;       // GPS error range, meters
  double along_step = 1.0;
  double across_step = 0.5;
  double fine_step = 0.1;
  bool try_reversed_heading = true;
  int max_fine_rounds = 8;  // re-centrings of the fine window

  void check() const {
    if (!(radius > 0.0)) throw InvalidInput("search radius must be > 0");
    if (!(along_step > 0.0) || !(across_step > 0.0)) throw InvalidInput("search steps must be > 0");
    if (max_fine_rounds < 1) throw InvalidInput("max_fine_rounds must be >= 1");
    if (!(fine_step > 0.0) || !(fine_step < std::min(along_step, across_step)))
      throw InvalidInput("fine_step must be positive and smaller than both coarse steps");
  }
};

/// Marks the candidate that is the unmodified prior pose.
inline constexpr int kPriorElement = -1;

struct Candidate {
  geo::Pose pose;
  geo::LocalPoint local;       // position in the search frame
  double displacement = 0.0;   // distance to the prior, meters
  int element_id = kPriorElement;  // index into the element list
  metrics::Ratio dice;
};

struct Score {
  double value = 0.0;
  bool undefined = false;  // dice had an empty denominator; value is 0
};

inline Score to_score(const metrics::Ratio& r) { return r ? Score{*r, false} : Score{0.0, true}; }

/// Reference scorer: rasterize the map at `pose` and take the dice against the ground truth.
inline Score score(const geo::Pose& pose, const bev::BevMask& gt_bev, std::span<const osm::RoadElement> elements,
                   const geo::LocalFrame& frame, const bev::GridSpec& grid, const metrics::LabelPolicy& policy) {
  const bev::RoadMask map = bev::rasterize_roads(elements, pose, frame, grid);
  return to_score(metrics::dice(metrics::overlap_counts(gt_bev, map, policy)));
}

/// Scores poses from row prefix sums of the ground truth, so each pose costs one span pass
/// instead of a full raster. Agrees exactly with `score`.
class Scorer {
 public:
  Scorer(const bev::BevMask& gt_bev, const metrics::LabelPolicy& policy) : grid_(gt_bev.grid) {
    const int w = grid_.width(), h = grid_.height();
    stride_ = static_cast<std::size_t>(w) + 1;
    road_prefix_.assign(stride_ * h, 0);
    open_prefix_.assign(stride_ * h, 0);
    for (int row = 0; row < h; ++row) {
      std::uint32_t* rp = &road_prefix_[stride_ * row];
      std::uint32_t* op = &open_prefix_[stride_ * row];
      for (int col = 0; col < w; ++col) {
        const bool valid = gt_bev.valid(col, row) != 0;
        const std::uint8_t l = gt_bev.labels(col, row);
        const bool counted = valid && !policy.is_ignored(l);
        const bool road = counted && policy.is_road(l);
        const bool open = counted && !road && !policy.is_occluder(l);
        rp[col + 1] = rp[col] + road;
        op[col + 1] = op[col] + open;
      }
      segment_road_ += rp[w];
    }
  }

  const bev::GridSpec& grid() const noexcept { return grid_; }

  metrics::OverlapCounts counts(std::span<const bev::Span> spans) const {
    std::uint64_t tp = 0, fn = 0;
    for (const bev::Span& s : spans) {
      const std::size_t base = stride_ * s.row;
      tp += road_prefix_[base + s.c1 + 1] - road_prefix_[base + s.c0];
      fn += open_prefix_[base + s.c1 + 1] - open_prefix_[base + s.c0];
    }
    metrics::OverlapCounts c;
    c.tp = tp;
    c.fp = segment_road_ - tp;
    c.fn = fn;
    return c;
  }

  Score operator()(const geo::Pose& pose, std::span<const osm::RoadElement> elements,
                   const geo::LocalFrame& frame) const {
    const auto spans = bev::road_spans(elements, pose, frame, grid_);
    return to_score(metrics::dice(counts(spans)));
  }

 private:
  bev::GridSpec grid_;
  std::size_t stride_ = 0;
  std::vector<std::uint32_t> road_prefix_;
  std::vector<std::uint32_t> open_prefix_;
  std::uint64_t segment_road_ = 0;
};

namespace detail {

inline double distance_to_segment(geo::LocalPoint p, geo::LocalPoint a, geo::LocalPoint b) {
  const geo::LocalPoint d = b - a;
  const double len2 = geo::dot(d, d);
  const double t = len2 > 0 ? std::clamp(geo::dot(p - a, d) / len2, 0.0, 1.0) : 0.0;
  return geo::norm(p - (a + t * d));
}

inline int sample_count(double extent, double step) {
  return static_cast<int>(std::floor(extent / step + 1e-9)) + 1;
}

inline Candidate make_candidate(const geo::LocalFrame& frame, geo::LocalPoint local, geo::LocalPoint prior,
                                double heading, int element_id) {
  return {geo::Pose(geo::from_local(frame, local), heading), local, geo::norm(local - prior), element_id, {}};
}

/// Shift in (-res/2, res/2] that keeps edges at the given signed offsets as far as possible from
/// pixel centres, where rasterization flips. Offsets equal to the shift modulo res are the worst.
inline double midway_shift(std::vector<double> edges, double res) {
  if (edges.empty()) return 0.0;
  for (double& e : edges) e -= res * std::floor(e / res);
  std::sort(edges.begin(), edges.end());
  double gap = edges.front() + res - edges.back();
  double mid = edges.back() + gap / 2.0;
  for (std::size_t k = 1; k < edges.size(); ++k) {
    if (edges[k] - edges[k - 1] > gap) {
      gap = edges[k] - edges[k - 1];
      mid = edges[k - 1] + gap / 2.0;
    }
  }
  mid -= res * std::floor(mid / res);
  return mid > res / 2.0 ? mid - res : mid;
}

/// Forward distances to both edges of the closest road crossing the forward axis at more than
/// 45 degrees, if its near edge lies within `reach`.
inline std::optional<std::pair<double, double>> crossing_edges(std::span<const osm::RoadElement> elements, int skip,
                                                    geo::LocalPoint at, geo::LocalPoint dir, double reach) {
  std::optional<std::pair<double, double>> best;
  for (std::size_t k = 0; k < elements.size(); ++k) {
    if (static_cast<int>(k) == skip) continue;
    const auto& e = elements[k];
    const geo::LocalPoint v = e.b - e.a;
    const double len = geo::norm(v);
    if (len <= 0.0) continue;
    const double cross = dir.east * v.north - dir.north * v.east;  // |dir||v| sin(angle)
    const double sin_angle = std::abs(cross) / len;
    if (sin_angle < std::sqrt(0.5)) continue;
    const geo::LocalPoint w = e.a - at;
    const double d = (w.east * v.north - w.north * v.east) / cross;
    const double t = (w.east * dir.north - w.north * dir.east) / cross;
    const double cap = e.width / (2.0 * len);  // the capsule reaches this far past either node
    if (t < -cap || t > 1.0 + cap) continue;
    const double half = e.width / (2.0 * sin_angle);
    if (d - half <= 0.0 || d - half > reach) continue;
    if (!best || d - half < best->first) best = std::pair{d - half, d + half};
  }
  return best;
}

/// Total order: higher score, then smaller displacement, lower element id, earlier index.
inline bool better(const Score& sa, const Candidate& a, std::size_t ia, const Score& sb, const Candidate& b,
                   std::size_t ib) {
  if (sa.value != sb.value) return sa.value > sb.value;
  if (a.displacement != b.displacement) return a.displacement < b.displacement;
  if (a.element_id != b.element_id) return a.element_id < b.element_id;
  return ia < ib;
}

}  // namespace detail

/// Road-aligned candidate poses: every along_step along and across_step across each element
/// within `radius` of the prior, clipped to the radius disc, heading set to the element angle
/// (and its reverse). The prior itself is always the last candidate.
inline std::vector<Candidate> candidate_grid(std::span<const osm::RoadElement> elements, const geo::Pose& prior,
                                             const geo::LocalFrame& frame, const SearchConfig& cfg) {
  cfg.check();
  const geo::LocalPoint origin = geo::to_local(frame, prior.position());
  std::vector<Candidate> out;
  bool any_in_range = false;
  for (std::size_t id = 0; id < elements.size(); ++id) {
    const auto& e = elements[id];
    if (detail::distance_to_segment(origin, e.a, e.b) > cfg.radius) continue;
    any_in_range = true;
    const double len = e.length();
    const geo::LocalPoint along = (1.0 / len) * (e.b - e.a);
    const geo::LocalPoint across{along.north, -along.east};
    const int n_along = detail::sample_count(len, cfg.along_step);
    const int n_across = detail::sample_count(e.width, cfg.across_step);
    for (int i = 0; i < n_along; ++i) {
      for (int j = 0; j < n_across; ++j) {
        const double offset = (j - (n_across - 1) / 2.0) * cfg.across_step;
        const geo::LocalPoint p = e.a + (i * cfg.along_step) * along + offset * across;
        if (geo::norm(p - origin) > cfg.radius) continue;
        out.push_back(detail::make_candidate(frame, p, origin, e.angle, static_cast<int>(id)));
        if (cfg.try_reversed_heading)
          out.push_back(detail::make_candidate(frame, p, origin, e.angle + 180.0, static_cast<int>(id)));
      }
    }
  }
  if (!any_in_range) throw NoRoadInRange("no road element within the search radius of the prior pose");
  out.push_back({prior, origin, 0.0, kPriorElement, {}});
  return out;
}

/// Everything correct_pose needs about one scene.
struct SceneInputs {
  geo::Pose prior;
  geo::LocalFrame frame;
  std::span<const osm::RoadElement> elements;  // all elements visible from anywhere in the search disc
  const bev::BevMask* gt_bev = nullptr;
  metrics::LabelPolicy policy;
};

struct CorrectionResult {
  geo::Pose original_pose;
  geo::Pose corrected_pose;
  double dice_before = 0.0;
  double dice_after = 0.0;
  std::size_t candidates_evaluated = 0;
  std::size_t coarse_candidates = 0;
  std::size_t undefined_scores = 0;
  int fine_rounds = 0;
  Candidate coarse_best;
  Candidate best;
};

/// Coarse road-aligned grid search for the dice-maximizing pose, then a fine grid over the cell
/// spanned by the coarse winner's neighbours with its heading held fixed.
/// Ties anywhere prefer the smaller displacement from the prior, then the lower element id.
inline CorrectionResult correct_pose(const SceneInputs& in, const SearchConfig& cfg) {
  if (!in.gt_bev) throw InvalidInput("correct_pose needs a ground-truth BEV mask");
  cfg.check();
  const Scorer scorer(*in.gt_bev, in.policy);
  std::vector<Candidate> cands = candidate_grid(in.elements, in.prior, in.frame, cfg);

  CorrectionResult res;
  res.original_pose = in.prior;
  std::size_t undefined = 0;
  std::size_t best_i = 0;
  Score best_s{-1.0, true};
  Score prior_s;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const Score s = scorer(cands[i].pose, in.elements, in.frame);
    cands[i].dice = s.undefined ? metrics::Ratio{} : metrics::Ratio{s.value};
    undefined += s.undefined;
    if (cands[i].element_id == kPriorElement && i + 1 == cands.size()) prior_s = s;
    if (i == 0 || detail::better(s, cands[i], i, best_s, cands[best_i], best_i)) {
      best_i = i;
      best_s = s;
    }
  }
  if (undefined == cands.size()) throw CorrectionFailed("dice is undefined at every candidate pose");
  res.coarse_candidates = cands.size();
  res.coarse_best = cands[best_i];

  // Fine lattice through the coarse winner, shifted so that the winning road's edges and the near
  // edge of the first crossing road fall midway between pixel centres instead of on them. The window spans one coarse cell each way and
  // is re-centred on the running best until it stops moving.
  const Candidate anchor = cands[best_i];
  const geo::LocalPoint origin = cands.back().local;
  const geo::LocalPoint along = geo::heading_vector(anchor.pose.heading());
  const geo::LocalPoint across{along.north, -along.east};
  const double px = in.gt_bev->grid.resolution();
  double shift = 0.0, shift_along = 0.0;
  if (anchor.element_id >= 0) {
    const osm::RoadElement& e = in.elements[static_cast<std::size_t>(anchor.element_id)];
    const double offset = geo::dot(anchor.local - e.a, across);
    shift = detail::midway_shift({e.width / 2.0 - offset, -e.width / 2.0 - offset}, px);
    const auto ahead = detail::crossing_edges(in.elements, anchor.element_id, anchor.local, along,
                                              in.gt_bev->grid.reach());
    if (ahead) shift_along = detail::midway_shift({ahead->first, ahead->second}, px);
  }
  const int na = std::max(1, static_cast<int>(std::floor(cfg.along_step / cfg.fine_step + 1e-9)));
  const int nc = std::max(1, static_cast<int>(std::floor(cfg.across_step / cfg.fine_step + 1e-9)));
  const double limit = cfg.radius + cfg.fine_step;
  std::set<std::pair<int, int>> visited;
  Candidate best = anchor;
  std::pair<int, int> centre{0, 0};
  std::size_t fine_index = cands.size();
  for (int round = 0; round < cfg.max_fine_rounds; ++round) {
    const auto start = centre;
    const int i0 = start.first - na, i1 = start.first + na;
    const int j0 = start.second - nc, j1 = start.second + nc;
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        if (!visited.emplace(i, j).second) continue;
        const geo::LocalPoint p =
            anchor.local + (i * cfg.fine_step + shift_along) * along + (j * cfg.fine_step + shift) * across;
        if (geo::norm(p - origin) > limit) continue;
        Candidate c = detail::make_candidate(in.frame, p, origin, anchor.pose.heading(), anchor.element_id);
        const Score s = scorer(c.pose, in.elements, in.frame);
        c.dice = s.undefined ? metrics::Ratio{} : metrics::Ratio{s.value};
        undefined += s.undefined;
        if (detail::better(s, c, fine_index, best_s, best, best_i)) {
          best = c;
          best_s = s;
          best_i = fine_index;
          centre = {i, j};
        }
        ++fine_index;
      }
    }
    ++res.fine_rounds;
    if (centre == start) break;
  }
  const std::size_t fine_count = fine_index - cands.size();

  res.best = best;
  res.corrected_pose = best.pose;
  res.dice_before = prior_s.value;
  res.dice_after = best_s.value;
  res.candidates_evaluated = cands.size() + fine_count;
  res.undefined_scores = undefined;
  return res;
}

}  // namespace mapval::localize
