#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mapval/bundle.hpp"
#include "mapval/config.hpp"
#include "mapval/localize.hpp"
#include "mapval/synth.hpp"
#include "mapval/validate.hpp"

namespace mapval::app {

namespace fs = std::filesystem;
using config::json;
using config::RunConfig;

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;  // some scenes failed
inline constexpr int kExitConfig = 2;   // nothing was processed

// ---- JSON views of results --------------------------------------------------------------------

inline json to_json(const validate::MetricSummary& s) {
  return {{"min", s.min}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3}, {"max", s.max},
          {"lower_whisker", s.lower_whisker}, {"upper_whisker", s.upper_whisker}, {"mean", s.mean},
          {"stddev", s.stddev}, {"count", s.count}, {"undefined", s.undefined}, {"outliers_low", s.outliers_low}};
}

inline json to_json(const metrics::OverlapCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"occluded", c.occluded},
          {"ignored", c.ignored}, {"invalid", c.invalid}, {"tn", c.tn}};
}

inline json to_json(const metrics::ValidationMetrics& m) {
  return {{"dice", bundle::ratio_json(m.dice)}, {"ios", bundle::ratio_json(m.ios)}, {"iom", bundle::ratio_json(m.iom)}};
}

inline json to_json(const validate::PixelPRF& p) {
  return {{"recall", bundle::ratio_json(p.recall)}, {"precision", bundle::ratio_json(p.precision)},
          {"intersection", p.intersection}, {"detected", p.detected}, {"true", p.true_}};
}

inline metrics::Ratio ratio_from(const json& j) {
  return j.is_number() ? metrics::Ratio{j.get<double>()} : metrics::Ratio{};
}

inline std::string csv_num(const metrics::Ratio& r) {
  if (!r) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", *r);
  return buf;
}

inline std::optional<bev::CameraModel> camera_for(const RunConfig& cfg) {
  if (cfg.mask_space != "camera") return std::nullopt;
  config::require_file(cfg.camera, "camera calibration (needed for mask_space \"camera\")");
  return config::load_camera(*cfg.camera);
}

inline void check_inputs(const RunConfig& cfg) {
  cfg.check();
  config::require_file(cfg.map, "map");
  config::require_file(cfg.manifest, "manifest");
  if (cfg.poses) config::require_file(cfg.poses, "poses");
}

inline void write_json(const fs::path& path, const json& j) { bundle::write_text(path, j.dump(2) + "\n"); }

// ---- validate ---------------------------------------------------------------------------------

struct SceneOutcome {
  validate::SceneRecord record;
  geo::Pose pose;
  std::optional<std::string> error;
  std::optional<validate::SceneResult> result;
  bool gt_has_ignored = false;
};

inline bev::BevMask to_bev(LabelGrid labels, const std::string& path, const RunConfig& cfg,
                           const std::optional<bev::CameraModel>& camera) {
  if (cfg.mask_space == "bev") {
    if (labels.width() != cfg.grid.width() || labels.height() != cfg.grid.height())
      throw InvalidInput("BEV mask " + path + " does not match the grid size");
    return bev::bev_from_labels(std::move(labels), cfg.grid, cfg.policy.void_id);
  }
  return bev::warp_to_bev(bev::LabelMask{std::move(labels)}, *camera, cfg.grid, cfg.policy.void_id);
}

inline void write_scene_rasters(const fs::path& dir, const validate::SceneResult& r, const metrics::LabelPolicy& policy) {
  const std::string stem = bundle::file_stem(r.scene_id);
  const auto& g = r.pred_bev.grid;
  io::write_rgb(dir / (stem + "_overlay.png"), g.width(), g.height(),
                metrics::render_overlay(r.pred_bev, r.map, r.pred.errors, policy));
  auto as_labels = [](const BoolGrid& m) {
    LabelGrid out(m.width(), m.height(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = m.data()[i] ? 255 : 0;
    return out;
  };
  io::write_labels(dir / (stem + "_fp.png"), as_labels(r.pred.errors.fp_mask));
  io::write_labels(dir / (stem + "_fn.png"), as_labels(r.pred.errors.fn_mask));
}

/// Keeps the numbers, drops the rasters.
inline void strip_rasters(validate::SceneResult& r) {
  r.pred_bev = {};
  r.map = {};
  r.pred.errors = {};
  if (r.gt) r.gt->errors = {};
  r.true_errors.reset();
}

inline SceneOutcome run_validate_scene(const validate::SceneRecord& rec, const std::optional<geo::Pose>& override_pose,
                                       const osm::RoadGraph& graph, const RunConfig& cfg,
                                       const std::optional<bev::CameraModel>& camera, const fs::path& raster_dir) {
  SceneOutcome o;
  o.record = rec;
  o.pose = override_pose ? *override_pose : rec.effective_pose();
  try {
    validate::SceneData d;
    d.scene_id = rec.scene_id;
    d.pose = o.pose;
    d.pred_bev = to_bev(io::read_labels(rec.pred_mask_path), rec.pred_mask_path, cfg, camera);
    if (rec.gt_mask_path) {
      LabelGrid raw = io::read_labels(*rec.gt_mask_path);
      o.gt_has_ignored = validate::contains_ignored(raw, cfg.policy);
      d.gt_bev = to_bev(std::move(raw), *rec.gt_mask_path, cfg, camera);
    }
    const geo::LocalFrame frame{o.pose.position()};
    const auto elements = bundle::elements_near(graph, o.pose, frame, cfg.grid.reach() + 1.0, cfg.widths);
    validate::SceneResult r = validate::validate_scene(d, elements, frame, cfg.policy);
    if (!raster_dir.empty()) write_scene_rasters(raster_dir, r, cfg.policy);
    strip_rasters(r);
    o.result = std::move(r);
  } catch (const std::exception& e) {
    o.error = e.what();
  }
  return o;
}

struct BatchAnalysis {
  std::vector<validate::SceneResult> analyzed;
  validate::CleanResult cleaning;
  std::optional<validate::BatchSummary> summary;
  std::optional<double> threshold;
  std::vector<validate::FlaggedScene> flagged;
  std::vector<validate::CurvePoint> curve;
};

inline BatchAnalysis analyze(const std::vector<SceneOutcome>& outcomes, const RunConfig& cfg) {
  BatchAnalysis a;
  std::vector<validate::CleanCandidate> cands;
  for (const auto& o : outcomes) {
    validate::CleanCandidate c;
    c.scene_id = o.record.scene_id;
    c.has_gt = o.record.gt_mask_path.has_value();
    c.gt_has_ignored = o.gt_has_ignored;
    if (o.result && o.result->gt) c.gt_dice = o.result->gt->metrics.dice;
    c.error = o.error;
    cands.push_back(std::move(c));
  }
  a.cleaning = validate::clean_scenes(cands, cfg.gt_fit_min);
  const std::set<std::string> kept(a.cleaning.kept.begin(), a.cleaning.kept.end());
  for (const auto& o : outcomes)
    if (o.result && kept.count(o.record.scene_id)) a.analyzed.push_back(*o.result);
  try {
    if (!a.analyzed.empty()) a.summary = validate::batch_stats(a.analyzed, cfg.whisker_fence);
  } catch (const EmptyBatch&) {
    a.summary.reset();
  }
  std::size_t errors = 0;
  for (const auto& o : outcomes) errors += o.error.has_value();
  if (a.summary) {
    a.summary->total = outcomes.size();
    a.summary->cleaned = a.cleaning.removed.size() - errors;
    a.summary->analyzed = a.analyzed.size();
    a.threshold = cfg.dice_pred_max.resolve(a.summary->dice);
  } else {
    a.threshold = cfg.dice_pred_max.value;
  }
  if (a.threshold) a.flagged = validate::flag_outliers(a.analyzed, *a.threshold, cfg.judgement);
  a.curve = validate::relative_count_curve(a.analyzed, cfg.curve_thresholds);
  return a;
}

inline json batch_summary_json(const validate::BatchSummary& b) {
  auto opt = [](const std::optional<validate::MetricSummary>& s) { return s ? to_json(*s) : json(nullptr); };
  return {{"dice", to_json(b.dice)}, {"ios", to_json(b.ios)}, {"iom", to_json(b.iom)},
          {"gt_dice", opt(b.gt_dice)}, {"gt_ios", opt(b.gt_ios)}, {"gt_iom", opt(b.gt_iom)}};
}

inline json flagged_json(const std::vector<validate::FlaggedScene>& flagged) {
  json out = json::array();
  for (const auto& f : flagged)
    out.push_back({{"scene_id", f.scene_id}, {"dice", f.dice}, {"ios", bundle::ratio_json(f.ios)},
                   {"iom", bundle::ratio_json(f.iom)}, {"type", validate::to_string(f.type)}});
  return out;
}

inline json curve_json(const std::vector<validate::CurvePoint>& curve) {
  json out = json::array();
  for (const auto& p : curve) out.push_back({{"threshold", p.threshold}, {"fraction", p.fraction}, {"count", p.count}});
  return out;
}

inline json validate_report(const std::vector<SceneOutcome>& outcomes, const BatchAnalysis& a, const RunConfig& cfg) {
  std::map<std::string, const validate::FlaggedScene*> flagged;
  for (const auto& f : a.flagged) flagged[f.scene_id] = &f;
  std::map<std::string, std::string> removed;
  for (const auto& r : a.cleaning.removed) removed[r.scene_id] = r.reason;

  json scenes = json::array(), errors = json::array(), prf_table = json::array(), scatter = json::array();
  std::uint64_t inter = 0, detected = 0, truth = 0;
  for (const auto& o : outcomes) {
    const std::string& id = o.record.scene_id;
    json s;
    s["scene_id"] = id;
    s["pose"] = bundle::pose_json(o.pose);
    s["status"] = o.error ? "error" : (removed.count(id) ? "removed" : "analyzed");
    s["reason"] = removed.count(id) ? json(removed[id]) : json(nullptr);
    if (o.result) {
      const auto& r = *o.result;
      s["pred"] = {{"counts", to_json(r.pred.counts)}, {"metrics", to_json(r.pred.metrics)}};
      s["gt"] = r.gt ? json{{"counts", to_json(r.gt->counts)}, {"metrics", to_json(r.gt->metrics)}} : json(nullptr);
      s["prf"] = r.prf ? json{{"pooled", to_json(*r.prf)}, {"fp", to_json(*r.prf_fp)}, {"fn", to_json(*r.prf_fn)}}
                       : json(nullptr);
      const auto f = flagged.find(id);
      s["flagged"] = f != flagged.end();
      s["error_type"] = f != flagged.end() ? json(validate::to_string(f->second->type)) : json(nullptr);
      if (r.prf && s["status"] == "analyzed") {
        prf_table.push_back({{"scene_id", id}, {"pooled", to_json(*r.prf)}, {"fp", to_json(*r.prf_fp)},
                             {"fn", to_json(*r.prf_fn)}});
        scatter.push_back({{"scene_id", id}, {"true_error_pixels", r.prf->true_},
                           {"recall", bundle::ratio_json(r.prf->recall)},
                           {"precision", bundle::ratio_json(r.prf->precision)}});
        inter += r.prf->intersection;
        detected += r.prf->detected;
        truth += r.prf->true_;
      }
    }
    if (o.error) errors.push_back({{"scene_id", id}, {"message", *o.error}});
    scenes.push_back(std::move(s));
  }
  json removed_list = json::array();
  for (const auto& r : a.cleaning.removed) removed_list.push_back({{"scene_id", r.scene_id}, {"reason", r.reason}});

  json rep;
  rep["tool"] = "mapval";
  rep["command"] = "validate";
  rep["config"] = config::to_json(cfg);
  rep["counts"] = {{"total", outcomes.size()}, {"errors", errors.size()},
                   {"cleaned", a.cleaning.removed.size() - errors.size()}, {"analyzed", a.analyzed.size()},
                   {"flagged", a.flagged.size()}};
  rep["dice_pred_max"] = a.threshold ? json(*a.threshold) : json(nullptr);
  rep["summary"] = a.summary ? batch_summary_json(*a.summary) : json(nullptr);
  rep["flagged"] = flagged_json(a.flagged);
  rep["relative_count_curve"] = curve_json(a.curve);
  rep["prf_pooled"] = {{"recall", bundle::ratio_json(metrics::ratio(inter, truth))},
                       {"precision", bundle::ratio_json(metrics::ratio(inter, detected))},
                       {"intersection", inter}, {"detected", detected}, {"true", truth}};
  rep["prf"] = prf_table;
  rep["prf_scatter"] = scatter;
  rep["removed"] = removed_list;
  rep["errors"] = errors;
  rep["scenes"] = scenes;
  return rep;
}

/// Per-scene rows of a validate report.
inline std::string scenes_csv(const json& report) {
  std::ostringstream out;
  out << "scene_id,status,dice,ios,iom,gt_dice,gt_ios,gt_iom,tp,fp,fn,occluded,ignored,invalid,flagged,error_type,"
         "recall,precision\n";
  for (const auto& s : report.at("scenes")) {
    out << s.at("scene_id").get<std::string>() << ',' << s.at("status").get<std::string>();
    const bool has_pred = s.contains("pred");
    auto metric = [&](const char* side, const char* key) {
      if (!s.contains(side) || s.at(side).is_null()) return std::string();
      return csv_num(ratio_from(s.at(side).at("metrics").at(key)));
    };
    for (const char* k : {"dice", "ios", "iom"}) out << ',' << metric("pred", k);
    for (const char* k : {"dice", "ios", "iom"}) out << ',' << metric("gt", k);
    for (const char* k : {"tp", "fp", "fn", "occluded", "ignored", "invalid"}) {
      out << ',';
      if (has_pred) out << s.at("pred").at("counts").at(k).get<std::uint64_t>();
    }
    out << ',' << (s.value("flagged", false) ? "1" : "0") << ',';
    if (s.contains("error_type") && !s.at("error_type").is_null()) out << s.at("error_type").get<std::string>();
    const bool has_prf = s.contains("prf") && !s.at("prf").is_null();
    out << ',' << (has_prf ? csv_num(ratio_from(s.at("prf").at("pooled").at("recall"))) : "");
    out << ',' << (has_prf ? csv_num(ratio_from(s.at("prf").at("pooled").at("precision"))) : "");
    out << '\n';
  }
  return out.str();
}

inline int cmd_validate(const RunConfig& cfg) {
  check_inputs(cfg);
  const auto camera = camera_for(cfg);
  const osm::RoadGraph graph = bundle::load_map(cfg);
  const auto records = bundle::read_manifest(*cfg.manifest, cfg.heading);
  const auto corrected = cfg.poses ? bundle::read_corrected_poses(*cfg.poses) : std::map<std::string, geo::Pose>{};

  const fs::path out(cfg.out);
  fs::create_directories(out);
  fs::path raster_dir;
  if (cfg.write_rasters) {
    raster_dir = out / "rasters";
    fs::create_directories(raster_dir);
  }
  std::vector<SceneOutcome> outcomes(records.size());
  bundle::parallel_for(records.size(), cfg.jobs, [&](std::size_t i) {
    const auto it = corrected.find(records[i].scene_id);
    const std::optional<geo::Pose> pose = it != corrected.end() ? std::optional{it->second} : std::nullopt;
    outcomes[i] = run_validate_scene(records[i], pose, graph, cfg, camera, raster_dir);
  });

  const BatchAnalysis a = analyze(outcomes, cfg);
  const json report = validate_report(outcomes, a, cfg);
  write_json(out / "report.json", report);
  if (cfg.write_csv) bundle::write_text(out / "scenes.csv", scenes_csv(report));
  return report.at("errors").empty() ? kExitOk : kExitPartial;
}

// ---- correct-pose -----------------------------------------------------------------------------

struct CorrectionOutcome {
  std::string scene_id;
  std::optional<localize::CorrectionResult> result;
  std::optional<std::string> error;
};

inline int cmd_correct_pose(const RunConfig& cfg) {
  check_inputs(cfg);
  const auto camera = camera_for(cfg);
  const osm::RoadGraph graph = bundle::load_map(cfg);
  const auto records = bundle::read_manifest(*cfg.manifest, cfg.heading);
  const fs::path out(cfg.out);
  fs::create_directories(out);

  const double radius = cfg.grid.reach() + cfg.search.radius + 2.0 * cfg.search.fine_step + 1.0;
  std::vector<CorrectionOutcome> outcomes(records.size());
  bundle::parallel_for(records.size(), cfg.jobs, [&](std::size_t i) {
    const auto& rec = records[i];
    auto& o = outcomes[i];
    o.scene_id = rec.scene_id;
    try {
      if (!rec.gt_mask_path) throw InvalidInput("scene has no ground-truth mask");
      const bev::BevMask gt = to_bev(io::read_labels(*rec.gt_mask_path), *rec.gt_mask_path, cfg, camera);
      const geo::LocalFrame frame{rec.pose.position()};
      const auto elements = bundle::elements_near(graph, rec.pose, frame, radius, cfg.widths);
      o.result = localize::correct_pose({rec.pose, frame, elements, &gt, cfg.policy}, cfg.search);
    } catch (const std::exception& e) {
      o.error = e.what();
    }
  });

  std::string lines;
  json errors = json::array();
  std::vector<double> before, after;
  for (const auto& o : outcomes) {
    if (o.error) {
      errors.push_back({{"scene_id", o.scene_id}, {"message", *o.error}});
      continue;
    }
    const auto& r = *o.result;
    const geo::LocalFrame f{r.original_pose.position()};
    const double moved = geo::norm(geo::to_local(f, r.corrected_pose.position()));
    json line = {{"scene_id", o.scene_id},
                 {"original", bundle::pose_json(r.original_pose)},
                 {"corrected", bundle::pose_json(r.corrected_pose)},
                 {"dice_before", bundle::ratio_json(r.dice_before)},
                 {"dice_after", bundle::ratio_json(r.dice_after)},
                 {"displacement_m", moved},
                 {"candidates_evaluated", r.candidates_evaluated},
                 {"coarse_candidates", r.coarse_candidates},
                 {"undefined_scores", r.undefined_scores},
                 {"fine_rounds", r.fine_rounds}};
    lines += line.dump() + "\n";
    before.push_back(r.dice_before);
    after.push_back(r.dice_after);
  }
  bundle::write_text(out / "poses.jsonl", lines);

  auto dist = [&](const std::vector<double>& v) -> json {
    if (v.empty()) return nullptr;
    std::vector<metrics::Ratio> r(v.begin(), v.end());
    return {{"summary", to_json(validate::summarize(r, cfg.whisker_fence))}, {"histogram", bundle::histogram(v)}};
  };
  json summary;
  summary["tool"] = "mapval";
  summary["command"] = "correct-pose";
  summary["config"] = config::to_json(cfg);
  summary["counts"] = {{"total", outcomes.size()}, {"corrected", before.size()}, {"errors", errors.size()}};
  summary["dice_before"] = dist(before);
  summary["dice_after"] = dist(after);
  summary["errors"] = errors;
  write_json(out / "correct_pose.json", summary);
  return errors.empty() ? kExitOk : kExitPartial;
}

// ---- synth ------------------------------------------------------------------------------------

struct SynthSpec {
  std::uint64_t seed = 1;
  synth::LayoutSpec layout{synth::Layout::kTIntersection, 6.5, 0.0, 0};
  bev::GridSpec grid = bev::GridSpec::default_grid();
  std::string policy_name = "cityscapes";
  metrics::LabelPolicy policy = metrics::LabelPolicy::cityscapes();
  int clean = 10, fp = 0, fn = 0;
  double error_fraction = 0.08;  // injected error pixels as a share of the ground-truth road pixels
  synth::Jitter jitter;          // per-axis bound, drawn uniformly in [-bound, bound]
  double jitter_radius = 0.0;    // extra planar offset: magnitude uniform in [0, r], direction uniform
  double along_min = -30.0, along_max = -10.0, lateral_max = 1.5;
  int occluder_blobs = 0;
  double occluder_size = 1.5;
  std::optional<bev::CameraModel> camera;
  bool write_gt = true;

  void check() const {
    if (clean < 0 || fp < 0 || fn < 0 || clean + fp + fn == 0) throw ConfigError("synth needs at least one scene");
    if (!(error_fraction > 0.0 && error_fraction < 1.0)) throw ConfigError("error_fraction must lie in (0, 1)");
    if (!(layout.width > 0)) throw ConfigError("road width must be > 0");
    if (!(along_min <= along_max) || !(lateral_max >= 0) || !(jitter_radius >= 0))
      throw ConfigError("synth placement ranges are inconsistent");
    if (!(lateral_max < layout.width / 2)) throw ConfigError("lateral_max must keep the vehicle on the road");
    if (occluder_blobs < 0 || !(occluder_size > 0)) throw ConfigError("occluder settings must be non-negative");
  }
};

inline json to_json(const SynthSpec& s) {
  json j;
  j["seed"] = s.seed;
  j["layout"] = synth::to_string(s.layout.layout);
  j["width"] = s.layout.width;
  j["heading"] = s.layout.heading;
  j["grid"] = config::to_json(s.grid);
  j["policy"] = s.policy_name == "custom" ? config::to_json(s.policy) : json(s.policy_name);
  j["scenes"] = {{"clean", s.clean}, {"fp", s.fp}, {"fn", s.fn}};
  j["error_fraction"] = s.error_fraction;
  j["jitter"] = {{"along", s.jitter.along}, {"across", s.jitter.across}, {"heading", s.jitter.heading},
                 {"radius", s.jitter_radius}};
  j["truth"] = {{"along_min", s.along_min}, {"along_max", s.along_max}, {"lateral_max", s.lateral_max}};
  j["occluders"] = {{"count", s.occluder_blobs}, {"size", s.occluder_size}};
  j["camera"] = s.camera ? config::to_json(*s.camera) : json(nullptr);
  j["write_gt"] = s.write_gt;
  return j;
}

inline SynthSpec synth_spec_from_json(const json& j) {
  config::detail::Reader r(j, "synth");
  SynthSpec s;
  r.get("seed", s.seed);
  std::string layout;
  if (r.get("layout", layout)) {
    try {
      s.layout.layout = synth::parse_layout(layout);
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  }
  r.get("width", s.layout.width);
  r.get("heading", s.layout.heading);
  if (r.has("grid")) s.grid = config::grid_from_json(r.at("grid"));
  if (r.has("policy")) {
    const json& p = r.at("policy");
    if (p.is_string()) {
      s.policy_name = p.get<std::string>();
      s.policy = config::policy_preset(s.policy_name);
    } else {
      s.policy_name = "custom";
      s.policy = config::policy_from_json(p);
    }
  }
  if (r.has("scenes")) {
    config::detail::Reader n(r.at("scenes"), "synth.scenes");
    n.get("clean", s.clean);
    n.get("fp", s.fp);
    n.get("fn", s.fn);
    n.finish();
  }
  r.get("error_fraction", s.error_fraction);
  if (r.has("jitter")) {
    config::detail::Reader n(r.at("jitter"), "synth.jitter");
    n.get("along", s.jitter.along);
    n.get("across", s.jitter.across);
    n.get("heading", s.jitter.heading);
    n.get("radius", s.jitter_radius);
    n.finish();
  }
  if (r.has("truth")) {
    config::detail::Reader n(r.at("truth"), "synth.truth");
    n.get("along_min", s.along_min);
    n.get("along_max", s.along_max);
    n.get("lateral_max", s.lateral_max);
    n.finish();
  }
  if (r.has("occluders")) {
    config::detail::Reader n(r.at("occluders"), "synth.occluders");
    n.get("count", s.occluder_blobs);
    n.get("size", s.occluder_size);
    n.finish();
  }
  if (r.has("camera")) s.camera = config::camera_from_json(r.at("camera"));
  r.get("write_gt", s.write_gt);
  r.finish();
  try {
    s.policy.check();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  s.check();
  return s;
}

namespace detail {

/// Grows a rectangle forward from `y0` until the perturbation reaches `target` pixels.
template <class Apply>
synth::SynthScene grow_until(double x_min, double x_max, double y0, double y_max, std::size_t target, double step,
                             Apply&& apply) {
  synth::SynthScene s;
  for (double len = step; y0 + len <= y_max + 1e-9; len += step) {
    s = apply(synth::Rect{x_min, x_max, y0, y0 + len});
    if (std::max(s.fp_pixels, s.fn_pixels) >= target) return s;
  }
  throw ConfigError("the grid is too small for the requested error_fraction");
}

}  // namespace detail

/// One synthetic scene: kind 0 clean, 1 false-positive blob, 2 erased road.
inline synth::SynthScene make_synth_scene(const SynthSpec& spec, const synth::SynthMap& map,
                                          std::span<const osm::RoadElement> elements, int kind, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto sym = [&](double bound) { return bound * (2.0 * unit(rng) - 1.0); };
  const double along = spec.along_min + (spec.along_max - spec.along_min) * unit(rng);
  const double lateral = sym(spec.lateral_max);
  const geo::Pose base(map.frame.origin, spec.layout.heading);
  const geo::Pose truth(geo::from_local(map.frame, geo::from_vehicle_frame(base, map.frame, {lateral, along})),
                        spec.layout.heading);
  synth::Jitter j{sym(spec.jitter.along), sym(spec.jitter.across), sym(spec.jitter.heading)};
  const double mag = spec.jitter_radius * unit(rng), dir = 2.0 * M_PI * unit(rng);
  j.across += mag * std::cos(dir);
  j.along += mag * std::sin(dir);
  synth::PerturbationSpec p;
  if (j.along != 0.0 || j.across != 0.0 || j.heading != 0.0) p.pose_jitter = j;
  p.occluder_blobs = spec.occluder_blobs;
  p.occluder_size = spec.occluder_size;
  p.seed = rng();
  const double blob_offset = unit(rng);  // varies where along the road the error sits
  synth::SynthScene s = synth::gen_scene(elements, map.frame, truth, spec.grid, spec.policy, p);
  if (kind == 0) return s;

  std::size_t road = 0;
  const std::uint8_t road_label = synth::SynthLabels::from_policy(spec.policy).road;
  for (auto l : s.gt.labels.data()) road += l == road_label;
  const auto target = static_cast<std::size_t>(std::ceil(spec.error_fraction * static_cast<double>(road)));
  const double res = spec.grid.resolution();
  const double y_top = spec.grid.row_y(0), y_bottom = spec.grid.row_y(spec.grid.height() - 1);
  const double centre = -lateral, half = spec.layout.width / 2.0;
  const double y0 = y_bottom + (1.0 + 10.0 * blob_offset);
  if (kind == 1) {
    // Road-coloured blob beside the left road edge, like an unmapped parking strip.
    const double x_max = centre - half - 2.0 * res, x_min = std::max(x_max - 4.0, spec.grid.col_x(0));
    return detail::grow_until(x_min, x_max, y0, y_top, target, 0.2, [&](const synth::Rect& rect) {
      synth::PerturbationSpec q = p;
      q.fp_blob = rect;
      return synth::gen_scene(elements, map.frame, truth, spec.grid, spec.policy, q);
    });
  }
  // Segmentation misses a stretch of mapped road ahead of the vehicle.
  return detail::grow_until(centre - half - 1.0, centre + half + 1.0, std::max(y0, 1.0), y_top, target, 0.2,
                            [&](const synth::Rect& rect) {
                              synth::PerturbationSpec q = p;
                              q.fn_erase = rect;
                              return synth::gen_scene(elements, map.frame, truth, spec.grid, spec.policy, q);
                            });
}

inline int cmd_synth(const SynthSpec& spec, const fs::path& out) {
  spec.check();
  fs::create_directories(out / "masks");
  const synth::SynthMap map = synth::gen_map(spec.layout);
  bundle::write_text(out / "map.osm", osm::write_osm(map.graph));
  const auto elements = osm::to_elements(map.graph, map.frame, geo::bbox_around(geo::Pose(map.frame.origin, 0), 400.0),
                                         osm::WidthConfig{});
  const synth::SynthLabels labels = synth::SynthLabels::from_policy(spec.policy);
  std::mt19937_64 rng(spec.seed);
  std::string manifest, truth;
  const int total = spec.clean + spec.fp + spec.fn;
  for (int i = 0; i < total; ++i) {
    const int kind = i < spec.clean ? 0 : (i < spec.clean + spec.fp ? 1 : 2);
    char id[32];
    std::snprintf(id, sizeof id, "scene_%04d", i);
    const synth::SynthScene s = make_synth_scene(spec, map, elements, kind, rng);
    const std::string pred_rel = std::string("masks/") + id + "_pred.png";
    const std::string gt_rel = std::string("masks/") + id + "_gt.png";
    auto write_mask = [&](const bev::BevMask& m, const std::string& rel) {
      if (spec.camera) {
        io::write_labels(out / rel, synth::render_camera_mask(m, *spec.camera, labels.background, labels.background).labels);
      } else {
        io::write_labels(out / rel, m.labels);
      }
    };
    write_mask(s.pred, pred_rel);
    json line = {{"scene_id", id}, {"pred_mask", pred_rel}};
    if (spec.write_gt) {
      write_mask(s.gt, gt_rel);
      line["gt_mask"] = gt_rel;
    }
    line["lat"] = s.gps_pose.position().lat;
    line["lon"] = s.gps_pose.position().lon;
    line["heading"] = s.gps_pose.heading();
    manifest += line.dump() + "\n";
    static const char* kinds[] = {"clean", "fp", "fn"};
    truth += json{{"scene_id", id}, {"kind", kinds[kind]}, {"truth", bundle::pose_json(s.truth_pose)},
                  {"gps", bundle::pose_json(s.gps_pose)}, {"fp_pixels", s.fp_pixels}, {"fn_pixels", s.fn_pixels}}
                 .dump() +
             "\n";
  }
  bundle::write_text(out / "manifest.jsonl", manifest);
  bundle::write_text(out / "truth.jsonl", truth);
  json run = {{"map", "map.osm"}, {"manifest", "manifest.jsonl"}};
  if (spec.camera) {
    write_json(out / "camera.json", config::to_json(*spec.camera));
    run["camera"] = "camera.json";
  }
  run["mask_space"] = spec.camera ? "camera" : "bev";
  run["grid"] = config::to_json(spec.grid);
  run["policy"] = spec.policy_name == "custom" ? config::to_json(spec.policy) : json(spec.policy_name);
  write_json(out / "config.json", run);
  write_json(out / "synth_spec.json", to_json(spec));
  return kExitOk;
}

// ---- report -----------------------------------------------------------------------------------

/// Re-renders the artifacts of a validate report; a new threshold re-flags from the stored metrics.
inline int cmd_report(const fs::path& report_path, const fs::path& out, std::optional<double> dice_pred_max) {
  json rep = config::read_json_file(report_path);
  if (!rep.is_object() || rep.value("command", "") != "validate" || !rep.contains("scenes"))
    throw ConfigError(report_path.string() + " is not a validate report");
  fs::create_directories(out);
  if (dice_pred_max) {
    if (!(*dice_pred_max >= 0.0 && *dice_pred_max <= 1.0)) throw ConfigError("dice_pred_max must lie in [0, 1]");
    validate::JudgementConfig jc;
    const json& echo = rep.at("config").at("judgement");
    if (echo.at("ios_max").is_number()) jc.ios_max = echo.at("ios_max").get<double>();
    if (echo.at("iom_max").is_number()) jc.iom_max = echo.at("iom_max").get<double>();
    jc.tie_tolerance = echo.at("tie_tolerance").get<double>();
    std::vector<validate::SceneResult> analyzed;
    for (auto& s : rep.at("scenes")) {
      s["flagged"] = false;
      s["error_type"] = nullptr;
      if (s.at("status") != "analyzed") continue;
      validate::SceneResult r;
      r.scene_id = s.at("scene_id").get<std::string>();
      const json& m = s.at("pred").at("metrics");
      r.pred.metrics = {ratio_from(m.at("ios")), ratio_from(m.at("iom")), ratio_from(m.at("dice"))};
      analyzed.push_back(std::move(r));
    }
    const auto flagged = validate::flag_outliers(analyzed, *dice_pred_max, jc);
    std::map<std::string, std::string> types;
    for (const auto& f : flagged) types[f.scene_id] = validate::to_string(f.type);
    for (auto& s : rep.at("scenes")) {
      const auto it = types.find(s.at("scene_id").get<std::string>());
      if (it == types.end()) continue;
      s["flagged"] = true;
      s["error_type"] = it->second;
    }
    rep["dice_pred_max"] = *dice_pred_max;
    rep["config"]["dice_pred_max"] = *dice_pred_max;
    rep["flagged"] = flagged_json(flagged);
    rep["counts"]["flagged"] = flagged.size();
    write_json(out / "report.json", rep);
  }
  bundle::write_text(out / "scenes.csv", scenes_csv(rep));
  std::ostringstream curve;
  curve << "threshold,fraction,count\n";
  for (const auto& p : rep.at("relative_count_curve"))
    curve << csv_num(p.at("threshold").get<double>()) << ',' << csv_num(p.at("fraction").get<double>()) << ','
          << p.at("count").get<std::size_t>() << '\n';
  bundle::write_text(out / "curve.csv", curve.str());

  std::ostringstream md;
  const json& c = rep.at("counts");
  md << "# Map validation report\n\n"
     << "- scenes: " << c.at("total") << " (analyzed " << c.at("analyzed") << ", cleaned " << c.at("cleaned")
     << ", errors " << c.at("errors") << ")\n"
     << "- dice_pred_max: " << (rep.at("dice_pred_max").is_null() ? "n/a" : csv_num(rep.at("dice_pred_max").get<double>()))
     << "\n- flagged: " << rep.at("flagged").size() << "\n\n";
  if (!rep.at("summary").is_null()) {
    md << "| metric | min | q1 | median | q3 | max | mean | stddev |\n|---|---|---|---|---|---|---|---|\n";
    for (const char* k : {"dice", "ios", "iom", "gt_dice", "gt_ios", "gt_iom"}) {
      const json& s = rep.at("summary").at(k);
      if (s.is_null()) continue;
      md << "| " << k;
      for (const char* f : {"min", "q1", "median", "q3", "max", "mean", "stddev"}) md << " | " << csv_num(s.at(f).get<double>());
      md << " |\n";
    }
    md << '\n';
  }
  if (!rep.at("flagged").empty()) {
    md << "| flagged scene | dice | ios | iom | type |\n|---|---|---|---|---|\n";
    for (const auto& f : rep.at("flagged"))
      md << "| " << f.at("scene_id").get<std::string>() << " | " << csv_num(f.at("dice").get<double>()) << " | "
         << csv_num(ratio_from(f.at("ios"))) << " | " << csv_num(ratio_from(f.at("iom"))) << " | "
         << f.at("type").get<std::string>() << " |\n";
  }
  bundle::write_text(out / "summary.md", md.str());
  return kExitOk;
}

}  // namespace mapval::app
