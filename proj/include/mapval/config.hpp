#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mapval/bev.hpp"
#include "mapval/error.hpp"
#include "mapval/geodesy.hpp"
#include "mapval/localize.hpp"
#include "mapval/mapio.hpp"
#include "mapval/metrics.hpp"
#include "mapval/validate.hpp"

namespace mapval::config {

using json = nlohmann::ordered_json;

/// Flagging threshold: a fixed dice value or a statistic of the batch's predicted dice.
struct DiceThreshold {
  std::optional<double> value;
  std::string statistic = "q1";  // "q1" or "median", used when no value is set

  double resolve(const validate::MetricSummary& dice) const {
    if (value) return *value;
    return statistic == "median" ? dice.median : dice.q1;
  }
};

struct RunConfig {
  std::optional<std::string> map;
  std::optional<std::string> manifest;
  std::optional<std::string> camera;
  std::optional<std::string> poses;  // correct-pose output whose corrected poses validate should use
  std::string mask_space = "camera";  // "camera": warp with the camera; "bev": masks already on the grid
  bev::GridSpec grid = bev::GridSpec::default_grid();
  std::string policy_name = "cityscapes";  // or "custom" for an inline table
  metrics::LabelPolicy policy = metrics::LabelPolicy::cityscapes();
  osm::WidthConfig widths;
  std::set<std::string> drivable_classes = osm::default_drivable_classes();
  localize::SearchConfig search;
  geo::HeadingConvention heading;
  DiceThreshold dice_pred_max;
  std::optional<double> gt_fit_min;
  double whisker_fence = 1.5;
  validate::JudgementConfig judgement;
  std::vector<double> curve_thresholds = default_thresholds();
  std::string out = default_out_dir();
  int jobs = 1;
  bool write_rasters = true;
  bool write_csv = true;

  static std::vector<double> default_thresholds() {
    std::vector<double> t;
    for (int i = 0; i <= 20; ++i) t.push_back(i / 20.0);
    return t;
  }

  static std::string default_out_dir() {
    const char* env = std::getenv("MAPVAL_OUT");
    return env && *env ? env : "mapval-out";
  }

  void check() const {
    if (mask_space != "camera" && mask_space != "bev") throw ConfigError("mask_space must be \"camera\" or \"bev\"");
    if (dice_pred_max.value && !(*dice_pred_max.value >= 0.0 && *dice_pred_max.value <= 1.0 + 1e-12))
      throw ConfigError("dice_pred_max must lie in [0, 1]");
    if (!dice_pred_max.value && dice_pred_max.statistic != "q1" && dice_pred_max.statistic != "median")
      throw ConfigError("dice_pred_max must be a number, \"q1\" or \"median\"");
    if (gt_fit_min && !(*gt_fit_min >= 0.0 && *gt_fit_min <= 1.0)) throw ConfigError("gt_fit_min must lie in [0, 1]");
    if (!(whisker_fence >= 0.0)) throw ConfigError("whisker_fence must be >= 0");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (!std::is_sorted(curve_thresholds.begin(), curve_thresholds.end()))
      throw ConfigError("curve_thresholds must be sorted ascending");
    if (drivable_classes.empty()) throw ConfigError("drivable_classes must not be empty");
    try {
      policy.check();
      widths.check();
      search.check();
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

/// Strict object reader: every key must be consumed, type errors name the offending key.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <class T>
  bool get(const std::string& key, T& out) {
    if (!has(key)) return false;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path(key) + " has the wrong type");
    }
    return true;
  }

  template <class T>
  bool get(const std::string& key, std::optional<T>& out) {
    T v{};
    if (!get(key, v)) return false;
    out = v;
    return true;
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown configuration key " + path(k));
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline metrics::LabelSet ids_from(const json& j, const std::string& where) {
  metrics::LabelSet s;
  if (!j.is_array()) throw ConfigError(where + " must be an array of label ids");
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<int>() < 0 || v.get<int>() > 255)
      throw ConfigError(where + " holds a label id outside [0, 255]");
    s.set(v.get<std::size_t>());
  }
  return s;
}

inline json ids_to(const metrics::LabelSet& s) {
  json a = json::array();
  for (std::size_t i = 0; i < s.size(); ++i) if (s.test(i)) a.push_back(i);
  return a;
}

}  // namespace detail

inline json to_json(const metrics::LabelPolicy& p) {
  return {{"road_ids", detail::ids_to(p.road_ids)},
          {"occluder_ids", detail::ids_to(p.occluder_ids)},
          {"ignore_ids", detail::ids_to(p.ignore_ids)},
          {"void_id", p.void_id}};
}

inline metrics::LabelPolicy policy_preset(const std::string& name) {
  if (name == "cityscapes") return metrics::LabelPolicy::cityscapes();
  throw ConfigError("unknown label policy preset \"" + name + "\"");
}

inline metrics::LabelPolicy policy_from_json(const json& j) {
  detail::Reader r(j, "policy");
  metrics::LabelPolicy p;
  p.road_ids = r.has("road_ids") ? detail::ids_from(r.at("road_ids"), "policy.road_ids") : metrics::LabelSet{};
  if (r.has("occluder_ids")) p.occluder_ids = detail::ids_from(r.at("occluder_ids"), "policy.occluder_ids");
  if (r.has("ignore_ids")) p.ignore_ids = detail::ids_from(r.at("ignore_ids"), "policy.ignore_ids");
  int void_id = 255;
  r.get("void_id", void_id);
  if (void_id < 0 || void_id > 255) throw ConfigError("policy.void_id must lie in [0, 255]");
  p.void_id = static_cast<std::uint8_t>(void_id);
  r.finish();
  return p;
}

inline json to_json(const bev::GridSpec& g) {
  return {{"resolution", g.resolution()}, {"width", g.width()}, {"height", g.height()},
          {"vehicle_col", g.vehicle_col()}, {"vehicle_row", g.vehicle_row()}};
}

inline bev::GridSpec grid_from_json(const json& j) {
  detail::Reader r(j, "grid");
  const bev::GridSpec d = bev::GridSpec::default_grid();
  double res = d.resolution();
  int w = d.width(), h = d.height(), vc = d.vehicle_col(), vr = d.vehicle_row();
  r.get("resolution", res);
  r.get("width", w);
  r.get("height", h);
  r.get("vehicle_col", vc);
  r.get("vehicle_row", vr);
  r.finish();
  try {
    return {res, w, h, vc, vr};
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
}

inline json to_json(const bev::CameraModel& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"camera_height", c.camera_height},
          {"pitch", c.pitch}, {"roll", c.roll}, {"yaw", c.yaw}, {"image_width", c.image_width},
          {"image_height", c.image_height}};
}

inline bev::CameraModel camera_from_json(const json& j) {
  detail::Reader r(j, "camera");
  bev::CameraModel c;
  r.get("fx", c.fx);
  r.get("fy", c.fy);
  r.get("cx", c.cx);
  r.get("cy", c.cy);
  r.get("camera_height", c.camera_height);
  r.get("pitch", c.pitch);
  r.get("roll", c.roll);
  r.get("yaw", c.yaw);
  r.get("image_width", c.image_width);
  r.get("image_height", c.image_height);
  r.finish();
  try {
    c.check();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("camera: ") + e.what());
  }
  return c;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline bev::CameraModel load_camera(const std::filesystem::path& path) { return camera_from_json(read_json_file(path)); }

inline json to_json(const RunConfig& c) {
  json widths = {{"default_lane_width", c.widths.default_lane_width},
                 {"class_widths", c.widths.class_widths},
                 {"class_lane_widths", c.widths.class_lane_widths},
                 {"fallback_width", c.widths.fallback_width}};
  json search = {{"radius", c.search.radius},
                 {"along_step", c.search.along_step},
                 {"across_step", c.search.across_step},
                 {"fine_step", c.search.fine_step},
                 {"try_reversed_heading", c.search.try_reversed_heading},
                 {"max_fine_rounds", c.search.max_fine_rounds}};
  auto opt = [](const auto& o) -> json { return o ? json(*o) : json(nullptr); };
  json j;
  j["map"] = opt(c.map);
  j["manifest"] = opt(c.manifest);
  j["camera"] = opt(c.camera);
  j["poses"] = opt(c.poses);
  j["mask_space"] = c.mask_space;
  j["grid"] = to_json(c.grid);
  j["policy"] = c.policy_name == "custom" ? to_json(c.policy) : json(c.policy_name);
  j["policy_table"] = to_json(c.policy);
  j["widths"] = widths;
  j["drivable_classes"] = c.drivable_classes;
  j["search"] = search;
  j["heading"] = {{"offset_deg", c.heading.offset_deg}, {"counter_clockwise", c.heading.counter_clockwise}};
  j["dice_pred_max"] = c.dice_pred_max.value ? json(*c.dice_pred_max.value) : json(c.dice_pred_max.statistic);
  j["gt_fit_min"] = opt(c.gt_fit_min);
  j["whisker_fence"] = c.whisker_fence;
  j["judgement"] = {{"ios_max", opt(c.judgement.ios_max)}, {"iom_max", opt(c.judgement.iom_max)},
                    {"tie_tolerance", c.judgement.tie_tolerance}};
  j["curve_thresholds"] = c.curve_thresholds;
  j["out"] = c.out;
  j["jobs"] = c.jobs;
  j["write_rasters"] = c.write_rasters;
  j["write_csv"] = c.write_csv;
  return j;
}

inline void set_dice_pred_max(RunConfig& c, const json& v) {
  if (v.is_number()) {
    c.dice_pred_max.value = v.get<double>();
  } else if (v.is_string()) {
    c.dice_pred_max.value.reset();
    c.dice_pred_max.statistic = v.get<std::string>();
  } else {
    throw ConfigError("dice_pred_max must be a number, \"q1\" or \"median\"");
  }
}

/// Overlays the keys present in `j` onto `base`. Relative paths resolve against `base_dir`.
inline RunConfig merge(RunConfig c, const json& j, const std::filesystem::path& base_dir = {}) {
  detail::Reader r(j, "config");
  auto path_key = [&](const char* key, std::optional<std::string>& out) {
    std::string s;
    if (!r.get(key, s)) return;
    const std::filesystem::path p(s);
    out = (p.is_relative() && !base_dir.empty() ? base_dir / p : p).string();
  };
  path_key("map", c.map);
  path_key("manifest", c.manifest);
  path_key("camera", c.camera);
  path_key("poses", c.poses);
  r.get("mask_space", c.mask_space);
  if (r.has("grid")) c.grid = grid_from_json(r.at("grid"));
  if (r.has("policy")) {
    const json& p = r.at("policy");
    if (p.is_string()) {
      c.policy_name = p.get<std::string>();
      c.policy = policy_preset(c.policy_name);
    } else {
      c.policy_name = "custom";
      c.policy = policy_from_json(p);
    }
  }
  r.has("policy_table");  // echoed by reports, derived from "policy"
  if (r.has("widths")) {
    detail::Reader w(r.at("widths"), "widths");
    w.get("default_lane_width", c.widths.default_lane_width);
    w.get("class_widths", c.widths.class_widths);
    w.get("class_lane_widths", c.widths.class_lane_widths);
    w.get("fallback_width", c.widths.fallback_width);
    w.finish();
  }
  r.get("drivable_classes", c.drivable_classes);
  if (r.has("search")) {
    detail::Reader s(r.at("search"), "search");
    s.get("radius", c.search.radius);
    s.get("along_step", c.search.along_step);
    s.get("across_step", c.search.across_step);
    s.get("fine_step", c.search.fine_step);
    s.get("try_reversed_heading", c.search.try_reversed_heading);
    s.get("max_fine_rounds", c.search.max_fine_rounds);
    s.finish();
  }
  if (r.has("heading")) {
    detail::Reader h(r.at("heading"), "heading");
    h.get("offset_deg", c.heading.offset_deg);
    h.get("counter_clockwise", c.heading.counter_clockwise);
    h.finish();
  }
  if (r.has("dice_pred_max")) set_dice_pred_max(c, r.at("dice_pred_max"));
  r.get("gt_fit_min", c.gt_fit_min);
  r.get("whisker_fence", c.whisker_fence);
  if (r.has("judgement")) {
    detail::Reader g(r.at("judgement"), "judgement");
    g.get("ios_max", c.judgement.ios_max);
    g.get("iom_max", c.judgement.iom_max);
    g.get("tie_tolerance", c.judgement.tie_tolerance);
    g.finish();
  }
  r.get("curve_thresholds", c.curve_thresholds);
  r.get("out", c.out);
  r.get("jobs", c.jobs);
  r.get("write_rasters", c.write_rasters);
  r.get("write_csv", c.write_csv);
  r.finish();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  return merge(RunConfig{}, j, path.parent_path());
}

inline void require_file(const std::optional<std::string>& path, const std::string& what) {
  if (!path) throw ConfigError(what + " path is required");
  if (!std::filesystem::is_regular_file(*path)) throw ConfigError(what + " not found: " + *path);
}

}  // namespace mapval::config
