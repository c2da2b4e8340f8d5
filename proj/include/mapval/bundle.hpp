#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "mapval/bev.hpp"
#include "mapval/config.hpp"
#include "mapval/error.hpp"
#include "mapval/geodesy.hpp"
#include "mapval/mapio.hpp"
#include "mapval/raster_io.hpp"
#include "mapval/validate.hpp"

namespace mapval::bundle {

using config::json;

inline json pose_json(const geo::Pose& p) {
  return {{"lat", p.position().lat}, {"lon", p.position().lon}, {"heading", p.heading()}};
}

/// Reads {"lat", "lon", "heading"} from `j`, passing the heading through `conv`.
inline geo::Pose pose_from(const json& j, const std::string& where, const geo::HeadingConvention& conv) {
  auto num = [&](const char* k) {
    if (!j.contains(k) || !j.at(k).is_number()) throw ConfigError(where + ": \"" + k + "\" must be a number");
    return j.at(k).get<double>();
  };
  const geo::GeoPoint g{num("lat"), num("lon")};
  if (!g.valid()) throw ConfigError(where + ": latitude/longitude out of range");
  return {g, conv.apply(num("heading"))};
}

/// Parses a JSON-lines manifest. Mask paths resolve against the manifest's directory.
inline std::vector<validate::SceneRecord> read_manifest(const std::filesystem::path& path,
                                                        const geo::HeadingConvention& conv) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  const std::filesystem::path dir = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return (fp.is_relative() ? dir / fp : fp).string();
  };
  std::vector<validate::SceneRecord> out;
  std::set<std::string> ids;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(n);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(where + ": each line must be a JSON object");
    validate::SceneRecord r;
    if (!j.contains("scene_id") || !j["scene_id"].is_string()) throw ConfigError(where + ": missing scene_id");
    r.scene_id = j["scene_id"].get<std::string>();
    if (r.scene_id.empty() || !ids.insert(r.scene_id).second)
      throw ConfigError(where + ": empty or duplicate scene_id \"" + r.scene_id + "\"");
    if (!j.contains("pred_mask") || !j["pred_mask"].is_string()) throw ConfigError(where + ": missing pred_mask");
    r.pred_mask_path = resolve(j["pred_mask"].get<std::string>());
    if (j.contains("gt_mask") && !j["gt_mask"].is_null()) {
      if (!j["gt_mask"].is_string()) throw ConfigError(where + ": gt_mask must be a string");
      r.gt_mask_path = resolve(j["gt_mask"].get<std::string>());
    }
    r.pose = pose_from(j, where, conv);
    if (j.contains("corrected") && !j["corrected"].is_null()) r.corrected_pose = pose_from(j["corrected"], where, conv);
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.scene_id < b.scene_id; });
  return out;
}

/// Corrected poses from a correct-pose run (poses.jsonl), keyed by scene id. Headings are
/// already in the internal convention.
inline std::map<std::string, geo::Pose> read_corrected_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open poses file " + path.string());
  std::map<std::string, geo::Pose> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(n);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (!j.contains("scene_id") || !j.contains("corrected")) throw ConfigError(where + ": needs scene_id and corrected");
    out[j["scene_id"].get<std::string>()] = pose_from(j["corrected"], where, {});
  }
  return out;
}

/// Road graph restricted to the drivable classes.
inline osm::RoadGraph load_map(const config::RunConfig& cfg) {
  try {
    return osm::filter_drivable(osm::load_osm_file(*cfg.map), cfg.drivable_classes);
  } catch (const Error& e) {
    throw ConfigError("map " + *cfg.map + ": " + e.what());
  }
}

/// Road elements around `pose` in a local frame centred on it.
inline std::vector<osm::RoadElement> elements_near(const osm::RoadGraph& graph, const geo::Pose& pose,
                                                   const geo::LocalFrame& frame, double radius,
                                                   const osm::WidthConfig& widths) {
  return osm::to_elements(graph, frame, geo::bbox_around(pose, radius), widths);
}

/// Runs fn(i) for i in [0, n) on `jobs` threads. fn must not throw.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), n);
  if (threads <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

/// Scene id made safe for use in a file name.
inline std::string file_stem(const std::string& id) {
  std::string s = id;
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

inline json ratio_json(const metrics::Ratio& r) { return r ? json(*r) : json(nullptr); }

/// Fixed-bin histogram over [0, 1]; the last bin is closed.
inline json histogram(const std::vector<double>& values, int bins = 20) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    const int b = std::clamp(static_cast<int>(std::floor(v * bins)), 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  json edges = json::array();
  for (int i = 0; i <= bins; ++i) edges.push_back(static_cast<double>(i) / bins);
  return {{"edges", edges}, {"counts", counts}};
}

}  // namespace mapval::bundle
