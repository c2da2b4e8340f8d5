#pragma once

#include <expat.h>
#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mapval/error.hpp"
#include "mapval/geodesy.hpp"

namespace mapval::osm {

using NodeId = std::int64_t;
using WayId = std::int64_t;

struct RoadWay {
  WayId id = 0;
  std::vector<NodeId> node_refs;
  std::string highway_class;
  std::optional<double> explicit_width;  // meters, > 0
  std::optional<int> lanes;              // > 0

  friend bool operator==(const RoadWay&, const RoadWay&) = default;
};

struct RoadGraph {
  std::map<NodeId, geo::GeoPoint> nodes;
  std::vector<RoadWay> ways;  // sorted by id
  std::size_t dropped_ways = 0;  // highway ways discarded for referencing missing nodes
};

/// One centerline segment of a way, in a local frame, carrying the road width.
struct RoadElement {
  geo::LocalPoint a;
  geo::LocalPoint b;
  double width = 0.0;  // meters
  double angle = 0.0;  // heading of b - a, degrees in [0, 360)
  WayId way_id = 0;

  double length() const { return geo::norm(b - a); }
};

struct WidthConfig {
  double default_lane_width = 3.5;
  std::map<std::string, double> class_widths{
      {"motorway", 7.5},  {"primary", 7.0},  {"secondary", 7.0},
      {"residential", 6.5}, {"service", 4.0},
  };
  /// Lane width overrides for classes whose lanes differ from the default.
  std::map<std::string, double> class_lane_widths{{"motorway", 3.75}};
  double fallback_width = 6.0;

  void check() const {
    bool ok = default_lane_width > 0 && fallback_width > 0;
    for (const auto& [k, v] : class_widths) ok = ok && v > 0;
    for (const auto& [k, v] : class_lane_widths) ok = ok && v > 0;
    if (!ok) throw InvalidInput("width configuration contains a non-positive width");
  }
};

inline std::set<std::string> default_drivable_classes() {
  std::set<std::string> out;
  for (const char* base : {"motorway", "trunk", "primary", "secondary", "tertiary"}) {
    out.emplace(base);
    out.emplace(std::string(base) + "_link");
  }
  for (const char* c : {"unclassified", "residential", "service", "living_street"}) out.emplace(c);
  return out;
}

namespace detail {

inline std::optional<double> parse_width(std::string v) {
  std::replace(v.begin(), v.end(), ',', '.');
  char* end = nullptr;
  const double w = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || !std::isfinite(w) || w <= 0.0) return std::nullopt;
  return w;
}

inline std::optional<int> parse_lanes(std::string_view v) {
  int n = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
  if (ec != std::errc{} || ptr == v.data() || n <= 0) return std::nullopt;
  return n;
}

inline const char* attr(const XML_Char** atts, std::string_view name) {
  for (int i = 0; atts[i] != nullptr; i += 2)
    if (name == atts[i]) return atts[i + 1];
  return nullptr;
}

struct ParseState {
  XML_Parser parser = nullptr;
  RoadGraph graph;
  std::vector<RoadWay> pending;
  std::optional<RoadWay> way;
  std::optional<std::string> highway;
  std::string width_tag;
  std::string lanes_tag;
  std::optional<ParseError> error;
  bool saw_root = false;

  void fail(const std::string& msg) {
    if (!error) error.emplace(msg, static_cast<std::size_t>(XML_GetCurrentByteIndex(parser)));
    XML_StopParser(parser, XML_FALSE);
  }
};

inline std::optional<std::int64_t> to_int(const char* s) {
  if (!s) return std::nullopt;
  std::int64_t v = 0;
  const std::string_view sv(s);
  auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v);
  if (ec != std::errc{} || ptr != sv.data() + sv.size()) return std::nullopt;
  return v;
}

inline std::optional<double> to_double(const char* s) {
  if (!s) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s, &end);
  if (end == s || *end != '\0' || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline void XMLCALL on_start(void* user, const XML_Char* name, const XML_Char** atts) {
  auto& st = *static_cast<ParseState*>(user);
  st.saw_root = true;
  const std::string_view tag(name);
  if (tag == "node") {
    auto id = to_int(attr(atts, "id"));
    auto lat = to_double(attr(atts, "lat"));
    auto lon = to_double(attr(atts, "lon"));
    if (!id || !lat || !lon) return st.fail("node without valid id/lat/lon");
    const geo::GeoPoint p{*lat, *lon};
    if (!p.valid()) return st.fail("node " + std::to_string(*id) + " has out-of-range coordinates");
    st.graph.nodes[*id] = p;
  } else if (tag == "way") {
    auto id = to_int(attr(atts, "id"));
    if (!id) return st.fail("way without valid id");
    st.way.emplace();
    st.way->id = *id;
    st.highway.reset();
    st.width_tag.clear();
    st.lanes_tag.clear();
  } else if (tag == "nd" && st.way) {
    auto ref = to_int(attr(atts, "ref"));
    if (!ref) return st.fail("nd without valid ref");
    st.way->node_refs.push_back(*ref);
  } else if (tag == "tag" && st.way) {
    const char* k = attr(atts, "k");
    const char* v = attr(atts, "v");
    if (!k || !v) return;
    const std::string_view key(k);
    if (key == "highway") st.highway = v;
    else if (key == "width") st.width_tag = v;
    else if (key == "lanes") st.lanes_tag = v;
  }
}

inline void XMLCALL on_end(void* user, const XML_Char* name) {
  auto& st = *static_cast<ParseState*>(user);
  if (std::string_view(name) != "way" || !st.way) return;
  if (st.highway) {
    st.way->highway_class = *st.highway;
    st.way->explicit_width = parse_width(st.width_tag);
    st.way->lanes = parse_lanes(st.lanes_tag);
    st.pending.push_back(std::move(*st.way));
  }
  st.way.reset();
}

}  // namespace detail

/// Parses an OSM 0.6 XML document, keeping every node and every `highway`-tagged way.
inline RoadGraph parse_osm(std::string_view document) {
  if (document.find_first_not_of(" \t\r\n") == std::string_view::npos)
    throw ParseError("empty OSM document", 0);

  detail::ParseState st;
  XML_Parser parser = XML_ParserCreate(nullptr);
  if (!parser) throw Error("cannot allocate XML parser");
  st.parser = parser;
  XML_SetUserData(parser, &st);
  XML_SetElementHandler(parser, detail::on_start, detail::on_end);
  const auto status = XML_Parse(parser, document.data(), static_cast<int>(document.size()), XML_TRUE);
  if (status == XML_STATUS_ERROR && !st.error) {
    st.error.emplace(std::string("malformed OSM XML: ") + XML_ErrorString(XML_GetErrorCode(parser)),
                     static_cast<std::size_t>(XML_GetCurrentByteIndex(parser)));
  }
  XML_ParserFree(parser);
  if (st.error) throw *st.error;
  if (!st.saw_root) throw ParseError("OSM document has no elements", 0);

  // Ways may precede their nodes in hand-made files, so resolve references after the full pass.
  for (auto& w : st.pending) {
    const bool complete = w.node_refs.size() >= 2 &&
        std::all_of(w.node_refs.begin(), w.node_refs.end(),
                    [&](NodeId id) { return st.graph.nodes.count(id) != 0; });
    if (complete) st.graph.ways.push_back(std::move(w));
    else ++st.graph.dropped_ways;
  }
  std::stable_sort(st.graph.ways.begin(), st.graph.ways.end(),
                   [](const RoadWay& a, const RoadWay& b) { return a.id < b.id; });
  return std::move(st.graph);
}

/// Reads a `.osm` file; `.gz` files are inflated first.
inline RoadGraph load_osm_file(const std::filesystem::path& path) {
  std::string bytes;
  if (path.extension() == ".gz") {
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw InvalidInput("cannot open map file " + path.string());
    char buf[1 << 16];
    int n = 0;
    while ((n = gzread(f, buf, sizeof buf)) > 0) bytes.append(buf, static_cast<std::size_t>(n));
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw ParseError("corrupt gzip stream in " + path.string(), bytes.size());
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open map file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    bytes = ss.str();
  }
  return parse_osm(bytes);
}

namespace detail {
inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}
}  // namespace detail

/// Serializes a graph as OSM 0.6 XML. Output is deterministic.
inline std::string write_osm(const RoadGraph& graph) {
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\" generator=\"mapval\">\n";
  char buf[160];
  for (const auto& [id, p] : graph.nodes) {
    std::snprintf(buf, sizeof buf, "  <node id=\"%lld\" lat=\"%.10f\" lon=\"%.10f\"/>\n",
                  static_cast<long long>(id), p.lat, p.lon);
    out += buf;
  }
  for (const auto& w : graph.ways) {
    out += "  <way id=\"" + std::to_string(w.id) + "\">\n";
    for (NodeId ref : w.node_refs) out += "    <nd ref=\"" + std::to_string(ref) + "\"/>\n";
    out += "    <tag k=\"highway\" v=\"" + detail::xml_escape(w.highway_class) + "\"/>\n";
    if (w.explicit_width)
      out += "    <tag k=\"width\" v=\"" + detail::format_number(*w.explicit_width) + "\"/>\n";
    if (w.lanes) out += "    <tag k=\"lanes\" v=\"" + std::to_string(*w.lanes) + "\"/>\n";
    out += "  </way>\n";
  }
  out += "</osm>\n";
  return out;
}

inline RoadGraph filter_drivable(const RoadGraph& graph, const std::set<std::string>& drivable_classes) {
  RoadGraph out;
  out.dropped_ways = graph.dropped_ways;
  for (const auto& w : graph.ways) {
    if (!drivable_classes.count(w.highway_class)) continue;
    for (NodeId ref : w.node_refs) out.nodes.emplace(ref, graph.nodes.at(ref));
    out.ways.push_back(w);
  }
  return out;
}

/// Width precedence: explicit tag, lane count, class default, `_link` base class default, fallback.
inline double way_width(const RoadWay& way, const WidthConfig& cfg) {
  if (way.explicit_width && *way.explicit_width > 0) return *way.explicit_width;
  std::string base = way.highway_class;
  if (base.size() > 5 && base.ends_with("_link")) base.resize(base.size() - 5);
  if (way.lanes) {
    double lane = cfg.default_lane_width;
    if (auto it = cfg.class_lane_widths.find(way.highway_class); it != cfg.class_lane_widths.end())
      lane = it->second;
    else if (auto jt = cfg.class_lane_widths.find(base); jt != cfg.class_lane_widths.end())
      lane = jt->second;
    return *way.lanes * lane;
  }
  if (auto it = cfg.class_widths.find(way.highway_class); it != cfg.class_widths.end()) return it->second;
  if (auto it = cfg.class_widths.find(base); it != cfg.class_widths.end()) return it->second;
  return cfg.fallback_width;
}

namespace detail {

// Liang-Barsky test of segment a-b against an axis-aligned box.
inline bool segment_hits_box(geo::LocalPoint a, geo::LocalPoint b, double min_e, double min_n,
                             double max_e, double max_n) {
  double t0 = 0.0, t1 = 1.0;
  const double de = b.east - a.east, dn = b.north - a.north;
  const double p[4] = {-de, de, -dn, dn};
  const double q[4] = {a.east - min_e, max_e - a.east, a.north - min_n, max_n - a.north};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double t = q[i] / p[i];
    if (p[i] < 0.0) t0 = std::max(t0, t);
    else t1 = std::min(t1, t);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace detail

/// Splits every way into per-segment elements in `frame`, dropping segments that miss `bbox`
/// (grown by half the road width). Zero-length segments are skipped.
inline std::vector<RoadElement> to_elements(const RoadGraph& graph, const geo::LocalFrame& frame,
                                            const geo::GeoBBox& bbox, const WidthConfig& cfg) {
  const auto lo = geo::detail::project(frame.origin, {bbox.min_lat, bbox.min_lon});
  const auto hi = geo::detail::project(frame.origin, {bbox.max_lat, bbox.max_lon});
  std::vector<RoadElement> out;
  for (const auto& w : graph.ways) {
    const double width = way_width(w, cfg);
    const double margin = width / 2.0;
    for (std::size_t i = 0; i + 1 < w.node_refs.size(); ++i) {
      const auto pa = geo::detail::project(frame.origin, graph.nodes.at(w.node_refs[i]));
      const auto pb = geo::detail::project(frame.origin, graph.nodes.at(w.node_refs[i + 1]));
      if (pa == pb) continue;
      if (!detail::segment_hits_box(pa, pb, lo.east - margin, lo.north - margin, hi.east + margin,
                                    hi.north + margin))
        continue;
      out.push_back({pa, pb, width, geo::heading_of(pb - pa), w.id});
    }
  }
  return out;
}

}  // namespace mapval::osm
