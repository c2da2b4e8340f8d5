#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "mapval/app.hpp"

namespace {

using mapval::config::json;

struct Options {
  std::string config, map, manifest, camera, poses, out, policy, mask_space, dice_pred_max;
  std::optional<double> gt_fit_min;
  std::optional<int> jobs;
  bool no_rasters = false;
};

void add_run_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--map", o.map, "OSM XML map");
  cmd->add_option("--manifest", o.manifest, "JSON-lines scene manifest");
  cmd->add_option("--camera", o.camera, "camera calibration JSON");
  cmd->add_option("--mask-space", o.mask_space, "\"camera\" or \"bev\"");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--policy", o.policy, "label policy preset name or JSON file");
  cmd->add_option("--jobs", o.jobs, "worker threads");
  cmd->add_flag("--no-rasters", o.no_rasters, "skip the per-scene overlay rasters");
}

mapval::config::RunConfig build_config(const Options& o) {
  namespace fs = std::filesystem;
  mapval::config::RunConfig c = o.config.empty() ? mapval::config::RunConfig{} : mapval::config::load_config(o.config);
  json j = json::object();
  if (!o.map.empty()) j["map"] = o.map;
  if (!o.manifest.empty()) j["manifest"] = o.manifest;
  if (!o.camera.empty()) j["camera"] = o.camera;
  if (!o.poses.empty()) j["poses"] = o.poses;
  if (!o.mask_space.empty()) j["mask_space"] = o.mask_space;
  if (!o.out.empty()) j["out"] = o.out;
  if (o.jobs) j["jobs"] = *o.jobs;
  if (o.gt_fit_min) j["gt_fit_min"] = *o.gt_fit_min;
  if (o.no_rasters) j["write_rasters"] = false;
  if (!o.policy.empty()) {
    if (fs::exists(o.policy) && fs::is_regular_file(o.policy))
      j["policy"] = mapval::config::read_json_file(o.policy);
    else
      j["policy"] = o.policy;
  }
  if (!o.dice_pred_max.empty()) {
    char* end = nullptr;
    const double v = std::strtod(o.dice_pred_max.c_str(), &end);
    j["dice_pred_max"] = end && *end == '\0' ? json(v) : json(o.dice_pred_max);
  }
  // Command-line paths are relative to the working directory, not the config file.
  c = mapval::config::merge(std::move(c), j, fs::current_path());
  c.check();
  return c;
}

int fail(const std::string& message, int code) {
  std::cerr << json{{"error", message}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Validate road maps against semantic segmentation masks"};
  app.require_subcommand(1);

  Options vo, po;
  auto* validate = app.add_subcommand("validate", "score every scene of a manifest against the map");
  add_run_options(validate, vo);
  validate->add_option("--poses", vo.poses, "poses.jsonl from correct-pose to use instead of the manifest poses");
  validate->add_option("--dice-pred-max", vo.dice_pred_max, "flagging threshold: a number, \"q1\" or \"median\"");
  validate->add_option("--gt-fit-min", vo.gt_fit_min, "drop scenes whose ground truth fits the map worse than this");

  auto* correct = app.add_subcommand("correct-pose", "refine scene poses by searching road-aligned poses");
  add_run_options(correct, po);

  std::string spec_path, synth_out;
  std::optional<std::uint64_t> seed;
  auto* synth = app.add_subcommand("synth", "generate a synthetic map and scene bundle");
  synth->add_option("--spec", spec_path, "synthesis spec JSON");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", seed, "override the spec seed");

  std::string report_in, report_out;
  std::optional<double> report_threshold;
  auto* report = app.add_subcommand("report", "render tables and summaries from a validate report");
  report->add_option("--in", report_in, "report.json from validate")->required();
  report->add_option("--out", report_out, "output directory (default: next to the input)");
  report->add_option("--dice-pred-max", report_threshold, "re-flag with this threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(e.what(), mapval::app::kExitConfig);
  }

  try {
    if (*validate) return mapval::app::cmd_validate(build_config(vo));
    if (*correct) return mapval::app::cmd_correct_pose(build_config(po));
    if (*synth) {
      mapval::app::SynthSpec spec =
          spec_path.empty() ? mapval::app::SynthSpec{}
                            : mapval::app::synth_spec_from_json(mapval::config::read_json_file(spec_path));
      if (seed) spec.seed = *seed;
      return mapval::app::cmd_synth(spec, synth_out);
    }
    if (*report) {
      const std::filesystem::path in(report_in);
      const std::filesystem::path out = report_out.empty() ? in.parent_path() : std::filesystem::path(report_out);
      return mapval::app::cmd_report(in, out.empty() ? "." : out, report_threshold);
    }
  } catch (const mapval::ConfigError& e) {
    return fail(e.what(), mapval::app::kExitConfig);
  } catch (const std::exception& e) {
    return fail(e.what(), mapval::app::kExitConfig);
  }
  return mapval::app::kExitConfig;
}
