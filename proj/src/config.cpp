#include "hdgt/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "hdgt/errors.hpp"

namespace hdgt {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw ConfigError("config: " + where + ": " + what);
}

void reject_unknown(const json& obj, const std::string& where,
                    const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) bad(where, "unknown key \"" + it.key() + "\"");
  }
}

template <typename T>
void read_field(const json& obj, const std::string& where, const std::string& key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    bad(where + "." + key, e.what());
  }
}

AlphaMode parse_alpha(const json& obj, const std::string& where, AlphaMode fallback) {
  if (obj.is_null()) return fallback;
  if (!obj.is_object()) bad(where, "expected an object {kind, value}");
  reject_unknown(obj, where, {"kind", "value"});
  std::string kind = fallback.kind == AlphaMode::Kind::kFixed ? "fixed" : "quantile";
  double value = fallback.value;
  read_field(obj, where, "kind", kind);
  read_field(obj, where, "value", value);
  if (kind == "fixed") return AlphaMode::fixed(value);
  if (kind == "quantile") {
    if (!(value > 0.0 && value < 1.0)) bad(where + ".value", "quantile must lie in (0, 1)");
    return AlphaMode::quantile(value);
  }
  bad(where + ".kind", "expected \"fixed\" or \"quantile\", got \"" + kind + "\"");
}

json alpha_json(const AlphaMode& mode) {
  return {{"kind", mode.kind == AlphaMode::Kind::kFixed ? "fixed" : "quantile"},
          {"value", mode.value}};
}

void parse_bands(const json& obj, const std::string& where, BandPartition& bands) {
  if (obj.is_null()) return;
  if (!obj.is_object()) bad(where, "expected an object {shallow, middle, deep}");
  reject_unknown(obj, where, {"shallow", "middle", "deep"});
  read_field(obj, where, "shallow", bands.shallow);
  read_field(obj, where, "middle", bands.middle);
  read_field(obj, where, "deep", bands.deep);
}

}  // namespace

RunConfig default_run_config() {
  RunConfig cfg;
  // Training default tuned for the synthetic task set; TrainHyper's own
  // default is conservative for unit-scale toy problems.
  cfg.train.hyper.lr = 0.1;
  return cfg;
}

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");

  RunConfig cfg = default_run_config();
  reject_unknown(doc, "top level",
                 {"seed", "out_dir", "scene_dir", "checkpoint_dir", "gating", "upsampler",
                  "scene", "stack", "modulation", "train"});
  read_field(doc, "top level", "seed", cfg.seed);
  read_field(doc, "top level", "out_dir", cfg.out_dir);
  read_field(doc, "top level", "scene_dir", cfg.scene_dir);
  read_field(doc, "top level", "checkpoint_dir", cfg.checkpoint_dir);
  read_field(doc, "top level", "gating", cfg.gating);
  read_field(doc, "top level", "upsampler", cfg.upsampler_mode);
  if (cfg.upsampler_mode != "bilinear" && cfg.upsampler_mode != "learned")
    bad("upsampler", "expected \"bilinear\" or \"learned\", got \"" + cfg.upsampler_mode + "\"");

  if (doc.contains("scene")) {
    const json& s = doc["scene"];
    if (!s.is_object()) bad("scene", "expected an object");
    reject_unknown(s, "scene",
                   {"n_views", "height", "width", "patch", "singularity_fraction",
                    "baseline_frac", "box_count"});
    read_field(s, "scene", "n_views", cfg.scene.n_views);
    read_field(s, "scene", "height", cfg.scene.height);
    read_field(s, "scene", "width", cfg.scene.width);
    read_field(s, "scene", "patch", cfg.scene.patch);
    read_field(s, "scene", "singularity_fraction", cfg.scene.singularity_fraction);
    read_field(s, "scene", "baseline_frac", cfg.scene.baseline_frac);
    read_field(s, "scene", "box_count", cfg.scene.box_count);
  }

  if (doc.contains("stack")) {
    const json& s = doc["stack"];
    if (!s.is_object()) bad("stack", "expected an object");
    reject_unknown(s, "stack",
                   {"depth_coarse", "depth_refine", "channels", "heads", "patch",
                    "refine_window", "low_height", "low_width", "high_height", "high_width",
                    "refine_patch", "seed", "pos_amplitude"});
    read_field(s, "stack", "depth_coarse", cfg.stack.depth_coarse);
    read_field(s, "stack", "depth_refine", cfg.stack.depth_refine);
    read_field(s, "stack", "channels", cfg.stack.channels);
    read_field(s, "stack", "heads", cfg.stack.heads);
    read_field(s, "stack", "patch", cfg.stack.patch);
    read_field(s, "stack", "refine_window", cfg.stack.refine_window);
    read_field(s, "stack", "low_height", cfg.stack.low_height);
    read_field(s, "stack", "low_width", cfg.stack.low_width);
    read_field(s, "stack", "high_height", cfg.stack.high_height);
    read_field(s, "stack", "high_width", cfg.stack.high_width);
    read_field(s, "stack", "refine_patch", cfg.stack.refine_patch);
    read_field(s, "stack", "seed", cfg.stack.seed);
    read_field(s, "stack", "pos_amplitude", cfg.stack.pos_amplitude);
  }

  if (doc.contains("modulation")) {
    const json& m = doc["modulation"];
    if (!m.is_object()) bad("modulation", "expected an object");
    reject_unknown(m, "modulation",
                   {"window_radius", "lambda", "alpha", "refine_threshold", "bands",
                    "gate_layers"});
    read_field(m, "modulation", "window_radius", cfg.modulation.window_radius);
    read_field(m, "modulation", "lambda", cfg.modulation.lambda);
    if (m.contains("alpha"))
      cfg.modulation.alpha = parse_alpha(m["alpha"], "modulation.alpha", cfg.modulation.alpha);
    if (m.contains("refine_threshold"))
      cfg.modulation.refine_threshold = parse_alpha(m["refine_threshold"],
                                                    "modulation.refine_threshold",
                                                    cfg.modulation.refine_threshold);
    if (m.contains("bands")) parse_bands(m["bands"], "modulation.bands", cfg.modulation.bands);
    read_field(m, "modulation", "gate_layers", cfg.modulation.gate_layers);
    if (cfg.modulation.window_radius < 1) bad("modulation.window_radius", "must be >= 1");
    if (cfg.modulation.lambda < 0.0) bad("modulation.lambda", "must be >= 0");
  }

  if (doc.contains("train")) {
    const json& t = doc["train"];
    if (!t.is_object()) bad("train", "expected an object");
    reject_unknown(t, "train", {"steps", "lr", "batch", "holdout_frac", "seed", "task_scenes"});
    read_field(t, "train", "steps", cfg.train.hyper.steps);
    read_field(t, "train", "lr", cfg.train.hyper.lr);
    read_field(t, "train", "batch", cfg.train.hyper.batch);
    read_field(t, "train", "holdout_frac", cfg.train.hyper.holdout_frac);
    read_field(t, "train", "seed", cfg.train.hyper.seed);
    read_field(t, "train", "task_scenes", cfg.train.task_scenes);
    if (cfg.train.hyper.batch < 1) bad("train.batch", "must be >= 1");
    if (!(cfg.train.hyper.holdout_frac >= 0.0 && cfg.train.hyper.holdout_frac < 1.0))
      bad("train.holdout_frac", "must lie in [0, 1)");
    if (cfg.train.task_scenes < 1) bad("train.task_scenes", "must be >= 1");
  }

  validate_scene_config(cfg.scene);
  validate_stack_config(cfg.stack);
  const bool any_band = !cfg.modulation.bands.shallow.empty() ||
                        !cfg.modulation.bands.middle.empty() ||
                        !cfg.modulation.bands.deep.empty();
  if (any_band) validate_bands(cfg.modulation.bands, cfg.stack.depth_coarse);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("config file not found: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& cfg) {
  json doc;
  doc["seed"] = cfg.seed;
  doc["out_dir"] = cfg.out_dir;
  doc["scene_dir"] = cfg.scene_dir;
  doc["checkpoint_dir"] = cfg.checkpoint_dir;
  doc["gating"] = cfg.gating;
  doc["upsampler"] = cfg.upsampler_mode;
  doc["scene"] = {{"n_views", cfg.scene.n_views},
                  {"height", cfg.scene.height},
                  {"width", cfg.scene.width},
                  {"patch", cfg.scene.patch},
                  {"singularity_fraction", cfg.scene.singularity_fraction},
                  {"baseline_frac", cfg.scene.baseline_frac},
                  {"box_count", cfg.scene.box_count}};
  doc["stack"] = {{"depth_coarse", cfg.stack.depth_coarse},
                  {"depth_refine", cfg.stack.depth_refine},
                  {"channels", cfg.stack.channels},
                  {"heads", cfg.stack.heads},
                  {"patch", cfg.stack.patch},
                  {"refine_window", cfg.stack.refine_window},
                  {"low_height", cfg.stack.low_height},
                  {"low_width", cfg.stack.low_width},
                  {"high_height", cfg.stack.high_height},
                  {"high_width", cfg.stack.high_width},
                  {"refine_patch", cfg.stack.refine_patch},
                  {"seed", cfg.stack.seed},
                  {"pos_amplitude", cfg.stack.pos_amplitude}};
  doc["modulation"] = {{"window_radius", cfg.modulation.window_radius},
                       {"lambda", cfg.modulation.lambda},
                       {"alpha", alpha_json(cfg.modulation.alpha)},
                       {"refine_threshold", alpha_json(cfg.modulation.refine_threshold)},
                       {"bands",
                        {{"shallow", cfg.modulation.bands.shallow},
                         {"middle", cfg.modulation.bands.middle},
                         {"deep", cfg.modulation.bands.deep}}},
                       {"gate_layers", cfg.modulation.gate_layers}};
  doc["train"] = {{"steps", cfg.train.hyper.steps},
                  {"lr", cfg.train.hyper.lr},
                  {"batch", cfg.train.hyper.batch},
                  {"holdout_frac", cfg.train.hyper.holdout_frac},
                  {"seed", cfg.train.hyper.seed},
                  {"task_scenes", cfg.train.task_scenes}};
  return doc.dump(2) + "\n";
}

}  // namespace hdgt
