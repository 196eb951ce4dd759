#pragma once

#include <cstdint>
#include <string>

#include "hdgt/modulation.hpp"
#include "hdgt/scene.hpp"
#include "hdgt/transformer.hpp"
#include "hdgt/upsampler.hpp"

namespace hdgt {

// Full configuration of one tool invocation: scene generation, the two
// attention stacks, modulation, and upsampler training, plus file locations.
// Every field has a default; a config file only lists what it overrides.
struct RunConfig {
  std::uint64_t seed = 0;            // scene seed (CLI --seed overrides)
  std::string out_dir = "out";      // artifact directory (CLI --out overrides)
  std::string scene_dir;             // run/detect: load this scene; empty = generate inline
  std::string checkpoint_dir;        // learned upsampler params; empty = <out_dir>/upsampler_checkpoint
  bool gating = true;                // apply the second, key-gated pass
  std::string upsampler_mode = "bilinear";  // "bilinear" or "learned"

  SceneConfig scene;                 // scene.seed comes from `seed` above
  StackConfig stack;                 // carries its own init seed
  ModulationConfig modulation;       // empty bands/gate_layers = derived defaults

  struct TrainSection {
    TrainHyper hyper;                // steps, lr, batch, holdout_frac, seed
    std::size_t task_scenes = 16;    // scenes x n_views synthetic tasks
  } train;
};

// The defaults above, materialized (equivalent to parsing "{}").
RunConfig default_run_config();

// Parse a JSON config document. Missing fields keep their defaults; unknown
// keys at any level throw ConfigError naming the key. Field values are
// validated (scene and stack configs, alpha modes, band partitions).
RunConfig parse_run_config(const std::string& json_text);

// Load and parse a config file; a missing file throws MissingArtifactError.
RunConfig load_run_config(const std::string& path);

// The materialized configuration as a JSON document (alphabetical keys).
// parse_run_config(run_config_json(cfg)) round-trips exactly; this is also
// the config echo embedded in every report.
std::string run_config_json(const RunConfig& cfg);

}  // namespace hdgt
