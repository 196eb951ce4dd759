#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hdgt/camera.hpp"
#include "hdgt/tensor.hpp"

namespace hdgt {

// Synthetic multi-view scene: a textured fronto-parallel plane plus a few
// axis-aligned boxes, ray-cast into N nearby cameras. Selected token cells
// ("singularities") are re-textured independently per view so their
// appearance is view-inconsistent while depth stays exact.
struct SceneConfig {
  std::size_t n_views = 4;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t patch = 8;                 // token granularity of the mask grid
  double singularity_fraction = 0.1;     // fraction of tokens re-textured
  double baseline_frac = 0.05;           // camera arc span / plane distance
  std::size_t box_count = 2;
};

struct SceneBundle {
  std::vector<Tensor> views;              // N x [H, W, 3] in [0, 1]
  std::vector<Tensor> depths;             // N x [H, W], camera-frame z > 0
  std::vector<Camera> cameras;            // N
  std::vector<Tensor> singularity_masks;  // N x [H/patch, W/patch] in {0, 1}
  std::uint64_t seed = 0;
  SceneConfig config;
};

// Throws ConfigError naming the offending field.
void validate_scene_config(const SceneConfig& cfg);

// Deterministic in (cfg, seed); bit-identical bundles for identical calls.
SceneBundle generate_scene(const SceneConfig& cfg, std::uint64_t seed);

// Re-render the same world layout (same seed => same plane texture, boxes,
// and singular regions) at a different image resolution; intrinsics scale
// with the resolution. The mask grid is rendered at height/patch tokens.
SceneBundle render_at_resolution(const SceneConfig& cfg, std::uint64_t seed,
                                 std::size_t height, std::size_t width);

// Directory layout: view_###.ppm, depth_###.hdt, camera_###.txt,
// gtmask_###.pgm, meta.json.
void save_scene(const std::string& dir, const SceneBundle& bundle);
SceneBundle load_scene(const std::string& dir);

}  // namespace hdgt
