#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hdgt/config.hpp"
#include "hdgt/modulation.hpp"
#include "hdgt/scene.hpp"
#include "hdgt/transformer.hpp"
#include "hdgt/upsampler.hpp"

namespace hdgt {

// Mean pooling of a [h, w] map by an integral factor (h, w divisible).
Tensor downsample_mean(const Tensor& img, std::size_t factor);

// The guidance conv strides implied by the config's resolution chain
// (high-res guidance grid down to the upsampled feature grid).
std::pair<std::size_t, std::size_t> config_guidance_strides(const StackConfig& cfg);

// Analytic multiply-add count of the five guidance/refinement/fusion
// convolutions for one view at the configured resolutions.
std::uint64_t count_upsampler_conv_flops(const StackConfig& cfg, std::size_t stride1,
                                         std::size_t stride2);

// One full branch pass: coarse stack -> feature upsampling -> refiner.
// learned = false uses plain bilinear interpolation of the coarse features;
// up may be null in that case.
struct PassOutput {
  CoarseResult coarse;
  std::vector<Tensor> features_hr;  // per view, refiner grid resolution
  RefineResult refine;
  FlopCount coarse_flops, refine_flops;
};
PassOutput run_pass(const std::vector<Tensor>& low_views, const std::vector<Tensor>& hr_views,
                    const StackParams& sp, const StackConfig& sc, bool learned,
                    const UpsamplerParams* up, const KeyGate* gate);

// Synthetic upsampler task set: train.task_scenes scenes x n_views tasks.
// Coarse features are the low-res patch embeddings, targets the high-res
// patch embeddings (same embedding matrix), guidance the high-res image.
std::vector<UpsampleTask> build_upsample_tasks(const RunConfig& cfg);

// Subcommand bodies. Each writes its artifacts under cfg.out_dir plus
// report.json / report.txt (generate's artifact is the scene directory
// itself), and returns the report document.
nlohmann::json cmd_generate(const RunConfig& cfg);
nlohmann::json cmd_run(const RunConfig& cfg);
nlohmann::json cmd_train_upsampler(const RunConfig& cfg);
nlohmann::json cmd_bench(const RunConfig& cfg, const std::string& grid_spec);
nlohmann::json cmd_detect(const RunConfig& cfg);

}  // namespace hdgt
