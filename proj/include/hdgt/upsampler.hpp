#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "hdgt/tensor.hpp"
#include "hdgt/transformer.hpp"

namespace hdgt {

// Shallow convolutional upsampler: a two-conv guidance branch over the
// high-resolution image, a one-conv refinement of the bilinearly
// interpolated coarse features, and a two-conv fusion of the pair.
struct UpsamplerParams {
  std::size_t channels = 32;
  // Strides of the two guidance convs; (1, 1) keeps the image resolution,
  // larger strides reduce the guidance grid to the feature resolution.
  std::size_t guidance_stride1 = 1;
  std::size_t guidance_stride2 = 1;
  Tensor g1_kernel, g1_bias;      // [3,3,3,16], [16]
  Tensor g2_kernel, g2_bias;      // [3,3,16,c], [c]
  Tensor feat_kernel, feat_bias;  // [3,3,c,c], [c]
  Tensor fuse1_kernel, fuse1_bias;  // [3,3,2c,c], [c]
  Tensor fuse2_kernel, fuse2_bias;  // [3,3,c,c], [c]
};

constexpr std::size_t kGuidanceHidden = 16;

UpsamplerParams init_upsampler_params(std::size_t channels, std::uint64_t seed,
                                      std::size_t guidance_stride1 = 1,
                                      std::size_t guidance_stride2 = 1);
void validate_upsampler_params(const UpsamplerParams& p);

// The ten trainable tensors in a fixed order (kernel, bias pairs).
std::vector<Tensor*> upsampler_param_list(UpsamplerParams& p);

// Finds conv strides (3x3 kernels, padding 1) that map in_extent to
// out_extent across the two guidance convs. Throws ConfigError if no pair
// of strides in [1, 8] achieves the reduction.
std::pair<std::size_t, std::size_t> choose_guidance_strides(std::size_t in_extent,
                                                            std::size_t out_extent);

// conv -> relu -> conv over the guidance image [H, W, 3].
Tensor guidance_features(const Tensor& i_hr, const UpsamplerParams& p);

// bilinear interpolation by s, then one conv -> relu refinement.
Tensor upsample_coarse(const Tensor& f_coarse, std::size_t s, const UpsamplerParams& p);

// channel-concatenate (guide first, interp second), then conv -> relu -> conv.
Tensor fuse(const Tensor& f_guide, const Tensor& f_interp, const UpsamplerParams& p);

// Full module: fuse(guidance_features(i_hr), upsample_coarse(f, s)) where the
// scale s is inferred from the guidance-grid / feature-grid shape ratio.
Tensor upsample(const Tensor& f_coarse, const Tensor& i_hr, const UpsamplerParams& p);

struct UpsampleTask {
  Tensor f_coarse;  // [h, w, c]
  Tensor guidance;  // [H, W, 3]
  Tensor target;    // [s*h, s*w, c]
};

struct TrainHyper {
  std::size_t steps = 2000;
  double lr = 1e-2;
  std::size_t batch = 4;
  double holdout_frac = 0.25;
  std::uint64_t seed = 0;
};

struct LossPoint {
  std::size_t step = 0;
  double train_loss = 0.0;
  double holdout_loss = 0.0;
};

struct TrainResult {
  UpsamplerParams params;
  std::vector<LossPoint> curve;  // initial entry plus one per 100 steps
  std::vector<std::size_t> train_indices, holdout_indices;
};

// Plain gradient descent on mean-squared reconstruction error, batched over
// a deterministic train/held-out split of the tasks. A non-finite loss
// raises NumericError naming the step.
TrainResult train_upsampler(const std::vector<UpsampleTask>& tasks, const TrainHyper& hyper,
                            const UpsamplerParams& initial);

// Mean MSE of the pure bilinear interpolation against the targets.
double baseline_mse(const std::vector<UpsampleTask>& tasks);

// Mean MSE of the trained module against the targets of the listed tasks.
double upsampler_mse(const std::vector<UpsampleTask>& tasks,
                     const std::vector<std::size_t>& indices, const UpsamplerParams& p);

ParamStore upsampler_params_to_store(const UpsamplerParams& p);
UpsamplerParams upsampler_params_from_store(const ParamStore& store, std::size_t channels,
                                            std::size_t guidance_stride1,
                                            std::size_t guidance_stride2);
void save_upsampler_checkpoint(const std::string& dir, const UpsamplerParams& p);
UpsamplerParams load_upsampler_checkpoint(const std::string& dir);

}  // namespace hdgt
