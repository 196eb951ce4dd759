#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hdgt/tensor.hpp"

namespace hdgt {

// Default strength of the additive positional code relative to the unit-order
// patch embeddings. Kept well below the appearance scale so that cross-view
// similarity statistics are dominated by what the patches look like rather
// than by where they sit in the grid.
constexpr double kPositionAmplitude = 0.05;

// Geometry of the two attention stacks. The coarse stack attends globally
// over all views' tokens at low resolution; the refiner attends in
// non-overlapping windows within each view on the upsampled feature grid.
struct StackConfig {
  std::size_t depth_coarse = 6;
  std::size_t depth_refine = 2;
  std::size_t channels = 32;  // must be divisible by heads
  std::size_t heads = 4;
  std::size_t patch = 8;          // low-res patch size
  std::size_t refine_window = 16;  // tokens per refiner attention window
  std::size_t low_height = 32, low_width = 32;
  std::size_t high_height = 64, high_width = 64;
  std::size_t refine_patch = 4;  // refiner token grid is low_res / refine_patch
  std::uint64_t seed = 0;
  double pos_amplitude = kPositionAmplitude;

  std::size_t coarse_grid_h() const { return low_height / patch; }
  std::size_t coarse_grid_w() const { return low_width / patch; }
  std::size_t tokens_per_view() const { return coarse_grid_h() * coarse_grid_w(); }
  std::size_t upsample_factor() const { return high_height / low_height; }
  std::size_t refine_grid_h() const { return low_height / refine_patch; }
  std::size_t refine_grid_w() const { return low_width / refine_patch; }
  std::size_t refine_tokens_per_view() const { return refine_grid_h() * refine_grid_w(); }
};

void validate_stack_config(const StackConfig& cfg);

struct LayerParams {
  Tensor ln1_gain, ln1_bias;          // [c]
  Tensor wq, wk, wv, wo;              // [c, c]
  Tensor bq, bk, bv, bo;              // [c]
  Tensor ln2_gain, ln2_bias;          // [c]
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // [c, 4c], [4c], [4c, c], [c]
};

struct StackParams {
  Tensor patch_embed;                     // [patch*patch*3, c]
  std::vector<LayerParams> coarse;        // depth_coarse layers
  std::vector<LayerParams> refine;        // depth_refine layers
  Tensor pose_head_w, pose_head_b;        // [c, 7], [7]
  Tensor refine_pose_w, refine_pose_b;    // [c, 7], [7]
  Tensor depth_head_w, depth_head_b;      // [c, refine_patch^2], [refine_patch^2]
};

// Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases,
// unit layer-norm gains; deterministic in (cfg.seed).
StackParams init_stack_params(const StackConfig& cfg);

// Per-layer, per-view query/key token matrices recorded by the coarse stack.
struct QKTrace {
  std::vector<std::vector<Tensor>> q;  // [layer][view] -> [K, c]
  std::vector<std::vector<Tensor>> k;
};

// Exact multiply-add counts for the attention sites (QK^T, attention x V,
// and the four Q/K/V/O projections). The MLP is not part of the model.
struct FlopCount {
  std::uint64_t qk_flops = 0;
  std::uint64_t av_flops = 0;
  std::uint64_t proj_flops = 0;
  std::uint64_t total() const { return qk_flops + av_flops + proj_flops; }
  bool operator==(const FlopCount&) const = default;
  FlopCount& operator+=(const FlopCount& o) {
    qk_flops += o.qk_flops;
    av_flops += o.av_flops;
    proj_flops += o.proj_flops;
    return *this;
  }
};

// Analytic attention cost: global layers cost (N*K)^2*c for qk and av and
// 4*(N*K)*c^2 for projections; windowed layers replace (N*K)^2 with
// N*(K/window)*window^2. window = 0 means global.
FlopCount count_attention_flops(std::size_t n_views, std::size_t k_tokens,
                                std::size_t channels, std::size_t layers,
                                std::size_t window = 0);

// Zero the key rows of masked tokens in the listed (1-based) layers before
// logits are formed, so every logit toward a masked token is exactly 0.
struct KeyGate {
  std::vector<char> masked;           // one entry per token in stack order (N*K)
  std::vector<std::size_t> layers;    // 1-based layer indices to gate
};

// Captured attention internals (global layers only): scaled pre-softmax
// logits and post-softmax weights, per layer and head, each [T, T].
struct AttentionProbe {
  std::vector<std::vector<Tensor>> logits;
  std::vector<std::vector<Tensor>> weights;
};

// Fixed 2-D sinusoidal code over a gh x gw grid in normalized coordinates,
// so grids of different resolutions produce structurally compatible codes.
Tensor position_code(std::size_t grid_h, std::size_t grid_w, std::size_t channels,
                     double amplitude);

// Tokens = flattened patch rows x embed + positional code.
Tensor patchify(const Tensor& image, std::size_t patch, const Tensor& embed,
                double pos_amplitude = kPositionAmplitude);

// One pre-norm attention + MLP block over tokens [T, c]. window must divide
// T (window = 0 or T means global). Returns the transformed tokens; q_out /
// k_out receive the post-projection (and post-gate) Q and K when non-null.
Tensor attention_layer(const Tensor& tokens, const LayerParams& p, std::size_t heads,
                       std::size_t window, const std::vector<char>* key_gate,
                       FlopCount* meter, AttentionProbe* probe, Tensor* q_out,
                       Tensor* k_out);

struct CoarseResult {
  std::vector<Tensor> features;  // per view [grid_h, grid_w, c]
  std::vector<Tensor> poses;     // per view [7]: unit quaternion + translation
  QKTrace trace;
};

CoarseResult run_coarse(const std::vector<Tensor>& views, const StackParams& params,
                        const StackConfig& cfg, const KeyGate* gate = nullptr,
                        FlopCount* meter = nullptr, AttentionProbe* probe = nullptr);

struct RefineResult {
  std::vector<Tensor> depths;  // per view [high_height, high_width]
  std::vector<Tensor> poses;   // per view [7]
};

RefineResult run_refiner(const std::vector<Tensor>& features_hr, const StackParams& params,
                         const StackConfig& cfg, FlopCount* meter = nullptr);

// ---- checkpoint container ----------------------------------------------
// A directory holding one HDT1 file per named parameter plus manifest.json
// (parameter names -> shapes, and optional extra metadata).
using ParamStore = std::map<std::string, Tensor>;

void save_checkpoint(const std::string& dir, const ParamStore& store,
                     const std::map<std::string, std::vector<std::size_t>>& extras = {});
ParamStore load_checkpoint(const std::string& dir);
std::map<std::string, std::vector<std::size_t>> load_checkpoint_extras(const std::string& dir);

ParamStore stack_params_to_store(const StackParams& params);
StackParams stack_params_from_store(const ParamStore& store, const StackConfig& cfg);

}  // namespace hdgt
