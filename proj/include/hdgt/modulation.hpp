#pragma once

#include <cstddef>
#include <vector>

#include "hdgt/scene.hpp"
#include "hdgt/tensor.hpp"
#include "hdgt/transformer.hpp"

namespace hdgt {

// ---------------------------------------------------------------------------
// Cross-view Gramian statistics and the training-free anomaly saliency
// pipeline built on them: windowed first/second moments of token-similarity
// matrices, three frequency-band priors, fused per-token saliency, projection
// -gradient mask refinement, and construction of the shallow-layer key gate.
// ---------------------------------------------------------------------------

enum class GramianKind { QQ, KK, QK };

// Token-similarity matrix between two views. Rows of both operands are
// L2-normalized first (zero rows stay zero), the scaled product a_hat *
// b_hat^T / sqrt(c) is formed, and entries are affinely mapped from
// [-1/sqrt(c), 1/sqrt(c)] onto [0, 1]; 0.5 is the zero-similarity midpoint.
struct Gramian {
  Tensor matrix;  // [K, K] in [0, 1]
  GramianKind kind = GramianKind::QQ;
  std::size_t layer = 0;  // 1-based; 0 = unset
  std::size_t view_t = 0, view_s = 0;
};

// Throws ShapeError unless a and b are [K, c] with matching K and c.
Gramian gramian(const Tensor& a, const Tensor& b, GramianKind kind);

// Three disjoint, individually non-empty sets of 1-based layer indices that
// jointly cover [1, depth].
struct BandPartition {
  std::vector<std::size_t> shallow, middle, deep;
};

// Contiguous split into thirds; the remainder goes to the deeper bands
// (depth 6 -> {1,2} / {3,4} / {5,6}). Requires depth >= 3.
BandPartition default_bands(std::size_t depth);

// Throws ConfigError naming the defect (empty band, duplicate, gap, index
// out of [1, depth]).
void validate_bands(const BandPartition& bands, std::size_t depth);

// Windowed moments of the per-band layer-mean Gramians of view t against the
// neighbouring views W(t) = {t-r .. t+r} \ {t}, clamped to the sequence.
// s_* is the window mean, v_* the population variance (raw, >= 0, not yet
// normalized). Exactly the four (kind, band) pairs the priors consume are
// materialized, each with both moments.
struct GramianStats {
  Tensor s_kk_shallow, v_kk_shallow;  // [K, K]
  Tensor s_qk_shallow, v_qk_shallow;
  Tensor s_qq_middle, v_qq_middle;
  Tensor s_qq_deep, v_qq_deep;
  std::size_t view = 0;
  std::size_t window_radius = 0;
};

// The QK Gramian pairs view t's queries with view s's keys; QQ and KK pair
// like with like. Throws ConfigError for window_radius < 1, an empty window
// (single-view trace), t out of range, or an invalid band partition.
GramianStats temporal_stats(const QKTrace& trace, std::size_t t,
                            std::size_t window_radius,
                            const BandPartition& bands);

// (x - min) / (max - min) over all entries; a span below `tiny` yields all
// zeros. Output entries lie in [0, 1] exactly.
Tensor min_max_normalize(const Tensor& x, double tiny = 1e-12);

// High-frequency appearance prior: (1 - S^KK) * V^QK elementwise. The
// volatility operand must already be min-max normalized to [0, 1].
Tensor prior_shallow(const Tensor& s_kk, const Tensor& v_qk_normalized);

// Mid-frequency instability prior: 1 - S^QQ elementwise.
Tensor prior_middle(const Tensor& s_qq);

// Low-frequency consistency prior: (1 - V^QQ) * S^QQ elementwise. The
// volatility operand must already be min-max normalized to [0, 1].
Tensor prior_deep(const Tensor& v_qq_normalized, const Tensor& s_qq);

// Elementwise product of the three priors, reduced to one score per token by
// row mean, then min-max normalized over the K tokens to [0, 1]. A constant
// product (degenerate min-max) yields all zeros and sets *degenerate.
Tensor fuse_saliency(const Tensor& w_shallow, const Tensor& w_middle,
                     const Tensor& w_deep, bool* degenerate = nullptr);

// Full per-view prior pipeline over a coarse-stack trace.
struct SaliencyResult {
  Tensor saliency;              // [N, K] in [0, 1]
  std::vector<char> degenerate;  // per view: constant fused product
};
SaliencyResult anomaly_saliency(const QKTrace& trace, std::size_t window_radius,
                                const BandPartition& bands);

// Threshold selector for masks: either a fixed cut (mask = value > alpha,
// any real alpha) or a per-view quantile q in (0, 1). Quantile mode masks
// exactly ceil((1-q) * n) of n candidates when values are distinct: the
// threshold is the order statistic below the top ceil((1-q)*n) values and
// the comparison is strictly greater, so ties at the threshold stay unmasked.
struct AlphaMode {
  enum class Kind { kFixed, kQuantile };
  Kind kind = Kind::kQuantile;
  double value = 0.9;

  static AlphaMode fixed(double alpha) { return {Kind::kFixed, alpha}; }
  static AlphaMode quantile(double q) { return {Kind::kQuantile, q}; }
};

struct MaskResult {
  Tensor mask;                     // [N, K] in {0, 1}
  std::vector<double> thresholds;  // per view; the cut actually applied
};

// Thresholds saliency [N, K] per view. Throws ConfigError for a quantile
// outside (0, 1), ShapeError for a non-matrix input.
MaskResult initial_mask(const Tensor& saliency,
                        const AlphaMode& mode = AlphaMode::quantile(0.9));

// Aggregated projection-gradient distortion per token, [N, K]. For every
// pixel p of view t and every other view i, the predicted depths induce
// reprojection residuals r_d (depth) and r_c (photometric); the pixel
// accumulates |w_p * r_d(p)| * ||grad r_d(p)|| + lambda * |w_p * r_c(p)|,
// averaged over the N-1 other views, where grad is the central-difference
// spatial gradient of the r_d field (one-sided at image borders) and w_p is
// the per-pixel stability weight: stability[t, token(p)], the complement of
// the initial anomaly mask. Invalid reprojections contribute zero. Token
// distortion is the mean over the token's patch footprint. A single-view
// scene has no other views and yields all zeros.
// Throws ShapeError on size mismatches, ConfigError for lambda < 0.
Tensor aggregated_gradient(const SceneBundle& scene,
                           const std::vector<Tensor>& predicted_depths,
                           const Tensor& stability, double lambda = 0.5);

struct RefinedMask {
  Tensor mask;                     // [N, K] in {0, 1}
  std::vector<double> thresholds;  // per view; +inf where nothing was admitted
  bool all_masked_warning = false;  // some view had no stable tokens
};

// Grows the initial mask by the initially-stable tokens whose distortion
// exceeds the threshold (quantile mode evaluates the quantile per view over
// the stable tokens only), so refined >= initial elementwise. A view with no
// stable tokens keeps its row and raises the warning flag. With subtract =
// true the semantics invert (experimental): initially-masked tokens whose
// distortion does not exceed the threshold taken over the masked tokens are
// released, and nothing is added; the monotone guarantee does not apply.
RefinedMask refine_mask(const Tensor& initial, const Tensor& distortion,
                        const AlphaMode& mode = AlphaMode::quantile(0.9),
                        bool subtract = false);

// Key gate for the coarse stack: token p is gated iff mask[p] != 0, applied
// at the given 1-based layers (normally the shallow band). Range checking
// happens inside the forward pass, which knows the stack depth.
KeyGate make_key_gate(const Tensor& mask, const std::vector<std::size_t>& layers);

// Rank-based ROC-AUC (Mann-Whitney, ties averaged) of scores against a
// binary ground truth of the same shape. Throws NumericError when the ground
// truth holds a single class, ConfigError for non-binary ground truth.
double detection_score(const Tensor& scores, const Tensor& gt);

// ---------------------------------------------------------------------------
// One-call driver used by the pipeline's second pass.
// ---------------------------------------------------------------------------

struct ModulationConfig {
  std::size_t window_radius = 2;
  BandPartition bands;  // empty -> default_bands(trace depth)
  AlphaMode alpha = AlphaMode::quantile(0.9);
  AlphaMode refine_threshold = AlphaMode::quantile(0.9);
  double lambda = 0.5;
  std::vector<std::size_t> gate_layers;  // empty -> the shallow band
};

struct AnomalyResult {
  Tensor saliency;    // [N, K]
  Tensor initial;     // [N, K] binary
  Tensor refined;     // [N, K] binary
  Tensor distortion;  // [N, K]
  std::vector<double> initial_thresholds, refine_thresholds;
  std::vector<char> degenerate;  // per-view constant-saliency flags
  bool all_masked_warning = false;
  std::vector<std::size_t> gate_layers;  // the layers the gate will touch
};

// saliency -> initial mask -> aggregated gradient (stability = complement of
// the initial mask) -> refined mask. predicted_depths must be at the scene's
// resolution, one map per view.
AnomalyResult run_modulation(const QKTrace& trace, const SceneBundle& scene,
                             const std::vector<Tensor>& predicted_depths,
                             const ModulationConfig& cfg);

}  // namespace hdgt
