#include "hdgt/modulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "hdgt/camera.hpp"
#include "hdgt/errors.hpp"

namespace hdgt {

namespace {

void check_matrix_pair(const Tensor& a, const Tensor& b, const char* who) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError(std::string(who) + ": operands must be rank-2, got " +
                     shape_str(a.shape) + " and " + shape_str(b.shape));
  if (a.shape != b.shape)
    throw ShapeError(std::string(who) + ": operand shapes differ, " +
                     shape_str(a.shape) + " vs " + shape_str(b.shape));
}

// Rows scaled to unit L2 norm; all-zero rows stay zero.
std::vector<double> normalized_rows(const Tensor& x) {
  const std::size_t rows = x.shape[0], cols = x.shape[1];
  std::vector<double> out(x.data);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += out[r * cols + c] * out[r * cols + c];
    const double norm = std::sqrt(sq);
    if (norm > 0.0)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= norm;
  }
  return out;
}

Tensor band_mean_gramian(const QKTrace& trace, GramianKind kind,
                         const std::vector<std::size_t>& band, std::size_t t,
                         std::size_t s) {
  Tensor acc;
  for (std::size_t layer : band) {
    const std::size_t l = layer - 1;  // 1-based band index into 0-based trace
    const Tensor& lhs = (kind == GramianKind::KK) ? trace.k[l][t] : trace.q[l][t];
    const Tensor& rhs = (kind == GramianKind::QQ) ? trace.q[l][s] : trace.k[l][s];
    Tensor g = gramian(lhs, rhs, kind).matrix;
    if (acc.size() == 0) {
      acc = std::move(g);
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += g.data[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(band.size());
  for (double& v : acc.data) v *= inv;
  return acc;
}

// Window mean and population variance of a stack of equal-shaped matrices.
// The variance runs on deviations from the first sample, which keeps a
// constant stack at exactly zero variance (no summation round-off can
// reintroduce a phantom spread).
void window_moments(const std::vector<Tensor>& samples, Tensor& s_out,
                    Tensor& v_out) {
  const std::size_t n = samples.size();
  const std::size_t sz = samples[0].size();
  s_out = zeros_like(samples[0]);
  v_out = zeros_like(samples[0]);
  for (std::size_t i = 0; i < sz; ++i) {
    double sum = 0.0;
    for (const Tensor& m : samples) sum += m.data[i];
    s_out.data[i] = sum / static_cast<double>(n);

    const double base = samples[0].data[i];
    double dev_sum = 0.0;
    for (const Tensor& m : samples) dev_sum += m.data[i] - base;
    const double dev_mean = dev_sum / static_cast<double>(n);
    double var = 0.0;
    for (const Tensor& m : samples) {
      const double d = (m.data[i] - base) - dev_mean;
      var += d * d;
    }
    v_out.data[i] = var / static_cast<double>(n);
  }
}

std::vector<std::size_t> window_views(std::size_t t, std::size_t radius,
                                      std::size_t n) {
  std::vector<std::size_t> out;
  const std::size_t lo = (t >= radius) ? t - radius : 0;
  const std::size_t hi = std::min(n - 1, t + radius);
  for (std::size_t s = lo; s <= hi; ++s)
    if (s != t) out.push_back(s);
  return out;
}

void check_token_grid(const Tensor& m, std::size_t n_views, std::size_t k,
                      const char* who) {
  if (m.rank() != 2 || m.shape[0] != n_views || m.shape[1] != k)
    throw ShapeError(std::string(who) + ": expected [" + std::to_string(n_views) +
                     ", " + std::to_string(k) + "], got " + shape_str(m.shape));
}

void check_binary(const Tensor& m, const char* who) {
  for (double v : m.data)
    if (v != 0.0 && v != 1.0)
      throw ConfigError(std::string(who) + ": mask entries must be 0 or 1");
}

// Number of candidates a per-view quantile cut admits: the top
// ceil((1-q) * n) values under strict comparison.
std::size_t quantile_count(double q, std::size_t n) {
  const double raw = (1.0 - q) * static_cast<double>(n);
  const auto m = static_cast<std::size_t>(std::ceil(raw));
  return std::min(m, n);
}

// Threshold so that exactly `take` of the (distinct) values exceed it;
// -infinity when everything is admitted.
double order_statistic_cut(std::vector<double> values, std::size_t take) {
  if (take >= values.size()) return -std::numeric_limits<double>::infinity();
  std::sort(values.begin(), values.end());
  return values[values.size() - take - 1];
}

// d/dcol and d/drow of a [h, w] field: central differences inside, one-sided
// at the borders.
void spatial_gradient(const Tensor& f, Tensor& gx, Tensor& gy) {
  const std::size_t h = f.shape[0], w = f.shape[1];
  gx = zeros_like(f);
  gy = zeros_like(f);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (w >= 2) {
        if (c == 0)
          gx(r, c) = f(r, 1) - f(r, 0);
        else if (c == w - 1)
          gx(r, c) = f(r, w - 1) - f(r, w - 2);
        else
          gx(r, c) = 0.5 * (f(r, c + 1) - f(r, c - 1));
      }
      if (h >= 2) {
        if (r == 0)
          gy(r, c) = f(1, c) - f(0, c);
        else if (r == h - 1)
          gy(r, c) = f(h - 1, c) - f(h - 2, c);
        else
          gy(r, c) = 0.5 * (f(r + 1, c) - f(r - 1, c));
      }
    }
  }
}

}  // namespace

Gramian gramian(const Tensor& a, const Tensor& b, GramianKind kind) {
  check_matrix_pair(a, b, "gramian");
  const std::size_t k = a.shape[0], c = a.shape[1];
  const std::vector<double> an = normalized_rows(a);
  const std::vector<double> bn = normalized_rows(b);

  Gramian g;
  g.kind = kind;
  g.matrix = Tensor({k, k});
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double cos = 0.0;
      for (std::size_t d = 0; d < c; ++d) cos += an[i * c + d] * bn[j * c + d];
      // The affine map of a * b^T / sqrt(c) from [-1/sqrt(c), 1/sqrt(c)] onto
      // [0, 1] collapses to (cos + 1) / 2; clamp absorbs dot-product round-off
      // so entries never leave the interval.
      cos = std::clamp(cos, -1.0, 1.0);
      g.matrix(i, j) = 0.5 * (cos + 1.0);
    }
  }
  return g;
}

BandPartition default_bands(std::size_t depth) {
  if (depth < 3)
    throw ConfigError("band partition: depth " + std::to_string(depth) +
                      " cannot be split into three non-empty bands");
  const std::size_t base = depth / 3, rem = depth % 3;
  const std::size_t n_shallow = base;
  const std::size_t n_middle = base + (rem > 1 ? 1 : 0);
  BandPartition b;
  std::size_t next = 1;
  for (std::size_t i = 0; i < n_shallow; ++i) b.shallow.push_back(next++);
  for (std::size_t i = 0; i < n_middle; ++i) b.middle.push_back(next++);
  while (next <= depth) b.deep.push_back(next++);
  return b;
}

void validate_bands(const BandPartition& bands, std::size_t depth) {
  if (bands.shallow.empty() || bands.middle.empty() || bands.deep.empty())
    throw ConfigError("band partition: every band must hold at least one layer");
  std::vector<std::size_t> all;
  for (const auto* band : {&bands.shallow, &bands.middle, &bands.deep})
    all.insert(all.end(), band->begin(), band->end());
  std::sort(all.begin(), all.end());
  if (all.size() != depth)
    throw ConfigError("band partition: " + std::to_string(all.size()) +
                      " layer indices for depth " + std::to_string(depth));
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i] != i + 1)
      throw ConfigError(
          "band partition: layer indices must cover 1.." + std::to_string(depth) +
          " exactly once (saw " + std::to_string(all[i]) + " at position " +
          std::to_string(i + 1) + ")");
  }
}

GramianStats temporal_stats(const QKTrace& trace, std::size_t t,
                            std::size_t window_radius,
                            const BandPartition& bands) {
  if (window_radius < 1)
    throw ConfigError("temporal stats: window radius must be >= 1");
  const std::size_t layers = trace.q.size();
  if (layers == 0 || trace.k.size() != layers)
    throw ConfigError("temporal stats: trace has mismatched query/key layers");
  const std::size_t n = trace.q[0].size();
  if (t >= n)
    throw ConfigError("temporal stats: view " + std::to_string(t) +
                      " out of range for " + std::to_string(n) + " views");
  validate_bands(bands, layers);

  const std::vector<std::size_t> window = window_views(t, window_radius, n);
  if (window.empty())
    throw ConfigError("temporal stats: empty window — at least two views needed");

  GramianStats stats;
  stats.view = t;
  stats.window_radius = window_radius;

  struct Slot {
    GramianKind kind;
    const std::vector<std::size_t>* band;
    Tensor* s;
    Tensor* v;
  };
  const Slot slots[] = {
      {GramianKind::KK, &bands.shallow, &stats.s_kk_shallow, &stats.v_kk_shallow},
      {GramianKind::QK, &bands.shallow, &stats.s_qk_shallow, &stats.v_qk_shallow},
      {GramianKind::QQ, &bands.middle, &stats.s_qq_middle, &stats.v_qq_middle},
      {GramianKind::QQ, &bands.deep, &stats.s_qq_deep, &stats.v_qq_deep},
  };
  for (const Slot& slot : slots) {
    std::vector<Tensor> samples;
    samples.reserve(window.size());
    for (std::size_t s : window)
      samples.push_back(band_mean_gramian(trace, slot.kind, *slot.band, t, s));
    window_moments(samples, *slot.s, *slot.v);
  }
  return stats;
}

Tensor min_max_normalize(const Tensor& x, double tiny) {
  if (x.size() == 0) return x;
  const auto [lo_it, hi_it] = std::minmax_element(x.data.begin(), x.data.end());
  const double lo = *lo_it, span = *hi_it - lo;
  Tensor out = zeros_like(x);
  if (span <= tiny) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = (x.data[i] - lo) / span;
  return out;
}

Tensor prior_shallow(const Tensor& s_kk, const Tensor& v_qk_normalized) {
  check_matrix_pair(s_kk, v_qk_normalized, "shallow prior");
  Tensor out = zeros_like(s_kk);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = (1.0 - s_kk.data[i]) * v_qk_normalized.data[i];
  return out;
}

Tensor prior_middle(const Tensor& s_qq) {
  Tensor out = zeros_like(s_qq);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = 1.0 - s_qq.data[i];
  return out;
}

Tensor prior_deep(const Tensor& v_qq_normalized, const Tensor& s_qq) {
  check_matrix_pair(v_qq_normalized, s_qq, "deep prior");
  Tensor out = zeros_like(s_qq);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = (1.0 - v_qq_normalized.data[i]) * s_qq.data[i];
  return out;
}

Tensor fuse_saliency(const Tensor& w_shallow, const Tensor& w_middle,
                     const Tensor& w_deep, bool* degenerate) {
  check_matrix_pair(w_shallow, w_middle, "fused saliency");
  check_matrix_pair(w_shallow, w_deep, "fused saliency");
  const std::size_t k = w_shallow.shape[0], cols = w_shallow.shape[1];
  Tensor row_mean({k});
  for (std::size_t i = 0; i < k; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t at = i * cols + j;
      sum += w_shallow.data[at] * w_middle.data[at] * w_deep.data[at];
    }
    row_mean(i) = sum / static_cast<double>(cols);
  }
  const auto [lo_it, hi_it] =
      std::minmax_element(row_mean.data.begin(), row_mean.data.end());
  const bool flat = (*hi_it - *lo_it) <= 1e-12;
  if (degenerate) *degenerate = flat;
  if (flat) return Tensor({k});
  return min_max_normalize(row_mean);
}

SaliencyResult anomaly_saliency(const QKTrace& trace, std::size_t window_radius,
                                const BandPartition& bands) {
  const std::size_t n = trace.q.empty() ? 0 : trace.q[0].size();
  if (n == 0) throw ConfigError("anomaly saliency: empty trace");
  const std::size_t k = trace.q[0][0].shape[0];

  SaliencyResult out;
  out.saliency = Tensor({n, k});
  out.degenerate.assign(n, 0);
  for (std::size_t t = 0; t < n; ++t) {
    const GramianStats st = temporal_stats(trace, t, window_radius, bands);
    const Tensor w_s =
        prior_shallow(st.s_kk_shallow, min_max_normalize(st.v_qk_shallow));
    const Tensor w_m = prior_middle(st.s_qq_middle);
    const Tensor w_d =
        prior_deep(min_max_normalize(st.v_qq_deep), st.s_qq_deep);
    bool flat = false;
    const Tensor row = fuse_saliency(w_s, w_m, w_d, &flat);
    out.degenerate[t] = flat ? 1 : 0;
    for (std::size_t i = 0; i < k; ++i) out.saliency(t, i) = row(i);
  }
  return out;
}

MaskResult initial_mask(const Tensor& saliency, const AlphaMode& mode) {
  if (saliency.rank() != 2)
    throw ShapeError("initial mask: saliency must be [views, tokens], got " +
                     shape_str(saliency.shape));
  if (mode.kind == AlphaMode::Kind::kQuantile &&
      (mode.value <= 0.0 || mode.value >= 1.0))
    throw ConfigError("initial mask: quantile must lie strictly inside (0, 1)");

  const std::size_t n = saliency.shape[0], k = saliency.shape[1];
  MaskResult out;
  out.mask = Tensor({n, k});
  out.thresholds.assign(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double cut = mode.value;
    if (mode.kind == AlphaMode::Kind::kQuantile) {
      std::vector<double> row(k);
      for (std::size_t i = 0; i < k; ++i) row[i] = saliency(t, i);
      cut = order_statistic_cut(std::move(row), quantile_count(mode.value, k));
    }
    out.thresholds[t] = cut;
    for (std::size_t i = 0; i < k; ++i)
      out.mask(t, i) = (saliency(t, i) > cut) ? 1.0 : 0.0;
  }
  return out;
}

Tensor aggregated_gradient(const SceneBundle& scene,
                           const std::vector<Tensor>& predicted_depths,
                           const Tensor& stability, double lambda) {
  if (lambda < 0.0)
    throw ConfigError("aggregated gradient: lambda must be >= 0");
  const std::size_t n = scene.views.size();
  if (n == 0) throw ShapeError("aggregated gradient: scene has no views");
  if (predicted_depths.size() != n)
    throw ShapeError("aggregated gradient: " +
                     std::to_string(predicted_depths.size()) + " depth maps for " +
                     std::to_string(n) + " views");
  const std::size_t h = scene.views[0].shape[0], w = scene.views[0].shape[1];
  for (const Tensor& d : predicted_depths)
    if (d.rank() != 2 || d.shape[0] != h || d.shape[1] != w)
      throw ShapeError("aggregated gradient: depth map " + shape_str(d.shape) +
                       " does not match the " + std::to_string(h) + "x" +
                       std::to_string(w) + " views");
  const std::size_t patch = scene.config.patch;
  if (patch == 0 || h % patch != 0 || w % patch != 0)
    throw ShapeError("aggregated gradient: patch " + std::to_string(patch) +
                     " does not tile " + std::to_string(h) + "x" + std::to_string(w));
  const std::size_t gh = h / patch, gw = w / patch, k = gh * gw;
  check_token_grid(stability, n, k, "aggregated gradient stability");
  check_binary(stability, "aggregated gradient stability");

  Tensor distortion({n, k});
  if (n == 1) return distortion;  // no other views to disagree with

  const double inv_others = 1.0 / static_cast<double>(n - 1);
  for (std::size_t t = 0; t < n; ++t) {
    Tensor acc({h, w});
    for (std::size_t i = 0; i < n; ++i) {
      if (i == t) continue;
      const ResidualField rf = reprojection_residuals(
          scene.views[t], scene.views[i], predicted_depths[t],
          predicted_depths[i], scene.cameras[t], scene.cameras[i]);
      Tensor gx, gy;
      spatial_gradient(rf.r_d, gx, gy);
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          if (rf.valid(r, c) == 0.0) continue;
          const double wp = stability(t, (r / patch) * gw + (c / patch));
          const double grad_norm = std::hypot(gx(r, c), gy(r, c));
          acc(r, c) += std::abs(wp * rf.r_d(r, c)) * grad_norm +
                       lambda * std::abs(wp * rf.r_c(r, c));
        }
      }
    }
    const double inv_patch = 1.0 / static_cast<double>(patch * patch);
    for (std::size_t token = 0; token < k; ++token) {
      const std::size_t r0 = (token / gw) * patch, c0 = (token % gw) * patch;
      double sum = 0.0;
      for (std::size_t r = r0; r < r0 + patch; ++r)
        for (std::size_t c = c0; c < c0 + patch; ++c) sum += acc(r, c);
      distortion(t, token) = sum * inv_patch * inv_others;
    }
  }
  return distortion;
}

RefinedMask refine_mask(const Tensor& initial, const Tensor& distortion,
                        const AlphaMode& mode, bool subtract) {
  check_matrix_pair(initial, distortion, "mask refinement");
  check_binary(initial, "mask refinement");
  if (mode.kind == AlphaMode::Kind::kQuantile &&
      (mode.value <= 0.0 || mode.value >= 1.0))
    throw ConfigError("mask refinement: quantile must lie strictly inside (0, 1)");

  const std::size_t n = initial.shape[0], k = initial.shape[1];
  RefinedMask out;
  out.mask = initial;
  out.thresholds.assign(n, std::numeric_limits<double>::infinity());

  for (std::size_t t = 0; t < n; ++t) {
    // The candidate pool: stable tokens when growing, masked tokens when
    // releasing (experimental subtract mode).
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < k; ++i) {
      const bool masked = initial(t, i) != 0.0;
      if (masked == subtract) pool.push_back(i);
    }
    if (pool.empty()) {
      if (!subtract) out.all_masked_warning = true;
      continue;
    }
    double cut = mode.value;
    if (mode.kind == AlphaMode::Kind::kQuantile) {
      std::vector<double> values;
      values.reserve(pool.size());
      for (std::size_t i : pool) values.push_back(distortion(t, i));
      cut = order_statistic_cut(std::move(values),
                                quantile_count(mode.value, pool.size()));
    }
    out.thresholds[t] = cut;
    for (std::size_t i : pool) {
      const bool above = distortion(t, i) > cut;
      if (!subtract && above) out.mask(t, i) = 1.0;
      if (subtract && !above) out.mask(t, i) = 0.0;
    }
  }
  return out;
}

KeyGate make_key_gate(const Tensor& mask, const std::vector<std::size_t>& layers) {
  if (mask.rank() != 2)
    throw ShapeError("key gate: mask must be [views, tokens], got " +
                     shape_str(mask.shape));
  check_binary(mask, "key gate");
  KeyGate gate;
  gate.masked.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    gate.masked[i] = mask.data[i] != 0.0 ? 1 : 0;
  gate.layers = layers;
  return gate;
}

double detection_score(const Tensor& scores, const Tensor& gt) {
  if (scores.shape != gt.shape)
    throw ShapeError("detection score: shapes differ, " + shape_str(scores.shape) +
                     " vs " + shape_str(gt.shape));
  check_binary(gt, "detection score ground truth");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (double v : gt.data) n_pos += (v == 1.0) ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw NumericError(
        "detection score undefined: ground truth holds a single class");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores.data[a] < scores.data[b];
  });

  // Mann-Whitney statistic from 1-based ranks, ties sharing the mean rank of
  // their run.
  double pos_rank_sum = 0.0;
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = start + 1;
    while (end < n && scores.data[order[end]] == scores.data[order[start]]) ++end;
    const double mean_rank = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t at = start; at < end; ++at)
      if (gt.data[order[at]] == 1.0) pos_rank_sum += mean_rank;
    start = end;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

AnomalyResult run_modulation(const QKTrace& trace, const SceneBundle& scene,
                             const std::vector<Tensor>& predicted_depths,
                             const ModulationConfig& cfg) {
  const std::size_t depth = trace.q.size();
  BandPartition bands = cfg.bands;
  if (bands.shallow.empty() && bands.middle.empty() && bands.deep.empty())
    bands = default_bands(depth);
  validate_bands(bands, depth);

  AnomalyResult out;
  SaliencyResult sal = anomaly_saliency(trace, cfg.window_radius, bands);
  out.saliency = std::move(sal.saliency);
  out.degenerate = std::move(sal.degenerate);

  MaskResult init = initial_mask(out.saliency, cfg.alpha);
  out.initial = std::move(init.mask);
  out.initial_thresholds = std::move(init.thresholds);

  Tensor stability = zeros_like(out.initial);
  for (std::size_t i = 0; i < stability.size(); ++i)
    stability.data[i] = 1.0 - out.initial.data[i];
  out.distortion =
      aggregated_gradient(scene, predicted_depths, stability, cfg.lambda);

  RefinedMask refined =
      refine_mask(out.initial, out.distortion, cfg.refine_threshold);
  out.refined = std::move(refined.mask);
  out.refine_thresholds = std::move(refined.thresholds);
  out.all_masked_warning = refined.all_masked_warning;

  out.gate_layers = cfg.gate_layers.empty() ? bands.shallow : cfg.gate_layers;
  return out;
}

}  // namespace hdgt
