#include "hdgt/transformer.hpp"

#include <Eigen/Core>
#include <Eigen/QR>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "hdgt/errors.hpp"
#include "hdgt/rng.hpp"
#include "hdgt/tensor_io.hpp"

namespace hdgt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void fill_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

std::string layer_prefix(const std::string& stack, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s.layer%02zu.", stack.c_str(), index);
  return std::string(buf);
}

const char* kLayerFields[] = {"ln1.gain", "ln1.bias", "q_proj.weight", "q_proj.bias",
                              "k_proj.weight", "k_proj.bias", "v_proj.weight", "v_proj.bias",
                              "o_proj.weight", "o_proj.bias", "ln2.gain", "ln2.bias",
                              "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"};

std::vector<Tensor*> layer_fields(LayerParams& p) {
  return {&p.ln1_gain, &p.ln1_bias, &p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv,
          &p.wo, &p.bo, &p.ln2_gain, &p.ln2_bias, &p.mlp_w1, &p.mlp_b1, &p.mlp_w2, &p.mlp_b2};
}

std::vector<const Tensor*> layer_fields(const LayerParams& p) {
  return {&p.ln1_gain, &p.ln1_bias, &p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv,
          &p.wo, &p.bo, &p.ln2_gain, &p.ln2_bias, &p.mlp_w1, &p.mlp_b1, &p.mlp_w2, &p.mlp_b2};
}

LayerParams make_layer(std::size_t c) {
  LayerParams p;
  p.ln1_gain = Tensor::full({c}, 1.0);
  p.ln1_bias = Tensor::zeros({c});
  p.ln2_gain = Tensor::full({c}, 1.0);
  p.ln2_bias = Tensor::zeros({c});
  p.wq = Tensor::zeros({c, c});
  p.wk = Tensor::zeros({c, c});
  p.wv = Tensor::zeros({c, c});
  p.wo = Tensor::zeros({c, c});
  p.bq = Tensor::zeros({c});
  p.bk = Tensor::zeros({c});
  p.bv = Tensor::zeros({c});
  p.bo = Tensor::zeros({c});
  const std::size_t hidden = 4 * c;
  p.mlp_w1 = Tensor::zeros({c, hidden});
  p.mlp_b1 = Tensor::zeros({hidden});
  p.mlp_w2 = Tensor::zeros({hidden, c});
  p.mlp_b2 = Tensor::zeros({c});
  return p;
}

// Untrained stacks get a structured initialization so the layer bands behave
// the way the anomaly priors assume: early layers respond to appearance,
// late layers settle onto cross-view-consistent structure.
//   aligned_q  replaces the query projection with a rank-one map reading along
//              the direction all patch tokens share: every query becomes a
//              positive scalar multiple of one shared write direction, so
//              cosine rows against the queries are identical and cross-view
//              query/key volatility depends only on which key varies — never
//              on which query reads it. Keys keep the full-rank map.
//   out_gain   scales the block's write-back paths (attention output and MLP
//              output). Early layers use a reduced gain so their records stay
//              close to raw appearance while still writing to the stream —
//              key gating in those layers must propagate to everything after
//              them, so the gain stays strictly positive.
void init_layer(LayerParams& p, std::size_t c, Rng& rng,
                const Tensor* aligned_q, double out_gain) {
  fill_uniform(p.wq, c, rng);
  // Tied, orthogonalized query/key projections: attention logits start as the
  // exact token cosine structure. A generic random map stretches different
  // difference directions by up to tens of percent, which is larger than the
  // similarity contrasts the anomaly statistics read; the orthogonal factor
  // of the random draw preserves inner products, so recorded queries/keys
  // carry the stream's similarity geometry without projection noise.
  // Training (none here) would untie and reshape them.
  fill_uniform(p.wk, c, rng);
  {
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<Mat> wk_m(p.wk.data.data(), c, c);
    Eigen::HouseholderQR<Mat> qr(wk_m);
    Mat q_factor = qr.householderQ();
    wk_m = q_factor;
  }
  p.wq.data = p.wk.data;
  fill_uniform(p.wv, c, rng);
  fill_uniform(p.wo, c, rng);
  fill_uniform(p.mlp_w1, c, rng);
  fill_uniform(p.mlp_w2, 4 * c, rng);
  if (out_gain != 1.0) {
    for (double& v : p.wo.data) v *= out_gain;
    for (double& v : p.mlp_w2.data) v *= out_gain;
  }
  // Always consume the direction draw so the stream is knob-independent.
  Tensor write_dir({c});
  for (double& v : write_dir.data) v = rng.uniform(-1.0, 1.0);
  if (aligned_q) {
    double wn = 0.0;
    for (double v : write_dir.data) wn += v * v;
    wn = std::sqrt(wn);
    if (wn > 0.0)
      for (std::size_t e = 0; e < c; ++e)
        for (std::size_t j = 0; j < c; ++j)
          p.wq.data[e * c + j] = aligned_q->data[e] * (write_dir.data[j] / wn);
  }
}

Tensor pose_from_tokens(const Tensor& tokens, const Tensor& w, const Tensor& b) {
  const std::size_t t = tokens.shape[0];
  const std::size_t c = tokens.shape[1];
  Tensor pooled({1, c});
  for (std::size_t j = 0; j < c; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t; ++i) acc += tokens.data[i * c + j];
    pooled.data[j] = acc / static_cast<double>(t);
  }
  Tensor raw = add_bias(matmul(pooled, w), b);
  Tensor pose({7});
  for (std::size_t j = 0; j < 7; ++j) pose.data[j] = raw.data[j];
  double qn = 0.0;
  for (std::size_t j = 0; j < 4; ++j) qn += pose.data[j] * pose.data[j];
  qn = std::sqrt(qn);
  if (qn < 1e-12) {
    pose.data[0] = 1.0;
    pose.data[1] = pose.data[2] = pose.data[3] = 0.0;
  } else {
    for (std::size_t j = 0; j < 4; ++j) pose.data[j] /= qn;
  }
  return pose;
}

// Scatter per-token patch values [grid_h*grid_w, p*p] onto a [grid_h*p, grid_w*p] map.
Tensor assemble_patches(const Tensor& values, std::size_t grid_h, std::size_t grid_w,
                        std::size_t p) {
  Tensor out({grid_h * p, grid_w * p});
  const std::size_t w = grid_w * p;
  for (std::size_t gr = 0; gr < grid_h; ++gr) {
    for (std::size_t gc = 0; gc < grid_w; ++gc) {
      const double* src = values.data.data() + (gr * grid_w + gc) * p * p;
      for (std::size_t pr = 0; pr < p; ++pr)
        for (std::size_t pc = 0; pc < p; ++pc)
          out.data[(gr * p + pr) * w + (gc * p + pc)] = src[pr * p + pc];
    }
  }
  return out;
}

}  // namespace

void validate_stack_config(const StackConfig& cfg) {
  if (cfg.depth_coarse == 0) throw ConfigError("depth_coarse must be positive");
  if (cfg.depth_refine == 0) throw ConfigError("depth_refine must be positive");
  if (cfg.depth_refine >= cfg.depth_coarse)
    throw ConfigError("depth_refine must be smaller than depth_coarse");
  if (cfg.channels == 0 || cfg.heads == 0)
    throw ConfigError("channels and heads must be positive");
  if (cfg.channels % cfg.heads != 0)
    throw ConfigError("channels must be divisible by heads");
  if (cfg.patch == 0) throw ConfigError("patch must be positive");
  if (cfg.low_height == 0 || cfg.low_width == 0)
    throw ConfigError("low resolution must be positive");
  if (cfg.low_height % cfg.patch != 0 || cfg.low_width % cfg.patch != 0)
    throw ConfigError("low resolution must be a multiple of patch");
  if (cfg.high_height % cfg.low_height != 0 || cfg.high_width % cfg.low_width != 0)
    throw ConfigError("high resolution must be an integer multiple of low resolution");
  if (cfg.high_height / cfg.low_height != cfg.high_width / cfg.low_width)
    throw ConfigError("upsample factor must match between height and width");
  if (cfg.refine_patch == 0 || cfg.low_height % cfg.refine_patch != 0 ||
      cfg.low_width % cfg.refine_patch != 0)
    throw ConfigError("refine_patch must divide the low resolution");
  if (cfg.refine_window == 0 ||
      cfg.refine_tokens_per_view() % cfg.refine_window != 0)
    throw ConfigError("refine_window must divide the refiner token count");
}

StackParams init_stack_params(const StackConfig& cfg) {
  validate_stack_config(cfg);
  const std::size_t c = cfg.channels;
  StackParams params;
  Rng rng(hash_keys({cfg.seed, 0xA77Eull}));
  params.patch_embed = Tensor::zeros({cfg.patch * cfg.patch * 3, c});
  fill_uniform(params.patch_embed, cfg.patch * cfg.patch * 3, rng);
  // The direction every patch token shares: the normalized mean of the
  // layer-normalized tokens of a mid-gray image. Every real token keeps a
  // positive overlap with it, which aligned_q (see init_layer) relies on.
  Tensor shared_read({c});
  {
    Tensor gray({cfg.low_height, cfg.low_width, 3});
    for (double& v : gray.data) v = 0.5;
    const Tensor tok = patchify(gray, cfg.patch, params.patch_embed, cfg.pos_amplitude);
    const Tensor unit_gain = Tensor::full({c}, 1.0);
    const Tensor zero_bias = Tensor::zeros({c});
    const Tensor normed = layernorm(tok, unit_gain, zero_bias);
    const std::size_t k = tok.shape[0];
    double norm = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += normed.data[i * c + j];
      shared_read.data[j] = acc / static_cast<double>(k);
      norm += shared_read.data[j] * shared_read.data[j];
    }
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (double& v : shared_read.data) v /= norm;
  }

  params.coarse.reserve(cfg.depth_coarse);
  const std::size_t shallow_count = std::max<std::size_t>(cfg.depth_coarse / 3, 1);
  // Aligned-query bands: the first third of the stack reads through the
  // rank-one aligned query map on a nearly raw stream (low-gain blocks), and
  // the final band past the midpoint reads through the same map after the
  // mid layers have mixed the stream. A layer's records only see the mixing
  // of the layers before it, so the mid band keeps full-rank tied maps and
  // stays appearance-sensitive.
  constexpr double kShallowOutGain = 0.1;
  const std::size_t deep_start = (cfg.depth_coarse + 1) / 2;
  for (std::size_t l = 0; l < cfg.depth_coarse; ++l) {
    params.coarse.push_back(make_layer(c));
    const bool shallow = l < shallow_count;
    const bool aligned = shallow || l >= deep_start;
    init_layer(params.coarse.back(), c, rng,
               aligned ? &shared_read : nullptr, shallow ? kShallowOutGain : 1.0);
  }
  params.refine.reserve(cfg.depth_refine);
  for (std::size_t l = 0; l < cfg.depth_refine; ++l) {
    params.refine.push_back(make_layer(c));
    init_layer(params.refine.back(), c, rng, nullptr, 1.0);
  }
  params.pose_head_w = Tensor::zeros({c, 7});
  params.pose_head_b = Tensor::zeros({7});
  fill_uniform(params.pose_head_w, c, rng);
  params.refine_pose_w = Tensor::zeros({c, 7});
  params.refine_pose_b = Tensor::zeros({7});
  fill_uniform(params.refine_pose_w, c, rng);
  const std::size_t pr2 = cfg.refine_patch * cfg.refine_patch;
  params.depth_head_w = Tensor::zeros({c, pr2});
  params.depth_head_b = Tensor::zeros({pr2});
  fill_uniform(params.depth_head_w, c, rng);
  return params;
}

FlopCount count_attention_flops(std::size_t n_views, std::size_t k_tokens,
                                std::size_t channels, std::size_t layers,
                                std::size_t window) {
  if (n_views == 0 || k_tokens == 0 || channels == 0 || layers == 0)
    throw ConfigError("attention flop counting requires positive arguments");
  const std::uint64_t n = n_views, k = k_tokens, c = channels, ell = layers;
  std::uint64_t pair_terms;
  if (window == 0) {
    pair_terms = (n * k) * (n * k);
  } else {
    if (k % window != 0)
      throw ConfigError("window must divide the per-view token count");
    pair_terms = n * (k / window) * static_cast<std::uint64_t>(window) * window;
  }
  FlopCount f;
  f.qk_flops = ell * pair_terms * c;
  f.av_flops = ell * pair_terms * c;
  f.proj_flops = ell * 4 * (n * k) * c * c;
  return f;
}

Tensor position_code(std::size_t grid_h, std::size_t grid_w, std::size_t channels,
                     double amplitude) {
  if (grid_h == 0 || grid_w == 0 || channels == 0)
    throw ShapeError("position_code requires positive dimensions");
  Tensor code({grid_h * grid_w, channels});
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  for (std::size_t gr = 0; gr < grid_h; ++gr) {
    const double u = (static_cast<double>(gr) + 0.5) / static_cast<double>(grid_h);
    for (std::size_t gc = 0; gc < grid_w; ++gc) {
      const double v = (static_cast<double>(gc) + 0.5) / static_cast<double>(grid_w);
      double* row = code.data.data() + (gr * grid_w + gc) * channels;
      for (std::size_t j = 0; j < channels; ++j) {
        const double freq = static_cast<double>(j / 4 + 1);
        double val = 0.0;
        switch (j % 4) {
          case 0: val = std::sin(kTwoPi * freq * u); break;
          case 1: val = std::cos(kTwoPi * freq * u); break;
          case 2: val = std::sin(kTwoPi * freq * v); break;
          default: val = std::cos(kTwoPi * freq * v); break;
        }
        row[j] = amplitude * val;
      }
    }
  }
  return code;
}

Tensor patchify(const Tensor& image, std::size_t patch, const Tensor& embed,
                double pos_amplitude) {
  if (image.shape.size() != 3 || image.shape[2] != 3)
    throw ShapeError("patchify expects an [h, w, 3] image, got " + shape_str(image.shape));
  if (patch == 0) throw ConfigError("patch must be positive");
  const std::size_t h = image.shape[0], w = image.shape[1];
  if (h % patch != 0 || w % patch != 0)
    throw ConfigError("image size " + shape_str(image.shape) +
                      " is not divisible by patch " + std::to_string(patch));
  const std::size_t flat_dim = patch * patch * 3;
  if (embed.shape.size() != 2 || embed.shape[0] != flat_dim)
    throw ShapeError("patch embed must be [" + std::to_string(flat_dim) +
                     ", c], got " + shape_str(embed.shape));
  const std::size_t grid_h = h / patch, grid_w = w / patch;
  const std::size_t k = grid_h * grid_w;
  Tensor flat({k, flat_dim});
  for (std::size_t gr = 0; gr < grid_h; ++gr) {
    for (std::size_t gc = 0; gc < grid_w; ++gc) {
      double* row = flat.data.data() + (gr * grid_w + gc) * flat_dim;
      for (std::size_t pr = 0; pr < patch; ++pr)
        for (std::size_t pc = 0; pc < patch; ++pc)
          for (std::size_t ch = 0; ch < 3; ++ch)
            row[(pr * patch + pc) * 3 + ch] =
                image.data[((gr * patch + pr) * w + gc * patch + pc) * 3 + ch];
    }
  }
  Tensor tokens = matmul(flat, embed);
  Tensor code = position_code(grid_h, grid_w, embed.shape[1], pos_amplitude);
  return add(tokens, code);
}

Tensor attention_layer(const Tensor& tokens, const LayerParams& p, std::size_t heads,
                       std::size_t window, const std::vector<char>* key_gate,
                       FlopCount* meter, AttentionProbe* probe, Tensor* q_out,
                       Tensor* k_out) {
  if (tokens.shape.size() != 2)
    throw ShapeError("attention expects [tokens, channels], got " + shape_str(tokens.shape));
  const std::size_t t = tokens.shape[0], c = tokens.shape[1];
  if (heads == 0 || c % heads != 0)
    throw ConfigError("heads must be positive and divide channels");
  if (window == 0) window = t;
  if (t % window != 0)
    throw ConfigError("window " + std::to_string(window) +
                      " must divide token count " + std::to_string(t));
  if (key_gate && key_gate->size() != t)
    throw ShapeError("key gate has " + std::to_string(key_gate->size()) +
                     " entries for " + std::to_string(t) + " tokens");

  const Tensor h1 = layernorm(tokens, p.ln1_gain, p.ln1_bias);
  Tensor q = add_bias(matmul(h1, p.wq), p.bq);
  Tensor k = add_bias(matmul(h1, p.wk), p.bk);
  Tensor v = add_bias(matmul(h1, p.wv), p.bv);
  if (meter) meter->proj_flops += 3ull * t * c * c;

  if (key_gate) {
    for (std::size_t i = 0; i < t; ++i)
      if ((*key_gate)[i])
        for (std::size_t j = 0; j < c; ++j) k.data[i * c + j] = 0.0;
  }
  if (q_out) *q_out = q;
  if (k_out) *k_out = k;

  const std::size_t d = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor att({t, c});
  MapMat q_m(q.data.data(), t, c), k_m(k.data.data(), t, c), v_m(v.data.data(), t, c);
  MapMat att_m(att.data.data(), t, c);

  std::vector<Tensor> probe_logits, probe_weights;
  if (probe && window == t) {
    probe_logits.assign(heads, Tensor({t, t}));
    probe_weights.assign(heads, Tensor({t, t}));
  }

  for (std::size_t w0 = 0; w0 < t; w0 += window) {
    for (std::size_t h = 0; h < heads; ++h) {
      RowMat logits = scale * (q_m.block(w0, h * d, window, d) *
                               k_m.block(w0, h * d, window, d).transpose());
      if (meter) meter->qk_flops += static_cast<std::uint64_t>(window) * window * d;
      RowMat weights(window, window);
      for (std::size_t i = 0; i < window; ++i) {
        const double row_max = logits.row(i).maxCoeff();
        double denom = 0.0;
        for (std::size_t j = 0; j < window; ++j) {
          weights(i, j) = std::exp(logits(i, j) - row_max);
          denom += weights(i, j);
        }
        weights.row(i) /= denom;
      }
      att_m.block(w0, h * d, window, d) = weights * v_m.block(w0, h * d, window, d);
      if (meter) meter->av_flops += static_cast<std::uint64_t>(window) * window * d;
      if (probe && window == t) {
        std::copy(logits.data(), logits.data() + t * t, probe_logits[h].data.begin());
        std::copy(weights.data(), weights.data() + t * t, probe_weights[h].data.begin());
      }
    }
  }
  if (probe && window == t) {
    probe->logits.push_back(std::move(probe_logits));
    probe->weights.push_back(std::move(probe_weights));
  }

  Tensor o = add_bias(matmul(att, p.wo), p.bo);
  if (meter) meter->proj_flops += static_cast<std::uint64_t>(t) * c * c;
  Tensor x2 = add(tokens, o);
  Tensor h2 = layernorm(x2, p.ln2_gain, p.ln2_bias);
  Tensor m1 = relu(add_bias(matmul(h2, p.mlp_w1), p.mlp_b1));
  Tensor m2 = add_bias(matmul(m1, p.mlp_w2), p.mlp_b2);
  return add(x2, m2);
}

CoarseResult run_coarse(const std::vector<Tensor>& views, const StackParams& params,
                        const StackConfig& cfg, const KeyGate* gate, FlopCount* meter,
                        AttentionProbe* probe) {
  validate_stack_config(cfg);
  if (views.empty()) throw ShapeError("run_coarse requires at least one view");
  const std::size_t n = views.size();
  const std::size_t k = cfg.tokens_per_view();
  const std::size_t c = cfg.channels;
  for (const Tensor& v : views)
    if (v.shape.size() != 3 || v.shape[0] != cfg.low_height ||
        v.shape[1] != cfg.low_width || v.shape[2] != 3)
      throw ShapeError("coarse view must be [" + std::to_string(cfg.low_height) + ", " +
                       std::to_string(cfg.low_width) + ", 3], got " + shape_str(v.shape));

  std::vector<char> gate_layer(cfg.depth_coarse, 0);
  if (gate) {
    if (gate->masked.size() != n * k)
      throw ShapeError("key gate mask has " + std::to_string(gate->masked.size()) +
                       " entries for " + std::to_string(n * k) + " tokens");
    for (std::size_t l : gate->layers) {
      if (l < 1 || l > cfg.depth_coarse)
        throw ConfigError("gated layer index " + std::to_string(l) +
                          " outside [1, " + std::to_string(cfg.depth_coarse) + "]");
      gate_layer[l - 1] = 1;
    }
  }

  Tensor x({n * k, c});
  for (std::size_t v = 0; v < n; ++v) {
    Tensor tok = patchify(views[v], cfg.patch, params.patch_embed, cfg.pos_amplitude);
    std::copy(tok.data.begin(), tok.data.end(), x.data.begin() + v * k * c);
  }

  CoarseResult result;
  result.trace.q.resize(cfg.depth_coarse);
  result.trace.k.resize(cfg.depth_coarse);
  for (std::size_t l = 0; l < cfg.depth_coarse; ++l) {
    Tensor q_full, k_full;
    x = attention_layer(x, params.coarse[l], cfg.heads, 0,
                        gate_layer[l] ? &gate->masked : nullptr, meter, probe,
                        &q_full, &k_full);
    result.trace.q[l].reserve(n);
    result.trace.k[l].reserve(n);
    for (std::size_t v = 0; v < n; ++v) {
      Tensor qv({k, c}), kv({k, c});
      std::copy(q_full.data.begin() + v * k * c, q_full.data.begin() + (v + 1) * k * c,
                qv.data.begin());
      std::copy(k_full.data.begin() + v * k * c, k_full.data.begin() + (v + 1) * k * c,
                kv.data.begin());
      result.trace.q[l].push_back(std::move(qv));
      result.trace.k[l].push_back(std::move(kv));
    }
  }

  result.features.reserve(n);
  result.poses.reserve(n);
  for (std::size_t v = 0; v < n; ++v) {
    Tensor grid({cfg.coarse_grid_h(), cfg.coarse_grid_w(), c});
    std::copy(x.data.begin() + v * k * c, x.data.begin() + (v + 1) * k * c,
              grid.data.begin());
    result.features.push_back(std::move(grid));
    Tensor view_tokens({k, c});
    std::copy(x.data.begin() + v * k * c, x.data.begin() + (v + 1) * k * c,
              view_tokens.data.begin());
    result.poses.push_back(pose_from_tokens(view_tokens, params.pose_head_w,
                                            params.pose_head_b));
  }
  return result;
}

RefineResult run_refiner(const std::vector<Tensor>& features_hr, const StackParams& params,
                         const StackConfig& cfg, FlopCount* meter) {
  validate_stack_config(cfg);
  if (features_hr.empty()) throw ShapeError("run_refiner requires at least one view");
  const std::size_t gh = cfg.refine_grid_h(), gw = cfg.refine_grid_w();
  const std::size_t t = gh * gw, c = cfg.channels;
  const std::size_t pr = cfg.refine_patch;
  const std::size_t up = cfg.high_height / (gh * pr);
  if (gh * pr * up != cfg.high_height || gw * pr * up != cfg.high_width)
    throw ConfigError("refiner output does not tile the high resolution");

  RefineResult result;
  for (const Tensor& f : features_hr) {
    if (f.shape.size() != 3 || f.shape[0] != gh || f.shape[1] != gw || f.shape[2] != c)
      throw ShapeError("refiner feature grid must be [" + std::to_string(gh) + ", " +
                       std::to_string(gw) + ", " + std::to_string(c) + "], got " +
                       shape_str(f.shape));
    Tensor tokens = reshape(f, {t, c});
    for (std::size_t l = 0; l < cfg.depth_refine; ++l)
      tokens = attention_layer(tokens, params.refine[l], cfg.heads, cfg.refine_window,
                               nullptr, meter, nullptr, nullptr, nullptr);
    Tensor patch_depth = add_bias(matmul(tokens, params.depth_head_w), params.depth_head_b);
    Tensor low_map = assemble_patches(patch_depth, gh, gw, pr);
    Tensor depth = up == 1 ? low_map
                           : bilinear_upsample(reshape(low_map, {gh * pr, gw * pr, 1}), up);
    if (up != 1) depth = reshape(depth, {cfg.high_height, cfg.high_width});
    result.depths.push_back(std::move(depth));
    result.poses.push_back(pose_from_tokens(tokens, params.refine_pose_w,
                                            params.refine_pose_b));
  }
  return result;
}

void save_checkpoint(const std::string& dir, const ParamStore& store,
                     const std::map<std::string, std::vector<std::size_t>>& extras) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "hdgt-checkpoint-v1";
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, tensor] : store) {
    save_tensor(dir + "/" + name + ".hdt", tensor);
    params[name] = tensor.shape;
  }
  manifest["params"] = params;
  nlohmann::json extra = nlohmann::json::object();
  for (const auto& [name, values] : extras) extra[name] = values;
  manifest["extras"] = extra;
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw ConfigError("cannot write checkpoint manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

namespace {
nlohmann::json read_manifest(const std::string& dir) {
  const std::string path = dir + "/manifest.json";
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("checkpoint manifest not found: " + path);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid checkpoint manifest " + path + ": " + e.what());
  }
  if (!manifest.contains("params") || !manifest["params"].is_object())
    throw ConfigError("checkpoint manifest lacks a params table: " + path);
  return manifest;
}
}  // namespace

ParamStore load_checkpoint(const std::string& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  ParamStore store;
  for (const auto& [name, shape_json] : manifest["params"].items()) {
    Tensor t = load_tensor(dir + "/" + name + ".hdt");
    const std::vector<std::size_t> expected = shape_json.get<std::vector<std::size_t>>();
    if (t.shape != expected)
      throw ConfigError("checkpoint parameter " + name + " has shape " +
                        shape_str(t.shape) + ", manifest says " + shape_str(expected));
    store.emplace(name, std::move(t));
  }
  return store;
}

std::map<std::string, std::vector<std::size_t>> load_checkpoint_extras(const std::string& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  std::map<std::string, std::vector<std::size_t>> extras;
  if (manifest.contains("extras"))
    for (const auto& [name, values] : manifest["extras"].items())
      extras[name] = values.get<std::vector<std::size_t>>();
  return extras;
}

ParamStore stack_params_to_store(const StackParams& params) {
  ParamStore store;
  store.emplace("patch_embed", params.patch_embed);
  for (std::size_t l = 0; l < params.coarse.size(); ++l) {
    const auto fields = layer_fields(params.coarse[l]);
    for (std::size_t i = 0; i < fields.size(); ++i)
      store.emplace(layer_prefix("coarse", l) + kLayerFields[i], *fields[i]);
  }
  for (std::size_t l = 0; l < params.refine.size(); ++l) {
    const auto fields = layer_fields(params.refine[l]);
    for (std::size_t i = 0; i < fields.size(); ++i)
      store.emplace(layer_prefix("refine", l) + kLayerFields[i], *fields[i]);
  }
  store.emplace("coarse.pose_head.weight", params.pose_head_w);
  store.emplace("coarse.pose_head.bias", params.pose_head_b);
  store.emplace("refine.pose_head.weight", params.refine_pose_w);
  store.emplace("refine.pose_head.bias", params.refine_pose_b);
  store.emplace("refine.depth_head.weight", params.depth_head_w);
  store.emplace("refine.depth_head.bias", params.depth_head_b);
  return store;
}

namespace {
const Tensor& fetch(const ParamStore& store, const std::string& name,
                    const std::vector<std::size_t>& shape) {
  auto it = store.find(name);
  if (it == store.end())
    throw ConfigError("checkpoint is missing parameter " + name);
  if (it->second.shape != shape)
    throw ConfigError("checkpoint parameter " + name + " has shape " +
                      shape_str(it->second.shape) + ", expected " + shape_str(shape));
  return it->second;
}
}  // namespace

StackParams stack_params_from_store(const ParamStore& store, const StackConfig& cfg) {
  validate_stack_config(cfg);
  const std::size_t c = cfg.channels;
  StackParams params;
  params.patch_embed = fetch(store, "patch_embed", {cfg.patch * cfg.patch * 3, c});
  auto load_layers = [&](const std::string& stack, std::size_t depth,
                         std::vector<LayerParams>& layers) {
    const std::size_t hidden = 4 * c;
    const std::vector<std::vector<std::size_t>> shapes = {
        {c}, {c}, {c, c}, {c}, {c, c}, {c}, {c, c}, {c},
        {c, c}, {c}, {c}, {c}, {c, hidden}, {hidden}, {hidden, c}, {c}};
    for (std::size_t l = 0; l < depth; ++l) {
      layers.push_back(make_layer(c));
      auto fields = layer_fields(layers.back());
      for (std::size_t i = 0; i < fields.size(); ++i)
        *fields[i] = fetch(store, layer_prefix(stack, l) + kLayerFields[i], shapes[i]);
    }
  };
  load_layers("coarse", cfg.depth_coarse, params.coarse);
  load_layers("refine", cfg.depth_refine, params.refine);
  params.pose_head_w = fetch(store, "coarse.pose_head.weight", {c, 7});
  params.pose_head_b = fetch(store, "coarse.pose_head.bias", {7});
  params.refine_pose_w = fetch(store, "refine.pose_head.weight", {c, 7});
  params.refine_pose_b = fetch(store, "refine.pose_head.bias", {7});
  const std::size_t pr2 = cfg.refine_patch * cfg.refine_patch;
  params.depth_head_w = fetch(store, "refine.depth_head.weight", {c, pr2});
  params.depth_head_b = fetch(store, "refine.depth_head.bias", {pr2});
  return params;
}

}  // namespace hdgt
