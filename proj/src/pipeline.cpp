#include "hdgt/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "hdgt/errors.hpp"
#include "hdgt/report.hpp"
#include "hdgt/rng.hpp"
#include "hdgt/tensor_io.hpp"

namespace hdgt {
namespace {

using nlohmann::json;

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::string view_tag(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "v%02zu", v);
  return buf;
}

// The scene and the stack must agree on the low-res token grid.
void check_scene_stack(const SceneConfig& scene, const StackConfig& stack) {
  if (scene.height != stack.low_height || scene.width != stack.low_width)
    throw ConfigError("scene resolution " + std::to_string(scene.height) + "x" +
                      std::to_string(scene.width) + " does not match the stack's low-res grid " +
                      std::to_string(stack.low_height) + "x" + std::to_string(stack.low_width));
  if (scene.patch != stack.patch)
    throw ConfigError("scene token patch " + std::to_string(scene.patch) +
                      " does not match the stack patch " + std::to_string(stack.patch));
}

SceneBundle obtain_scene(const RunConfig& cfg) {
  if (!cfg.scene_dir.empty()) return load_scene(cfg.scene_dir);
  return generate_scene(cfg.scene, cfg.seed);
}

std::string checkpoint_path(const RunConfig& cfg) {
  return cfg.checkpoint_dir.empty() ? cfg.out_dir + "/upsampler_checkpoint" : cfg.checkpoint_dir;
}

UpsamplerParams load_learned(const RunConfig& cfg) {
  return load_upsampler_checkpoint(checkpoint_path(cfg));
}

Tensor gt_token_mask(const SceneBundle& scene) {
  const std::size_t n = scene.singularity_masks.size();
  const std::size_t k = scene.singularity_masks.empty() ? 0 : scene.singularity_masks[0].size();
  Tensor gt({n, k});
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t i = 0; i < k; ++i) gt.data[v * k + i] = scene.singularity_masks[v].data[i];
  return gt;
}

json flops_json(const FlopCount& f) {
  return {{"qk", f.qk_flops}, {"av", f.av_flops}, {"proj", f.proj_flops}, {"total", f.total()}};
}

double mask_sum(const Tensor& m) {
  double acc = 0.0;
  for (double v : m.data) acc += v;
  return acc;
}

double mask_overlap(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data[i] * b.data[i];
  return acc;
}

json mask_stats_json(const AnomalyResult& mod, const Tensor& gt) {
  json stats;
  stats["initial_count"] = static_cast<std::uint64_t>(mask_sum(mod.initial));
  stats["refined_count"] = static_cast<std::uint64_t>(mask_sum(mod.refined));
  stats["gt_count"] = static_cast<std::uint64_t>(mask_sum(gt));
  stats["initial_gt_overlap"] = static_cast<std::uint64_t>(mask_overlap(mod.initial, gt));
  stats["refined_gt_overlap"] = static_cast<std::uint64_t>(mask_overlap(mod.refined, gt));
  stats["initial_thresholds"] = mod.initial_thresholds;
  stats["refine_thresholds"] = mod.refine_thresholds;
  stats["gate_layers"] = mod.gate_layers;
  std::vector<int> degenerate(mod.degenerate.begin(), mod.degenerate.end());
  stats["degenerate_views"] = degenerate;
  stats["all_masked_warning"] = mod.all_masked_warning;
  return stats;
}

// Saliency and masks as exact tensors plus per-view PGM visualizations.
void dump_modulation(const std::string& dir, const AnomalyResult& mod, const StackConfig& sc) {
  std::filesystem::create_directories(dir);
  save_tensor(dir + "/saliency.hdt", mod.saliency);
  save_tensor(dir + "/initial_mask.hdt", mod.initial);
  save_tensor(dir + "/refined_mask.hdt", mod.refined);
  save_tensor(dir + "/distortion.hdt", mod.distortion);
  const std::size_t gh = sc.coarse_grid_h(), gw = sc.coarse_grid_w();
  const std::size_t n = mod.saliency.shape[0], k = mod.saliency.shape[1];
  for (std::size_t v = 0; v < n; ++v) {
    Tensor grid({gh, gw});
    for (std::size_t i = 0; i < k; ++i) grid.data[i] = mod.saliency.data[v * k + i];
    save_pgm_gray(dir + "/saliency_" + view_tag(v) + ".pgm", grid);
    for (std::size_t i = 0; i < k; ++i) grid.data[i] = mod.initial.data[v * k + i];
    save_pgm_mask(dir + "/initial_mask_" + view_tag(v) + ".pgm", grid);
    for (std::size_t i = 0; i < k; ++i) grid.data[i] = mod.refined.data[v * k + i];
    save_pgm_mask(dir + "/refined_mask_" + view_tag(v) + ".pgm", grid);
  }
}

void dump_depths(const std::string& dir, const std::string& stem,
                 const std::vector<Tensor>& depths) {
  std::filesystem::create_directories(dir);
  for (std::size_t v = 0; v < depths.size(); ++v) {
    save_tensor(dir + "/" + stem + "_" + view_tag(v) + ".hdt", depths[v]);
    const Tensor& d = depths[v];
    double lo = d.data[0], hi = d.data[0];
    for (double x : d.data) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    Tensor norm = d;
    const double span = hi - lo;
    for (double& x : norm.data) x = span > 0.0 ? (x - lo) / span : 0.0;
    save_pgm_gray(dir + "/" + stem + "_" + view_tag(v) + ".pgm", norm);
  }
}

double depth_abs_rel(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt) {
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t v = 0; v < pred.size(); ++v) {
    for (std::size_t i = 0; i < pred[v].size(); ++i) {
      acc += std::abs(pred[v].data[i] - gt[v].data[i]) / gt[v].data[i];
      ++count;
    }
  }
  return count ? acc / static_cast<double>(count) : 0.0;
}

std::vector<Tensor> depths_at_scene_resolution(const std::vector<Tensor>& high,
                                               const SceneConfig& scene) {
  std::vector<Tensor> low;
  low.reserve(high.size());
  for (const Tensor& d : high) {
    if (d.shape[0] % scene.height != 0 || d.shape[1] % scene.width != 0)
      throw ConfigError("high-res depth does not tile the scene resolution");
    const std::size_t f = d.shape[0] / scene.height;
    if (scene.width * f != d.shape[1])
      throw ConfigError("high-res depth aspect does not match the scene");
    low.push_back(f == 1 ? d : downsample_mean(d, f));
  }
  return low;
}

json detection_json(const Tensor& saliency, const Tensor& gt) {
  json det;
  try {
    det["auc"] = detection_score(saliency, gt);
    det["status"] = "ok";
  } catch (const NumericError&) {
    det["auc"] = nullptr;
    det["status"] = "not-applicable (single-class ground truth)";
  }
  return det;
}

}  // namespace

Tensor downsample_mean(const Tensor& img, std::size_t factor) {
  if (img.rank() != 2) throw ShapeError("downsample_mean expects [h, w], got " + shape_str(img.shape));
  if (factor == 0 || img.shape[0] % factor != 0 || img.shape[1] % factor != 0)
    throw ConfigError("downsample_mean factor must divide both extents");
  const std::size_t h = img.shape[0] / factor, w = img.shape[1] / factor;
  Tensor out({h, w});
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < factor; ++i)
        for (std::size_t j = 0; j < factor; ++j) acc += img(r * factor + i, c * factor + j);
      out(r, c) = acc * inv;
    }
  return out;
}

std::pair<std::size_t, std::size_t> config_guidance_strides(const StackConfig& cfg) {
  const std::size_t feature_grid = cfg.coarse_grid_h() * cfg.upsample_factor();
  return choose_guidance_strides(cfg.high_height, feature_grid);
}

std::uint64_t count_upsampler_conv_flops(const StackConfig& cfg, std::size_t stride1,
                                         std::size_t stride2) {
  const auto conv_out = [](std::size_t in, std::size_t stride) {
    return (in + 2 - 3) / stride + 1;  // 3x3 kernel, padding 1
  };
  const auto conv_cost = [](std::size_t oh, std::size_t ow, std::size_t cin, std::size_t cout) {
    return static_cast<std::uint64_t>(oh) * ow * 9 * cin * cout;
  };
  const std::size_t c = cfg.channels;
  const std::size_t g1h = conv_out(cfg.high_height, stride1), g1w = conv_out(cfg.high_width, stride1);
  const std::size_t g2h = conv_out(g1h, stride2), g2w = conv_out(g1w, stride2);
  const std::size_t fh = cfg.coarse_grid_h() * cfg.upsample_factor();
  const std::size_t fw = cfg.coarse_grid_w() * cfg.upsample_factor();
  std::uint64_t total = 0;
  total += conv_cost(g1h, g1w, 3, kGuidanceHidden);
  total += conv_cost(g2h, g2w, kGuidanceHidden, c);
  total += conv_cost(fh, fw, c, c);        // feature refinement after bilinear
  total += conv_cost(fh, fw, 2 * c, c);    // fusion conv 1 on the concatenation
  total += conv_cost(fh, fw, c, c);        // fusion conv 2
  return total;
}

PassOutput run_pass(const std::vector<Tensor>& low_views, const std::vector<Tensor>& hr_views,
                    const StackParams& sp, const StackConfig& sc, bool learned,
                    const UpsamplerParams* up, const KeyGate* gate) {
  if (learned && up == nullptr)
    throw UsageError("run_pass: learned mode requires upsampler params");
  if (low_views.size() != hr_views.size())
    throw ShapeError("run_pass: low-res and high-res view counts differ");
  PassOutput out;
  out.coarse = run_coarse(low_views, sp, sc, gate, &out.coarse_flops);
  out.features_hr.reserve(low_views.size());
  for (std::size_t v = 0; v < low_views.size(); ++v) {
    if (learned) {
      out.features_hr.push_back(upsample(out.coarse.features[v], hr_views[v], *up));
    } else {
      out.features_hr.push_back(bilinear_upsample(out.coarse.features[v], sc.upsample_factor()));
    }
  }
  out.refine = run_refiner(out.features_hr, sp, sc, &out.refine_flops);
  return out;
}

std::vector<UpsampleTask> build_upsample_tasks(const RunConfig& cfg) {
  const StackParams sp = init_stack_params(cfg.stack);
  const std::size_t gh = cfg.stack.coarse_grid_h(), gw = cfg.stack.coarse_grid_w();
  const std::size_t c = cfg.stack.channels;
  std::vector<UpsampleTask> tasks;
  tasks.reserve(cfg.train.task_scenes * cfg.scene.n_views);
  for (std::size_t i = 0; i < cfg.train.task_scenes; ++i) {
    // Task scenes draw from a seed range disjoint from the evaluation suite's
    // small seeds: base 1000, shifted per training seed.
    const std::uint64_t scene_seed = cfg.train.hyper.seed * 100000 + 1000 + i;
    const SceneBundle low = generate_scene(cfg.scene, scene_seed);
    const SceneBundle high = render_at_resolution(cfg.scene, scene_seed, cfg.stack.high_height,
                                                  cfg.stack.high_width);
    const std::size_t tg = gh * cfg.stack.upsample_factor();
    for (std::size_t v = 0; v < low.views.size(); ++v) {
      UpsampleTask task;
      task.f_coarse = reshape(patchify(low.views[v], cfg.stack.patch, sp.patch_embed,
                                       cfg.stack.pos_amplitude),
                              {gh, gw, c});
      task.target = reshape(patchify(high.views[v], cfg.stack.patch, sp.patch_embed,
                                     cfg.stack.pos_amplitude),
                            {tg, gw * cfg.stack.upsample_factor(), c});
      task.guidance = high.views[v];
      tasks.push_back(std::move(task));
    }
  }
  return tasks;
}

json cmd_generate(const RunConfig& cfg) {
  const SceneBundle bundle = generate_scene(cfg.scene, cfg.seed);
  save_scene(cfg.out_dir, bundle);
  json report = report_skeleton("generate", cfg);
  report["scene"] = {{"dir", cfg.out_dir},
                     {"views", bundle.views.size()},
                     {"tokens_per_view", bundle.singularity_masks.empty()
                                             ? 0
                                             : bundle.singularity_masks[0].size()},
                     {"singular_tokens", static_cast<std::uint64_t>(mask_sum(gt_token_mask(bundle)))}};
  return report;
}

json cmd_run(const RunConfig& cfg) {
  Stopwatch watch;
  json report = report_skeleton("run", cfg);
  json timing;

  const SceneBundle scene = obtain_scene(cfg);
  check_scene_stack(scene.config, cfg.stack);
  const SceneBundle high = render_at_resolution(scene.config, scene.seed, cfg.stack.high_height,
                                                cfg.stack.high_width);
  const StackParams sp = init_stack_params(cfg.stack);
  const bool learned = cfg.upsampler_mode == "learned";
  UpsamplerParams up;
  if (learned) up = load_learned(cfg);
  timing["setup"] = watch.lap();

  const PassOutput pass1 = run_pass(scene.views, high.views, sp, cfg.stack, learned,
                                    learned ? &up : nullptr, nullptr);
  timing["pass1"] = watch.lap();

  report["flops"] = {{"pass1_coarse", flops_json(pass1.coarse_flops)},
                     {"pass1_refine", flops_json(pass1.refine_flops)}};
  const auto strides = config_guidance_strides(cfg.stack);
  report["flops"]["upsampler_convs_per_view"] =
      learned ? count_upsampler_conv_flops(cfg.stack, strides.first, strides.second) : 0;

  const Tensor gt = gt_token_mask(scene);
  const std::vector<Tensor>* final_depths = &pass1.refine.depths;
  PassOutput pass2;
  if (cfg.gating) {
    const std::vector<Tensor> depths_low =
        depths_at_scene_resolution(pass1.refine.depths, scene.config);
    const AnomalyResult mod =
        run_modulation(pass1.coarse.trace, scene, depths_low, cfg.modulation);
    timing["modulation"] = watch.lap();

    const KeyGate gate = make_key_gate(mod.refined, mod.gate_layers);
    pass2 = run_pass(scene.views, high.views, sp, cfg.stack, learned,
                     learned ? &up : nullptr, &gate);
    final_depths = &pass2.refine.depths;
    timing["pass2"] = watch.lap();

    report["flops"]["pass2_coarse"] = flops_json(pass2.coarse_flops);
    report["flops"]["pass2_refine"] = flops_json(pass2.refine_flops);
    report["detection"] = detection_json(mod.saliency, gt);
    report["masks"] = mask_stats_json(mod, gt);
    dump_modulation(cfg.out_dir + "/modulation", mod, cfg.stack);
    dump_depths(cfg.out_dir, "depth_pass1", pass1.refine.depths);
  } else {
    report["detection"] = {{"status", "skipped (gating off)"}};
  }

  dump_depths(cfg.out_dir, "depth_final", *final_depths);
  report["depth"] = {{"abs_rel_final", depth_abs_rel(*final_depths, high.depths)},
                     {"abs_rel_pass1", depth_abs_rel(pass1.refine.depths, high.depths)},
                     {"height", cfg.stack.high_height},
                     {"width", cfg.stack.high_width}};
  timing["io"] = watch.lap();

  report["timing"] = timing;
  write_report(cfg.out_dir, report);
  return report;
}

json cmd_train_upsampler(const RunConfig& cfg) {
  Stopwatch watch;
  json report = report_skeleton("train-upsampler", cfg);
  json timing;

  const std::vector<UpsampleTask> tasks = build_upsample_tasks(cfg);
  timing["tasks"] = watch.lap();

  const auto strides = config_guidance_strides(cfg.stack);
  const UpsamplerParams initial = init_upsampler_params(cfg.stack.channels, cfg.train.hyper.seed,
                                                        strides.first, strides.second);
  const TrainResult result = train_upsampler(tasks, cfg.train.hyper, initial);
  timing["train"] = watch.lap();

  const std::string ckpt = checkpoint_path(cfg);
  save_upsampler_checkpoint(ckpt, result.params);

  std::vector<UpsampleTask> holdout;
  for (std::size_t idx : result.holdout_indices) holdout.push_back(tasks[idx]);
  const double bilinear = baseline_mse(holdout);
  const double learned = upsampler_mse(tasks, result.holdout_indices, result.params);

  json curve = {{"columns", {"step", "train_loss", "holdout_loss"}},
                {"rows", json::array()}};
  for (const LossPoint& p : result.curve)
    curve["rows"].push_back({p.step, p.train_loss, p.holdout_loss});
  report["training"] = {
      {"tasks", tasks.size()},
      {"train_tasks", result.train_indices.size()},
      {"holdout_tasks", result.holdout_indices.size()},
      {"steps", cfg.train.hyper.steps},
      {"holdout_mse_learned", learned},
      {"holdout_mse_bilinear", bilinear},
      {"holdout_ratio", bilinear > 0.0 ? learned / bilinear : 0.0},
      {"checkpoint", ckpt},
      {"guidance_strides", {strides.first, strides.second}},
      {"curve", curve}};
  timing["evaluate"] = watch.lap();

  report["timing"] = timing;
  write_report(cfg.out_dir, report);
  return report;
}

json cmd_bench(const RunConfig& cfg, const std::string& grid_spec) {
  Stopwatch watch;
  json report = report_skeleton("bench", cfg);
  json timing;

  // Parse "K=16,64,256;N=2,4,8" (order of the two groups is free).
  std::vector<std::size_t> k_list, n_list;
  {
    std::size_t pos = 0;
    const std::string& spec = grid_spec;
    while (pos < spec.size()) {
      std::size_t end = spec.find(';', pos);
      if (end == std::string::npos) end = spec.size();
      const std::string part = spec.substr(pos, end - pos);
      const std::size_t eq = part.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError("bench grid: expected NAME=v1,v2,..., got \"" + part + "\"");
      const std::string name = part.substr(0, eq);
      std::vector<std::size_t>* target = nullptr;
      if (name == "K") target = &k_list;
      else if (name == "N") target = &n_list;
      else throw ConfigError("bench grid: unknown axis \"" + name + "\" (expected K or N)");
      std::size_t vpos = eq + 1;
      while (vpos <= part.size()) {
        std::size_t vend = part.find(',', vpos);
        if (vend == std::string::npos) vend = part.size();
        const std::string tok = part.substr(vpos, vend - vpos);
        try {
          std::size_t consumed = 0;
          const unsigned long long v = std::stoull(tok, &consumed);
          if (consumed != tok.size() || v == 0) throw std::invalid_argument(tok);
          target->push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
          throw ConfigError("bench grid: bad value \"" + tok + "\" for axis " + name);
        }
        vpos = vend + 1;
      }
      pos = end + 1;
    }
  }
  if (k_list.empty() || n_list.empty())
    throw ConfigError("bench grid must list both K and N values");

  json table = {{"columns",
                 {"n", "k", "qk_predicted", "qk_measured", "av_predicted", "av_measured",
                  "proj_predicted", "proj_measured", "total_predicted", "total_measured",
                  "match", "seconds"}},
                {"rows", json::array()}};
  for (const std::size_t n : n_list) {
    for (const std::size_t k : k_list) {
      const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(k))));
      if (g * g != k)
        throw ConfigError("bench grid: K = " + std::to_string(k) + " is not a square token count");
      StackConfig sc = cfg.stack;
      sc.low_height = sc.low_width = g * sc.patch;
      sc.high_height = sc.high_width = 2 * sc.low_height;
      const StackParams sp = init_stack_params(sc);
      std::vector<Tensor> views;
      Rng rng(hash_keys({cfg.seed, 0xBE2Cull, n, k}));
      for (std::size_t v = 0; v < n; ++v) {
        Tensor img({sc.low_height, sc.low_width, 3});
        for (double& x : img.data) x = rng.uniform(0.0, 1.0);
        views.push_back(std::move(img));
      }
      const FlopCount predicted =
          count_attention_flops(n, k, sc.channels, sc.depth_coarse, 0);
      FlopCount measured;
      Stopwatch cell;
      run_coarse(views, sp, sc, nullptr, &measured);
      const double seconds = cell.lap();
      table["rows"].push_back({n, k, predicted.qk_flops, measured.qk_flops,
                               predicted.av_flops, measured.av_flops, predicted.proj_flops,
                               measured.proj_flops, predicted.total(), measured.total(),
                               predicted == measured, seconds});
    }
  }
  report["scaling"] = table;
  timing["grid"] = watch.lap();

  // Dual-branch budget at the configured geometry versus one flat global
  // stack of the same total depth on the high-resolution token grid.
  {
    const StackConfig& sc = cfg.stack;
    const std::size_t n = cfg.scene.n_views;
    const std::size_t k_high = (sc.high_height / sc.patch) * (sc.high_width / sc.patch);
    const FlopCount coarse =
        count_attention_flops(n, sc.tokens_per_view(), sc.channels, sc.depth_coarse, 0);
    const FlopCount refine = count_attention_flops(n, sc.refine_tokens_per_view(), sc.channels,
                                                   sc.depth_refine, sc.refine_window);
    const FlopCount flat = count_attention_flops(n, k_high, sc.channels,
                                                 sc.depth_coarse + sc.depth_refine, 0);
    const auto strides = config_guidance_strides(sc);
    const std::uint64_t convs =
        static_cast<std::uint64_t>(n) * count_upsampler_conv_flops(sc, strides.first, strides.second);
    const std::uint64_t dual_attention = coarse.total() + refine.total();
    report["dual_vs_flat"] = {
        {"coarse_attention", coarse.total()},
        {"refiner_attention", refine.total()},
        {"dual_attention_total", dual_attention},
        {"upsampler_conv_total", convs},
        {"dual_total_with_convs", dual_attention + convs},
        {"flat_attention_total", flat.total()},
        {"flat_depth", sc.depth_coarse + sc.depth_refine},
        {"flat_tokens_per_view", k_high},
        {"attention_ratio", static_cast<double>(dual_attention) / static_cast<double>(flat.total())},
        {"ratio_with_convs",
         static_cast<double>(dual_attention + convs) / static_cast<double>(flat.total())}};
  }
  timing["dual_vs_flat"] = watch.lap();

  report["timing"] = timing;
  write_report(cfg.out_dir, report);
  return report;
}

json cmd_detect(const RunConfig& cfg) {
  Stopwatch watch;
  json report = report_skeleton("detect", cfg);
  json timing;

  const SceneBundle scene = obtain_scene(cfg);
  check_scene_stack(scene.config, cfg.stack);
  const SceneBundle high = render_at_resolution(scene.config, scene.seed, cfg.stack.high_height,
                                                cfg.stack.high_width);
  const StackParams sp = init_stack_params(cfg.stack);
  const bool learned = cfg.upsampler_mode == "learned";
  UpsamplerParams up;
  if (learned) up = load_learned(cfg);
  timing["setup"] = watch.lap();

  const PassOutput pass1 = run_pass(scene.views, high.views, sp, cfg.stack, learned,
                                    learned ? &up : nullptr, nullptr);
  timing["pass1"] = watch.lap();

  const std::vector<Tensor> depths_low =
      depths_at_scene_resolution(pass1.refine.depths, scene.config);
  const AnomalyResult mod = run_modulation(pass1.coarse.trace, scene, depths_low, cfg.modulation);
  timing["modulation"] = watch.lap();

  const Tensor gt = gt_token_mask(scene);
  report["detection"] = detection_json(mod.saliency, gt);
  report["masks"] = mask_stats_json(mod, gt);
  report["flops"] = {{"pass1_coarse", flops_json(pass1.coarse_flops)},
                     {"pass1_refine", flops_json(pass1.refine_flops)}};
  dump_modulation(cfg.out_dir, mod, cfg.stack);
  timing["io"] = watch.lap();

  report["timing"] = timing;
  write_report(cfg.out_dir, report);
  return report;
}

}  // namespace hdgt
