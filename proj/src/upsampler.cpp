#include "hdgt/upsampler.hpp"

#include <cmath>
#include <string>

#include "hdgt/autodiff.hpp"
#include "hdgt/errors.hpp"
#include "hdgt/rng.hpp"

namespace hdgt {

namespace {

void fill_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

void check_kernel(const Tensor& k, std::size_t ci, std::size_t co, const char* name) {
  const std::vector<std::size_t> want = {3, 3, ci, co};
  if (k.shape != want)
    throw ConfigError(std::string("upsampler ") + name + " kernel has shape " +
                      shape_str(k.shape) + ", expected " + shape_str(want));
  for (double v : k.data)
    if (!std::isfinite(v))
      throw NumericError(std::string("upsampler ") + name + " kernel is not finite");
}

void check_bias(const Tensor& b, std::size_t c, const char* name) {
  if (b.shape != std::vector<std::size_t>{c})
    throw ConfigError(std::string("upsampler ") + name + " bias has shape " +
                      shape_str(b.shape) + ", expected [" + std::to_string(c) + "]");
  for (double v : b.data)
    if (!std::isfinite(v))
      throw NumericError(std::string("upsampler ") + name + " bias is not finite");
}

// The upsample scale implied by a task's feature/target shapes.
std::size_t task_scale(const UpsampleTask& task) {
  if (task.f_coarse.shape.size() != 3 || task.target.shape.size() != 3)
    throw ConfigError("upsample task tensors must be rank 3");
  const std::size_t h = task.f_coarse.shape[0], w = task.f_coarse.shape[1];
  const std::size_t th = task.target.shape[0], tw = task.target.shape[1];
  if (h == 0 || w == 0 || th % h != 0 || tw % w != 0 || th / h != tw / w)
    throw ConfigError("target shape " + shape_str(task.target.shape) +
                      " is not an integral upsample of " + shape_str(task.f_coarse.shape));
  if (task.f_coarse.shape[2] != task.target.shape[2])
    throw ConfigError("task feature channels " + shape_str(task.f_coarse.shape) +
                      " do not match target " + shape_str(task.target.shape));
  return th / h;
}

double raw_mse(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

}  // namespace

UpsamplerParams init_upsampler_params(std::size_t channels, std::uint64_t seed,
                                      std::size_t guidance_stride1,
                                      std::size_t guidance_stride2) {
  if (channels == 0) throw ConfigError("upsampler channels must be positive");
  if (guidance_stride1 == 0 || guidance_stride2 == 0)
    throw ConfigError("guidance strides must be positive");
  UpsamplerParams p;
  p.channels = channels;
  p.guidance_stride1 = guidance_stride1;
  p.guidance_stride2 = guidance_stride2;
  Rng rng(hash_keys({seed, 0x0B5Aull}));
  const std::size_t c = channels, g = kGuidanceHidden;
  p.g1_kernel = Tensor({3, 3, 3, g});
  p.g1_bias = Tensor(std::vector<std::size_t>{g});
  p.g2_kernel = Tensor({3, 3, g, c});
  p.g2_bias = Tensor(std::vector<std::size_t>{c});
  p.feat_kernel = Tensor({3, 3, c, c});
  p.feat_bias = Tensor(std::vector<std::size_t>{c});
  p.fuse1_kernel = Tensor({3, 3, 2 * c, c});
  p.fuse1_bias = Tensor(std::vector<std::size_t>{c});
  p.fuse2_kernel = Tensor({3, 3, c, c});
  p.fuse2_bias = Tensor(std::vector<std::size_t>{c});
  fill_uniform(p.g1_kernel, 9 * 3, rng);
  fill_uniform(p.g2_kernel, 9 * g, rng);
  fill_uniform(p.feat_kernel, 9 * c, rng);
  fill_uniform(p.fuse1_kernel, 9 * 2 * c, rng);
  fill_uniform(p.fuse2_kernel, 9 * c, rng);
  for (Tensor* t : upsampler_param_list(p)) t->requires_grad = true;
  return p;
}

void validate_upsampler_params(const UpsamplerParams& p) {
  const std::size_t c = p.channels, g = kGuidanceHidden;
  if (c == 0) throw ConfigError("upsampler channels must be positive");
  if (p.guidance_stride1 == 0 || p.guidance_stride2 == 0)
    throw ConfigError("guidance strides must be positive");
  check_kernel(p.g1_kernel, 3, g, "guidance1");
  check_bias(p.g1_bias, g, "guidance1");
  check_kernel(p.g2_kernel, g, c, "guidance2");
  check_bias(p.g2_bias, c, "guidance2");
  check_kernel(p.feat_kernel, c, c, "feat");
  check_bias(p.feat_bias, c, "feat");
  check_kernel(p.fuse1_kernel, 2 * c, c, "fuse1");
  check_bias(p.fuse1_bias, c, "fuse1");
  check_kernel(p.fuse2_kernel, c, c, "fuse2");
  check_bias(p.fuse2_bias, c, "fuse2");
}

std::vector<Tensor*> upsampler_param_list(UpsamplerParams& p) {
  return {&p.g1_kernel, &p.g1_bias, &p.g2_kernel,    &p.g2_bias,    &p.feat_kernel,
          &p.feat_bias, &p.fuse1_kernel, &p.fuse1_bias, &p.fuse2_kernel, &p.fuse2_bias};
}

std::pair<std::size_t, std::size_t> choose_guidance_strides(std::size_t in_extent,
                                                            std::size_t out_extent) {
  if (in_extent == 0 || out_extent == 0)
    throw ConfigError("guidance stride search requires positive extents");
  for (std::size_t s1 = 1; s1 <= 8; ++s1) {
    const std::size_t padded1 = in_extent + 2 - 3;
    if (padded1 % s1 != 0) continue;
    const std::size_t mid = padded1 / s1 + 1;
    for (std::size_t s2 = 1; s2 <= 8; ++s2) {
      const std::size_t padded2 = mid + 2 - 3;
      if (padded2 % s2 != 0) continue;
      if (padded2 / s2 + 1 == out_extent) return {s1, s2};
    }
  }
  throw ConfigError("no guidance conv strides map extent " + std::to_string(in_extent) +
                    " to " + std::to_string(out_extent));
}

Tensor guidance_features(const Tensor& i_hr, const UpsamplerParams& p) {
  if (i_hr.shape.size() != 3)
    throw ConfigError("guidance image must be [H, W, 3], got " + shape_str(i_hr.shape));
  if (i_hr.shape[2] != p.g1_kernel.shape[2])
    throw ConfigError("guidance image channels " + shape_str(i_hr.shape) +
                      " do not match the guidance kernel " + shape_str(p.g1_kernel.shape));
  const Tensor hidden =
      relu(add_bias(conv2d(i_hr, p.g1_kernel, p.guidance_stride1, 1), p.g1_bias));
  return add_bias(conv2d(hidden, p.g2_kernel, p.guidance_stride2, 1), p.g2_bias);
}

Tensor upsample_coarse(const Tensor& f_coarse, std::size_t s, const UpsamplerParams& p) {
  if (s < 1) throw ConfigError("upsample scale must be >= 1");
  const Tensor interp = bilinear_upsample(f_coarse, s);
  return relu(add_bias(conv2d(interp, p.feat_kernel, 1, 1), p.feat_bias));
}

Tensor fuse(const Tensor& f_guide, const Tensor& f_interp, const UpsamplerParams& p) {
  if (f_guide.shape != f_interp.shape)
    throw ShapeError("fuse inputs must share a shape, got " + shape_str(f_guide.shape) +
                     " vs " + shape_str(f_interp.shape));
  const Tensor cat = concat_last(f_guide, f_interp);
  const Tensor hidden = relu(add_bias(conv2d(cat, p.fuse1_kernel, 1, 1), p.fuse1_bias));
  return add_bias(conv2d(hidden, p.fuse2_kernel, 1, 1), p.fuse2_bias);
}

Tensor upsample(const Tensor& f_coarse, const Tensor& i_hr, const UpsamplerParams& p) {
  if (f_coarse.shape.size() != 3)
    throw ConfigError("coarse features must be [h, w, c], got " + shape_str(f_coarse.shape));
  if (f_coarse.shape[2] != p.channels)
    throw ConfigError("coarse feature channels " + shape_str(f_coarse.shape) +
                      " do not match the upsampler (" + std::to_string(p.channels) + ")");
  const Tensor guide = hdgt::guidance_features(i_hr, p);
  const std::size_t gh = guide.shape[0], gw = guide.shape[1];
  const std::size_t h = f_coarse.shape[0], w = f_coarse.shape[1];
  if (gh % h != 0 || gw % w != 0 || gh / h != gw / w)
    throw ConfigError("guidance grid " + shape_str(guide.shape) +
                      " is not an integral upsample of the coarse grid " +
                      shape_str(f_coarse.shape));
  const std::size_t s = gh / h;
  return fuse(guide, upsample_coarse(f_coarse, s, p), p);
}

double baseline_mse(const std::vector<UpsampleTask>& tasks) {
  if (tasks.empty()) throw ConfigError("baseline_mse requires at least one task");
  double acc = 0.0;
  for (const UpsampleTask& task : tasks) {
    const std::size_t s = task_scale(task);
    acc += raw_mse(bilinear_upsample(task.f_coarse, s), task.target);
  }
  return acc / static_cast<double>(tasks.size());
}

double upsampler_mse(const std::vector<UpsampleTask>& tasks,
                     const std::vector<std::size_t>& indices, const UpsamplerParams& p) {
  if (indices.empty()) throw ConfigError("upsampler_mse requires at least one task index");
  double acc = 0.0;
  for (std::size_t i : indices)
    acc += raw_mse(upsample(tasks[i].f_coarse, tasks[i].guidance, p), tasks[i].target);
  return acc / static_cast<double>(indices.size());
}

TrainResult train_upsampler(const std::vector<UpsampleTask>& tasks, const TrainHyper& hyper,
                            const UpsamplerParams& initial) {
  if (tasks.size() < 2) throw ConfigError("training requires at least two tasks");
  if (hyper.batch == 0) throw ConfigError("batch size must be positive");
  if (!(hyper.holdout_frac > 0.0 && hyper.holdout_frac < 1.0))
    throw ConfigError("holdout fraction must lie in (0, 1)");
  validate_upsampler_params(initial);
  for (const UpsampleTask& task : tasks) task_scale(task);

  // Deterministic shuffle, then carve the held-out tail.
  std::vector<std::size_t> order(tasks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(hash_keys({hyper.seed, 0x5917ull}));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[split_rng.below(i)]);
  std::size_t holdout_count =
      static_cast<std::size_t>(std::floor(hyper.holdout_frac * static_cast<double>(tasks.size())));
  holdout_count = std::max<std::size_t>(1, std::min(holdout_count, tasks.size() - 1));

  TrainResult result;
  result.holdout_indices.assign(order.begin(), order.begin() + holdout_count);
  result.train_indices.assign(order.begin() + holdout_count, order.end());
  result.params = initial;
  for (Tensor* t : upsampler_param_list(result.params)) t->requires_grad = true;

  // Divergence reports carry the recorded losses so the failure is
  // diagnosable from the error message alone.
  auto loss_trace = [&result](std::size_t step) {
    std::string trace = "training loss is not finite at step " + std::to_string(step) +
                        "; loss trace:";
    for (const LossPoint& p : result.curve)
      trace += " step " + std::to_string(p.step) + " train " + std::to_string(p.train_loss) +
               " holdout " + std::to_string(p.holdout_loss) + ";";
    return trace;
  };
  auto record = [&](std::size_t step) {
    LossPoint point;
    point.step = step;
    point.train_loss = upsampler_mse(tasks, result.train_indices, result.params);
    point.holdout_loss = upsampler_mse(tasks, result.holdout_indices, result.params);
    if (!std::isfinite(point.train_loss) || !std::isfinite(point.holdout_loss)) {
      result.curve.push_back(point);
      throw NumericError(loss_trace(step));
    }
    result.curve.push_back(point);
  };
  record(0);

  Rng batch_rng(hash_keys({hyper.seed, 0xBA7Cull}));
  std::vector<Tensor*> leaves = upsampler_param_list(result.params);
  for (std::size_t step = 1; step <= hyper.steps; ++step) {
    TapeScope scope;
    Tensor loss;
    for (std::size_t b = 0; b < hyper.batch; ++b) {
      const std::size_t idx = result.train_indices[batch_rng.below(result.train_indices.size())];
      Tensor task_loss = mse(upsample(tasks[idx].f_coarse, tasks[idx].guidance, result.params),
                             tasks[idx].target);
      loss = (b == 0) ? std::move(task_loss) : add(loss, task_loss);
    }
    loss = scale(loss, 1.0 / static_cast<double>(hyper.batch));
    if (!std::isfinite(loss.data[0])) throw NumericError(loss_trace(step));
    const GradientMap grads = scope.tape().backward(loss);
    for (Tensor* leaf : leaves) {
      const Tensor g = grads.at(*leaf);
      for (std::size_t i = 0; i < leaf->data.size(); ++i)
        leaf->data[i] -= hyper.lr * g.data[i];
    }
    if (step % 100 == 0 || step == hyper.steps) record(step);
  }
  return result;
}

ParamStore upsampler_params_to_store(const UpsamplerParams& p) {
  ParamStore store;
  store.emplace("upsampler.guidance1.kernel", p.g1_kernel);
  store.emplace("upsampler.guidance1.bias", p.g1_bias);
  store.emplace("upsampler.guidance2.kernel", p.g2_kernel);
  store.emplace("upsampler.guidance2.bias", p.g2_bias);
  store.emplace("upsampler.feat.kernel", p.feat_kernel);
  store.emplace("upsampler.feat.bias", p.feat_bias);
  store.emplace("upsampler.fuse1.kernel", p.fuse1_kernel);
  store.emplace("upsampler.fuse1.bias", p.fuse1_bias);
  store.emplace("upsampler.fuse2.kernel", p.fuse2_kernel);
  store.emplace("upsampler.fuse2.bias", p.fuse2_bias);
  return store;
}

UpsamplerParams upsampler_params_from_store(const ParamStore& store, std::size_t channels,
                                            std::size_t guidance_stride1,
                                            std::size_t guidance_stride2) {
  UpsamplerParams p;
  p.channels = channels;
  p.guidance_stride1 = guidance_stride1;
  p.guidance_stride2 = guidance_stride2;
  auto fetch = [&store](const std::string& name) -> const Tensor& {
    auto it = store.find(name);
    if (it == store.end()) throw ConfigError("checkpoint is missing parameter " + name);
    return it->second;
  };
  p.g1_kernel = fetch("upsampler.guidance1.kernel");
  p.g1_bias = fetch("upsampler.guidance1.bias");
  p.g2_kernel = fetch("upsampler.guidance2.kernel");
  p.g2_bias = fetch("upsampler.guidance2.bias");
  p.feat_kernel = fetch("upsampler.feat.kernel");
  p.feat_bias = fetch("upsampler.feat.bias");
  p.fuse1_kernel = fetch("upsampler.fuse1.kernel");
  p.fuse1_bias = fetch("upsampler.fuse1.bias");
  p.fuse2_kernel = fetch("upsampler.fuse2.kernel");
  p.fuse2_bias = fetch("upsampler.fuse2.bias");
  validate_upsampler_params(p);
  for (Tensor* t : upsampler_param_list(p)) t->requires_grad = true;
  return p;
}

void save_upsampler_checkpoint(const std::string& dir, const UpsamplerParams& p) {
  validate_upsampler_params(p);
  save_checkpoint(dir, upsampler_params_to_store(p),
                  {{"channels", {p.channels}},
                   {"guidance_strides", {p.guidance_stride1, p.guidance_stride2}}});
}

UpsamplerParams load_upsampler_checkpoint(const std::string& dir) {
  const ParamStore store = load_checkpoint(dir);
  const auto extras = load_checkpoint_extras(dir);
  auto need = [&extras, &dir](const std::string& key) {
    auto it = extras.find(key);
    if (it == extras.end())
      throw ConfigError("upsampler checkpoint " + dir + " lacks extra field " + key);
    return it->second;
  };
  const auto channels = need("channels");
  const auto strides = need("guidance_strides");
  if (channels.size() != 1 || strides.size() != 2)
    throw ConfigError("upsampler checkpoint " + dir + " has malformed extras");
  return upsampler_params_from_store(store, channels[0], strides[0], strides[1]);
}

}  // namespace hdgt
