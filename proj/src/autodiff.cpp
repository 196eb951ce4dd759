#include "hdgt/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>

#include "hdgt/errors.hpp"

namespace hdgt {

namespace {
std::atomic<std::uint64_t> g_epoch_counter{1};
thread_local GradTape* g_active_tape = nullptr;
}  // namespace

GradTape* active_tape() { return g_active_tape; }

TapeScope::TapeScope() : prev_(g_active_tape) { g_active_tape = &tape_; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

GradTape::GradTape() : epoch_(g_epoch_counter.fetch_add(1)) {}

bool GradTape::tracks(const Tensor& t) const {
  return t.node >= 0 && t.tape_epoch == epoch_ &&
         static_cast<std::size_t>(t.node) < nodes_.size();
}

std::int64_t GradTape::ensure_leaf(const Tensor& t) {
  if (tracks(t)) return t.node;
  Node n;
  n.shape = t.shape;
  nodes_.push_back(std::move(n));
  t.node = static_cast<std::int64_t>(nodes_.size() - 1);
  t.tape_epoch = epoch_;
  return t.node;
}

void GradTape::record(const std::vector<const Tensor*>& inputs, Tensor& out,
                      BackwardFn fn) {
  Node n;
  n.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    if (tracks(*in) || in->requires_grad) {
      n.inputs.push_back(ensure_leaf(*in));
    } else {
      n.inputs.push_back(-1);
    }
  }
  n.fn = std::move(fn);
  n.shape = out.shape;
  nodes_.push_back(std::move(n));
  out.node = static_cast<std::int64_t>(nodes_.size() - 1);
  out.tape_epoch = epoch_;
}

GradientMap GradTape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw UsageError("backward: loss must be a scalar (size-1) tensor, got shape " +
                     shape_str(loss.shape));
  }
  if (!tracks(loss)) {
    throw UsageError("backward: loss is not on the active tape");
  }
  std::vector<Tensor> grads(nodes_.size());
  std::vector<char> present(nodes_.size(), 0);
  const auto seed = static_cast<std::size_t>(loss.node);
  grads[seed] = Tensor({1}, {1.0});
  present[seed] = 1;

  for (std::size_t ip1 = seed + 1; ip1 > 0; --ip1) {
    const std::size_t i = ip1 - 1;
    if (!present[i] || !nodes_[i].fn) continue;
    std::vector<Tensor> in_grads = nodes_[i].fn(grads[i]);
    if (in_grads.size() != nodes_[i].inputs.size()) {
      throw UsageError("backward: op returned wrong number of input gradients");
    }
    for (std::size_t j = 0; j < in_grads.size(); ++j) {
      const std::int64_t tgt = nodes_[i].inputs[j];
      if (tgt < 0) continue;
      auto t = static_cast<std::size_t>(tgt);
      if (!present[t]) {
        grads[t] = std::move(in_grads[j]);
        present[t] = 1;
      } else {
        Tensor& acc = grads[t];
        const Tensor& g = in_grads[j];
        for (std::size_t k = 0; k < acc.size(); ++k) acc.data[k] += g.data[k];
      }
    }
  }

  GradientMap out;
  out.epoch_ = epoch_;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (present[i]) out.grads_.emplace(static_cast<std::int64_t>(i), std::move(grads[i]));
  }
  return out;
}

Tensor GradientMap::at(const Tensor& t) const {
  if (t.node >= 0 && t.tape_epoch == epoch_) {
    auto it = grads_.find(t.node);
    if (it != grads_.end()) return it->second;
  }
  return zeros_like(t);
}

bool GradientMap::contains(const Tensor& t) const {
  return t.node >= 0 && t.tape_epoch == epoch_ && grads_.count(t.node) > 0;
}

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  GradTape* tape = active_tape();
  if (!tape) return false;
  for (const Tensor* in : inputs) {
    if (in->requires_grad || tape->tracks(*in)) return true;
  }
  return false;
}

void record_op(std::initializer_list<const Tensor*> inputs, Tensor& out, BackwardFn fn) {
  active_tape()->record(std::vector<const Tensor*>(inputs), out, std::move(fn));
}

}  // namespace detail

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double eps) {
  Tensor g = zeros_like(x);
  Tensor probe = x;
  probe.requires_grad = false;
  probe.node = -1;
  probe.tape_epoch = 0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe.data[i];
    probe.data[i] = saved + eps;
    const double fp = f(probe);
    probe.data[i] = saved - eps;
    const double fm = f(probe);
    probe.data[i] = saved;
    g.data[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_relative_error: shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom =
        std::max(std::max(std::abs(a.data[i]), std::abs(b.data[i])), floor);
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
  }
  return worst;
}

}  // namespace hdgt
