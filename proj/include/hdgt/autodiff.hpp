#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "hdgt/tensor.hpp"

namespace hdgt {

// Given the gradient w.r.t. an op's output, return gradients w.r.t. each of
// its inputs, in the order they were recorded. Closures must do raw math
// only (no taped ops), so running backward never grows a tape.
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

class GradTape;

// Gradients produced by GradTape::backward. Lookup is by the tensor's node
// id; tensors that never touched the tape get zeros of their own shape.
class GradientMap {
 public:
  Tensor at(const Tensor& t) const;
  bool contains(const Tensor& t) const;

 private:
  friend class GradTape;
  std::uint64_t epoch_ = 0;
  std::unordered_map<std::int64_t, Tensor> grads_;
};

// Reverse-mode tape. Ops append nodes in execution order; backward walks
// them in reverse, accumulating gradients by node id.
class GradTape {
 public:
  GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  std::uint64_t epoch() const { return epoch_; }
  std::size_t node_count() const { return nodes_.size(); }

  // True if t already has a node on *this* tape.
  bool tracks(const Tensor& t) const;

  // Record one op. Inputs that are neither tracked nor marked requires_grad
  // stay off the tape (their gradients are discarded).
  void record(const std::vector<const Tensor*>& inputs, Tensor& out, BackwardFn fn);

  // Reverse sweep from a scalar (size-1) loss that lives on this tape.
  GradientMap backward(const Tensor& loss);

 private:
  std::int64_t ensure_leaf(const Tensor& t);

  struct Node {
    std::vector<std::int64_t> inputs;
    BackwardFn fn;  // empty for leaves
    std::vector<std::size_t> shape;
  };
  std::vector<Node> nodes_;
  std::uint64_t epoch_;
};

// The tape ops record onto, if any. Managed by TapeScope.
GradTape* active_tape();

// RAII activation of a fresh tape for the current thread; restores the
// previous active tape on destruction.
class TapeScope {
 public:
  TapeScope();
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  GradTape& tape() { return tape_; }

 private:
  GradTape tape_;
  GradTape* prev_;
};

namespace detail {
// Helpers used by the op implementations.
bool should_record(std::initializer_list<const Tensor*> inputs);
void record_op(std::initializer_list<const Tensor*> inputs, Tensor& out, BackwardFn fn);
}  // namespace detail

// Central-difference gradient of a scalar-valued function at x, perturbing
// one element at a time.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double eps = 1e-5);

// max over elements of |a_i - b_i| / max(|a_i|, |b_i|, floor).
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8);

}  // namespace hdgt
