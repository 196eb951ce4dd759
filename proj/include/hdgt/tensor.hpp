#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace hdgt {

// Dense row-major double tensor. Values are stored channel-last
// (e.g. images are [h, w, c]). Tensors are value types; once a tensor
// has been fed through a differentiable op while a tape is active it
// should be treated as immutable, since the tape remembers its contents.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;

  // Autodiff bookkeeping, managed by the tape. node < 0 means "not on a tape";
  // tape_epoch says which tape the node id belongs to.
  mutable std::int64_t node = -1;
  mutable std::uint64_t tape_epoch = 0;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);
  Tensor(std::vector<std::size_t> s, std::vector<double> values);

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t rank() const { return shape.size(); }
  std::size_t size() const { return data.size(); }

  double& operator()(std::size_t i) { return data[i]; }
  double operator()(std::size_t i) const { return data[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

std::size_t shape_size(const std::vector<std::size_t>& s);
std::string shape_str(const std::vector<std::size_t>& s);
Tensor zeros_like(const Tensor& t);

// ---- differentiable ops -----------------------------------------------
// Each op computes eagerly and, when a tape is active and an input is
// tracked, records a backward closure on that tape.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise
Tensor scale(const Tensor& a, double s);             // s is a constant
Tensor add_bias(const Tensor& x, const Tensor& b);   // broadcast b over last dim
Tensor relu(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n] -> [m,n]
Tensor transpose(const Tensor& a);                   // [m,n] -> [n,m]
Tensor reshape(const Tensor& a, std::vector<std::size_t> s);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]
Tensor mse(const Tensor& a, const Tensor& b);  // mean squared error -> [1]

// Row softmax over [n, m]; rows are max-shifted before exponentiation.
Tensor softmax_rows(const Tensor& x);

// Per-row layer normalisation over the last dim of [n, c] (c >= 2) with a
// learnable gain/bias; population variance, epsilon added inside the square
// root's argument.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-6);

// 2-D cross-correlation: x [h, w, cin], kernel [kh, kw, cin, cout] with kh, kw
// odd, zero padding. Output [oh, ow, cout] with oh = (h + 2*pad - kh)/stride + 1,
// which must be integral (ConfigError otherwise).
Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride = 1,
              std::size_t pad = 0);

// Factor-s bilinear upsample of [h, w, c] -> [h*s, w*s, c]. An output pixel p
// maps to source coordinate p' = p / s (clamped to the valid range) and mixes
// the four integer neighbours of p' with weights
// (1 - |p'_y - q_y|) * (1 - |p'_x - q_x|).
Tensor bilinear_upsample(const Tensor& x, std::size_t s);

}  // namespace hdgt
