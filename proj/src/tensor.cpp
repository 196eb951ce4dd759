#include "hdgt/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "hdgt/autodiff.hpp"
#include "hdgt/errors.hpp"

namespace hdgt {

namespace {

using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MatMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

Tensor raw_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out({m, n});
  ConstMatMap ma(a.data.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  ConstMatMap mb(b.data.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  MatMap mo(out.data.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  mo.noalias() = ma * mb;
  return out;
}

Tensor raw_transpose(const Tensor& a) {
  const std::size_t m = a.shape[0], n = a.shape[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  return out;
}

// Product of all dims except the last ("rows" under last-dim broadcasting).
std::size_t leading_size(const Tensor& t) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < t.shape.size(); ++i) n *= t.shape[i];
  return n;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Gathers every receptive field into one row so convolution becomes a single
// matrix product with the kernel viewed as [kh*kw*ci, co].
RowMat conv_columns(const Tensor& x, std::size_t kh, std::size_t kw, std::size_t stride,
                    std::size_t pad, std::size_t oh, std::size_t ow) {
  const std::size_t h = x.shape[0], w = x.shape[1], ci = x.shape[2];
  const std::size_t span = kh * kw * ci;
  RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(oh * ow),
                             static_cast<Eigen::Index>(span));
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t cc = 0; cc < ow; ++cc) {
      double* row = cols.data() + (r * ow + cc) * span;
      for (std::size_t u = 0; u < kh; ++u) {
        const std::ptrdiff_t ih =
            static_cast<std::ptrdiff_t>(r * stride + u) - static_cast<std::ptrdiff_t>(pad);
        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t v = 0; v < kw; ++v) {
          const std::ptrdiff_t iw =
              static_cast<std::ptrdiff_t>(cc * stride + v) - static_cast<std::ptrdiff_t>(pad);
          if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* src =
              x.data.data() + (static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw)) * ci;
          std::copy(src, src + ci, row + (u * kw + v) * ci);
        }
      }
    }
  }
  return cols;
}

// Scatter-adds receptive-field gradients back onto the input grid (the
// adjoint of conv_columns).
void conv_columns_adjoint(const RowMat& dcols, Tensor& gx, std::size_t kh, std::size_t kw,
                          std::size_t stride, std::size_t pad, std::size_t oh,
                          std::size_t ow) {
  const std::size_t h = gx.shape[0], w = gx.shape[1], ci = gx.shape[2];
  const std::size_t span = kh * kw * ci;
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t cc = 0; cc < ow; ++cc) {
      const double* row = dcols.data() + (r * ow + cc) * span;
      for (std::size_t u = 0; u < kh; ++u) {
        const std::ptrdiff_t ih =
            static_cast<std::ptrdiff_t>(r * stride + u) - static_cast<std::ptrdiff_t>(pad);
        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t v = 0; v < kw; ++v) {
          const std::ptrdiff_t iw =
              static_cast<std::ptrdiff_t>(cc * stride + v) - static_cast<std::ptrdiff_t>(pad);
          if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
          double* dst =
              gx.data.data() + (static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw)) * ci;
          const double* src = row + (u * kw + v) * ci;
          for (std::size_t q = 0; q < ci; ++q) dst[q] += src[q];
        }
      }
    }
  }
}

}  // namespace

std::size_t shape_size(const std::vector<std::size_t>& s) {
  if (s.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> s)
    : shape(std::move(s)), data(shape_size(shape), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw ShapeError("Tensor: " + std::to_string(data.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
}

Tensor Tensor::full(std::vector<std::size_t> s, double v) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b),
          "add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  if (detail::should_record({&a, &b})) {
    detail::record_op({&a, &b}, out, [](const Tensor& g) {
      return std::vector<Tensor>{g, g};
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b),
          "sub: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] - b.data[i];
  if (detail::should_record({&a, &b})) {
    detail::record_op({&a, &b}, out, [](const Tensor& g) {
      Tensor gb = zeros_like(g);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] = -g.data[i];
      return std::vector<Tensor>{g, std::move(gb)};
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b),
          "mul: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  if (detail::should_record({&a, &b})) {
    detail::record_op({&a, &b}, out, [a, b](const Tensor& g) {
      Tensor ga = zeros_like(a), gb = zeros_like(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga.data[i] = g.data[i] * b.data[i];
        gb.data[i] = g.data[i] * a.data[i];
      }
      return std::vector<Tensor>{std::move(ga), std::move(gb)};
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] * s;
  if (detail::should_record({&a})) {
    detail::record_op({&a}, out, [s](const Tensor& g) {
      Tensor ga = zeros_like(g);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] = g.data[i] * s;
      return std::vector<Tensor>{std::move(ga)};
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require(b.rank() == 1, "add_bias: bias must be rank 1, got " + shape_str(b.shape));
  require(x.rank() >= 1 && x.shape.back() == b.shape[0],
          "add_bias: last dim of " + shape_str(x.shape) + " vs bias " + shape_str(b.shape));
  const std::size_t rows = leading_size(x), c = b.shape[0];
  Tensor out(x.shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      out.data[r * c + j] = x.data[r * c + j] + b.data[j];
  if (detail::should_record({&x, &b})) {
    detail::record_op({&x, &b}, out, [rows, c, bshape = b.shape](const Tensor& g) {
      Tensor gb{bshape};
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) gb.data[j] += g.data[r * c + j];
      return std::vector<Tensor>{g, std::move(gb)};
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
  if (detail::should_record({&a})) {
    detail::record_op({&a}, out, [a](const Tensor& g) {
      Tensor ga = zeros_like(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data[i] = a.data[i] > 0.0 ? g.data[i] : 0.0;
      return std::vector<Tensor>{std::move(ga)};
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.shape[1] == b.shape[0],
          "matmul: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
  Tensor out = raw_matmul(a, b);
  if (detail::should_record({&a, &b})) {
    detail::record_op({&a, &b}, out, [a, b](const Tensor& g) {
      Tensor ga = raw_matmul(g, raw_transpose(b));
      Tensor gb = raw_matmul(raw_transpose(a), g);
      return std::vector<Tensor>{std::move(ga), std::move(gb)};
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: rank-2 only, got " + shape_str(a.shape));
  Tensor out = raw_transpose(a);
  if (detail::should_record({&a})) {
    detail::record_op({&a}, out, [](const Tensor& g) {
      return std::vector<Tensor>{raw_transpose(g)};
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> s) {
  require(shape_size(s) == a.size(),
          "reshape: size mismatch " + shape_str(a.shape) + " -> " + shape_str(s));
  Tensor out(std::move(s), a.data);
  if (detail::should_record({&a})) {
    detail::record_op({&a}, out, [orig = a.shape](const Tensor& g) {
      return std::vector<Tensor>{Tensor(orig, g.data)};
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  require(x.rank() == 2, "gather_rows: rank-2 only, got " + shape_str(x.shape));
  const std::size_t n = x.shape[0], c = x.shape[1];
  for (std::size_t i : idx)
    require(i < n, "gather_rows: index " + std::to_string(i) + " out of range");
  Tensor out({idx.size(), c});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t j = 0; j < c; ++j) out(r, j) = x(idx[r], j);
  if (detail::should_record({&x})) {
    detail::record_op({&x}, out, [idx, n, c](const Tensor& g) {
      Tensor gx({n, c});
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < c; ++j) gx(idx[r], j) += g(r, j);
      return std::vector<Tensor>{std::move(gx)};
    });
  }
  return out;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  require(a.rank() == b.rank() && a.rank() >= 1,
          "concat_last: rank mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  for (std::size_t i = 0; i + 1 < a.rank(); ++i)
    require(a.shape[i] == b.shape[i], "concat_last: leading dims differ, " +
                                          shape_str(a.shape) + " vs " + shape_str(b.shape));
  const std::size_t rows = leading_size(a);
  const std::size_t ca = a.shape.back(), cb = b.shape.back();
  std::vector<std::size_t> s = a.shape;
  s.back() = ca + cb;
  Tensor out(std::move(s));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < ca; ++j) out.data[r * (ca + cb) + j] = a.data[r * ca + j];
    for (std::size_t j = 0; j < cb; ++j)
      out.data[r * (ca + cb) + ca + j] = b.data[r * cb + j];
  }
  if (detail::should_record({&a, &b})) {
    detail::record_op({&a, &b}, out,
                      [rows, ca, cb, sa = a.shape, sb = b.shape](const Tensor& g) {
                        Tensor ga{sa}, gb{sb};
                        for (std::size_t r = 0; r < rows; ++r) {
                          for (std::size_t j = 0; j < ca; ++j)
                            ga.data[r * ca + j] = g.data[r * (ca + cb) + j];
                          for (std::size_t j = 0; j < cb; ++j)
                            gb.data[r * cb + j] = g.data[r * (ca + cb) + ca + j];
                        }
                        return std::vector<Tensor>{std::move(ga), std::move(gb)};
                      });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data) acc += v;
  Tensor out({1}, {acc});
  if (detail::should_record({&a})) {
    detail::record_op({&a}, out, [s = a.shape](const Tensor& g) {
      return std::vector<Tensor>{Tensor::full(s, g.data[0])};
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  require(a.size() > 0, "mean: empty tensor");
  double acc = 0.0;
  for (double v : a.data) acc += v;
  const double n = static_cast<double>(a.size());
  Tensor out({1}, {acc / n});
  if (detail::should_record({&a})) {
    detail::record_op({&a}, out, [s = a.shape, n](const Tensor& g) {
      return std::vector<Tensor>{Tensor::full(s, g.data[0] / n)};
    });
  }
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

Tensor softmax_rows(const Tensor& x) {
  require(x.rank() == 2, "softmax_rows: rank-2 only, got " + shape_str(x.shape));
  const std::size_t n = x.shape[0], m = x.shape[1];
  require(m > 0, "softmax_rows: empty rows");
  Tensor out(x.shape);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, x(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      denom += out(i, j);
    }
    for (std::size_t j = 0; j < m; ++j) out(i, j) /= denom;
  }
  if (detail::should_record({&x})) {
    detail::record_op({&x}, out, [s = out](const Tensor& g) {
      const std::size_t rn = s.shape[0], rm = s.shape[1];
      Tensor gx(s.shape);
      for (std::size_t i = 0; i < rn; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < rm; ++j) dot += g(i, j) * s(i, j);
        for (std::size_t j = 0; j < rm; ++j) gx(i, j) = s(i, j) * (g(i, j) - dot);
      }
      return std::vector<Tensor>{std::move(gx)};
    });
  }
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require(x.rank() == 2, "layernorm: rank-2 only, got " + shape_str(x.shape));
  const std::size_t n = x.shape[0], c = x.shape[1];
  require(c >= 2, "layernorm: needs at least 2 channels, got " + shape_str(x.shape));
  require(gain.rank() == 1 && gain.shape[0] == c && bias.rank() == 1 && bias.shape[0] == c,
          "layernorm: gain/bias must be [" + std::to_string(c) + "]");
  Tensor out(x.shape);
  std::vector<double> mu(n), var(n);
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < c; ++j) m += x(i, j);
    m /= static_cast<double>(c);
    double v = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x(i, j) - m;
      v += d * d;
    }
    v /= static_cast<double>(c);
    mu[i] = m;
    var[i] = v;
    const double inv = 1.0 / std::sqrt(v + eps);
    for (std::size_t j = 0; j < c; ++j)
      out(i, j) = gain.data[j] * ((x(i, j) - m) * inv) + bias.data[j];
  }
  if (detail::should_record({&x, &gain, &bias})) {
    detail::record_op(
        {&x, &gain, &bias}, out,
        [x, gain, mu, var, eps](const Tensor& g) {
          const std::size_t n2 = x.shape[0], c2 = x.shape[1];
          const double cd = static_cast<double>(c2);
          Tensor gx(x.shape), ggain(gain.shape), gbias(gain.shape);
          for (std::size_t i = 0; i < n2; ++i) {
            const double inv = 1.0 / std::sqrt(var[i] + eps);
            double dvar = 0.0, dmu_a = 0.0, sum_xc = 0.0;
            for (std::size_t j = 0; j < c2; ++j) {
              const double xc = x(i, j) - mu[i];
              const double dxhat = g(i, j) * gain.data[j];
              dvar += dxhat * xc;
              dmu_a += dxhat;
              sum_xc += xc;
              ggain.data[j] += g(i, j) * (xc * inv);
              gbias.data[j] += g(i, j);
            }
            dvar *= -0.5 * inv * inv * inv;
            const double dmu = -inv * dmu_a + dvar * (-2.0 / cd) * sum_xc;
            for (std::size_t j = 0; j < c2; ++j) {
              const double xc = x(i, j) - mu[i];
              const double dxhat = g(i, j) * gain.data[j];
              gx(i, j) = dxhat * inv + dvar * 2.0 * xc / cd + dmu / cd;
            }
          }
          return std::vector<Tensor>{std::move(gx), std::move(ggain), std::move(gbias)};
        });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  require(x.rank() == 3, "conv2d: input must be [h, w, cin], got " + shape_str(x.shape));
  require(k.rank() == 4, "conv2d: kernel must be [kh, kw, cin, cout], got " + shape_str(k.shape));
  require(x.shape[2] == k.shape[2], "conv2d: channel mismatch " + shape_str(x.shape) +
                                        " vs kernel " + shape_str(k.shape));
  require(stride > 0, "conv2d: stride must be positive");
  const std::size_t h = x.shape[0], w = x.shape[1], ci = x.shape[2];
  const std::size_t kh = k.shape[0], kw = k.shape[1], co = k.shape[3];
  require(kh % 2 == 1 && kw % 2 == 1,
          "conv2d: kernel extents must be odd, got " + shape_str(k.shape));
  require(h + 2 * pad >= kh && w + 2 * pad >= kw,
          "conv2d: kernel " + shape_str(k.shape) + " larger than padded input");
  if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0) {
    throw ConfigError("conv2d: stride " + std::to_string(stride) +
                      " does not tile input " + shape_str(x.shape) + " with padding " +
                      std::to_string(pad));
  }
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
  const std::size_t span = kh * kw * ci;
  Tensor out({oh, ow, co});
  {
    const RowMat cols = conv_columns(x, kh, kw, stride, pad, oh, ow);
    ConstMatMap kmap(k.data.data(), static_cast<Eigen::Index>(span),
                     static_cast<Eigen::Index>(co));
    MatMap omap(out.data.data(), static_cast<Eigen::Index>(oh * ow),
                static_cast<Eigen::Index>(co));
    omap.noalias() = cols * kmap;
  }
  if (detail::should_record({&x, &k})) {
    detail::record_op(
        {&x, &k}, out, [x, k, stride, pad, oh, ow](const Tensor& g) {
          const std::size_t kh2 = k.shape[0], kw2 = k.shape[1];
          const std::size_t ci2 = x.shape[2], co2 = k.shape[3];
          const std::size_t span2 = kh2 * kw2 * ci2;
          Tensor gx(x.shape), gk(k.shape);
          const RowMat cols = conv_columns(x, kh2, kw2, stride, pad, oh, ow);
          ConstMatMap gmap(g.data.data(), static_cast<Eigen::Index>(oh * ow),
                           static_cast<Eigen::Index>(co2));
          MatMap gkmap(gk.data.data(), static_cast<Eigen::Index>(span2),
                       static_cast<Eigen::Index>(co2));
          gkmap.noalias() = cols.transpose() * gmap;
          ConstMatMap kmap(k.data.data(), static_cast<Eigen::Index>(span2),
                           static_cast<Eigen::Index>(co2));
          const RowMat dcols = gmap * kmap.transpose();
          conv_columns_adjoint(dcols, gx, kh2, kw2, stride, pad, oh, ow);
          return std::vector<Tensor>{std::move(gx), std::move(gk)};
        });
  }
  return out;
}

Tensor bilinear_upsample(const Tensor& x, std::size_t s) {
  require(x.rank() == 3, "bilinear_upsample: input must be [h, w, c], got " + shape_str(x.shape));
  require(s >= 1, "bilinear_upsample: factor must be >= 1");
  const std::size_t h = x.shape[0], w = x.shape[1], c = x.shape[2];
  Tensor out({h * s, w * s, c});
  const auto source = [s](std::size_t p, std::size_t extent) {
    double ps = static_cast<double>(p) / static_cast<double>(s);
    const double hi = static_cast<double>(extent - 1);
    if (ps > hi) ps = hi;
    return ps;
  };
  for (std::size_t pr = 0; pr < h * s; ++pr) {
    const double py = source(pr, h);
    const std::size_t r0 = static_cast<std::size_t>(py);
    const std::size_t r1 = std::min(r0 + 1, h - 1);
    const double wy1 = py - static_cast<double>(r0), wy0 = 1.0 - wy1;
    for (std::size_t pc = 0; pc < w * s; ++pc) {
      const double px = source(pc, w);
      const std::size_t c0 = static_cast<std::size_t>(px);
      const std::size_t c1 = std::min(c0 + 1, w - 1);
      const double wx1 = px - static_cast<double>(c0), wx0 = 1.0 - wx1;
      for (std::size_t q = 0; q < c; ++q) {
        out(pr, pc, q) = wy0 * wx0 * x(r0, c0, q) + wy0 * wx1 * x(r0, c1, q) +
                         wy1 * wx0 * x(r1, c0, q) + wy1 * wx1 * x(r1, c1, q);
      }
    }
  }
  if (detail::should_record({&x})) {
    detail::record_op({&x}, out, [xs = x.shape, s, source](const Tensor& g) {
      const std::size_t h2 = xs[0], w2 = xs[1], c2 = xs[2];
      Tensor gx{xs};
      for (std::size_t pr = 0; pr < h2 * s; ++pr) {
        const double py = source(pr, h2);
        const std::size_t r0 = static_cast<std::size_t>(py);
        const std::size_t r1 = std::min(r0 + 1, h2 - 1);
        const double wy1 = py - static_cast<double>(r0), wy0 = 1.0 - wy1;
        for (std::size_t pc = 0; pc < w2 * s; ++pc) {
          const double px = source(pc, w2);
          const std::size_t c0 = static_cast<std::size_t>(px);
          const std::size_t c1 = std::min(c0 + 1, w2 - 1);
          const double wx1 = px - static_cast<double>(c0), wx0 = 1.0 - wx1;
          for (std::size_t q = 0; q < c2; ++q) {
            const double gv = g(pr, pc, q);
            gx(r0, c0, q) += wy0 * wx0 * gv;
            gx(r0, c1, q) += wy0 * wx1 * gv;
            gx(r1, c0, q) += wy1 * wx0 * gv;
            gx(r1, c1, q) += wy1 * wx1 * gv;
          }
        }
      }
      return std::vector<Tensor>{std::move(gx)};
    });
  }
  return out;
}

}  // namespace hdgt
