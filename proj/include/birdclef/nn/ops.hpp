/*
 * Copyright 2026 The birdclef-baseline Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "birdclef/error.hpp"
#include "birdclef/nn/tensor.hpp"

// Forward and backward kernels for the layer set of the baseline network.
// Layouts are NCHW for feature maps and (N, features) for dense data.
namespace birdclef::nn {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatRM<T>>;

struct ConvSpec {
  int stride = 1;
  int groups = 1;
};

// "Same" padding of k/2 on each side: output = ceil(in / stride) for k in {1, 3}.
inline std::size_t conv_out_dim(std::size_t in, std::size_t kernel, int stride) {
  const std::size_t pad = kernel / 2;
  return (in + 2 * pad - kernel) / static_cast<std::size_t>(stride) + 1;
}

namespace detail {

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

// Output columns [lo, hi) whose input column ox * stride + offset is inside [0, w).
inline void valid_range(std::ptrdiff_t offset, int stride, std::size_t w, std::size_t wo, std::size_t& lo,
                        std::size_t& hi) {
  const auto W = static_cast<std::ptrdiff_t>(w);
  std::ptrdiff_t a = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  std::ptrdiff_t b = offset >= W ? 0 : (W - 1 - offset) / stride + 1;
  a = std::min<std::ptrdiff_t>(a, static_cast<std::ptrdiff_t>(wo));
  b = std::clamp<std::ptrdiff_t>(b, a, static_cast<std::ptrdiff_t>(wo));
  lo = static_cast<std::size_t>(a);
  hi = static_cast<std::size_t>(b);
}

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, int stride,
            std::size_t ho, std::size_t wo, T* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto H = static_cast<std::ptrdiff_t>(h);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = x + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - pad;
        std::size_t lo = 0, hi = 0;
        valid_range(off, stride, w, wo, lo, hi);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + static_cast<std::ptrdiff_t>(ky) - pad;
          T* out = row + oy * wo;
          if (iy < 0 || iy >= H) {
            std::fill(out, out + wo, T{});
            continue;
          }
          const T* src = plane + iy * static_cast<std::ptrdiff_t>(w) + off;
          std::fill(out, out + lo, T{});
          if (stride == 1) {
            std::copy(src + lo, src + hi, out + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) out[ox] = src[static_cast<std::ptrdiff_t>(ox) * stride];
          }
          std::fill(out + hi, out + wo, T{});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, int stride,
                std::size_t ho, std::size_t wo, T* x) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto H = static_cast<std::ptrdiff_t>(h);
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = x + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - pad;
        std::size_t lo = 0, hi = 0;
        valid_range(off, stride, w, wo, lo, hi);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + static_cast<std::ptrdiff_t>(ky) - pad;
          if (iy < 0 || iy >= H) continue;
          const T* in = row + oy * wo;
          T* dst = plane + iy * static_cast<std::ptrdiff_t>(w) + off;
          if (stride == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] += in[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[static_cast<std::ptrdiff_t>(ox) * stride] += in[ox];
          }
        }
      }
    }
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w, f, k, ho, wo, cg, fg;
  int stride, groups;
  bool direct;  // 1x1 stride-1 kernels read the input in place
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& weights, ConvSpec spec) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weights.shape(), 4, "conv2d weights");
  if (spec.stride != 1 && spec.stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  const auto g = static_cast<std::size_t>(spec.groups);
  ConvGeometry geo{};
  geo.n = x.dim(0);
  geo.c = x.dim(1);
  geo.h = x.dim(2);
  geo.w = x.dim(3);
  geo.f = weights.dim(0);
  geo.k = weights.dim(2);
  if (spec.groups < 1 || geo.c % g != 0 || geo.f % g != 0) {
    throw ShapeError("conv2d: groups " + std::to_string(spec.groups) + " must divide channels " +
                     std::to_string(geo.c) + " and filters " + std::to_string(geo.f));
  }
  if (weights.dim(3) != geo.k || geo.k % 2 == 0 || weights.dim(1) != geo.c / g) {
    throw ShapeError("conv2d: weight shape " + shape_str(weights.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  geo.cg = geo.c / g;
  geo.fg = geo.f / g;
  geo.stride = spec.stride;
  geo.groups = spec.groups;
  geo.ho = conv_out_dim(geo.h, geo.k, spec.stride);
  geo.wo = conv_out_dim(geo.w, geo.k, spec.stride);
  geo.direct = geo.k == 1 && spec.stride == 1;
  return geo;
}

}  // namespace detail

// Bias-free 2-D convolution with square odd kernels and optional channel
// groups. weights: F x (C/groups) x k x k.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weights, ConvSpec spec = {}) {
  const auto geo = detail::conv_geometry(x, weights, spec);
  Tensor<T> y({geo.n, geo.f, geo.ho, geo.wo});
  const std::size_t kk = geo.cg * geo.k * geo.k;
  const std::size_t plane = geo.ho * geo.wo;
  std::vector<T> cols(geo.direct ? 0 : kk * plane);
  for (std::size_t n = 0; n < geo.n; ++n) {
    for (int g = 0; g < geo.groups; ++g) {
      const T* xg = x.data() + (n * geo.c + g * geo.cg) * geo.h * geo.w;
      const T* src = xg;
      if (!geo.direct) {
        detail::im2col(xg, geo.cg, geo.h, geo.w, geo.k, geo.stride, geo.ho, geo.wo, cols.data());
        src = cols.data();
      }
      ConstMapRM<T> c(src, static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(plane));
      ConstMapRM<T> wg(weights.data() + g * geo.fg * kk, static_cast<Eigen::Index>(geo.fg),
                       static_cast<Eigen::Index>(kk));
      MapRM<T> yg(y.data() + (n * geo.f + g * geo.fg) * plane, static_cast<Eigen::Index>(geo.fg),
                  static_cast<Eigen::Index>(plane));
      yg.noalias() = wg * c;
    }
  }
  return y;
}

// Accumulates the weight gradient into dweights; writes the input gradient
// into *dx when dx is non-null.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy, ConvSpec spec,
                     Tensor<T>* dx, Tensor<T>& dweights) {
  const auto geo = detail::conv_geometry(x, weights, spec);
  if (dy.shape() != Shape{geo.n, geo.f, geo.ho, geo.wo} || dweights.shape() != weights.shape()) {
    throw ShapeError("conv2d_backward: gradient shape mismatch");
  }
  const std::size_t kk = geo.cg * geo.k * geo.k;
  const std::size_t plane = geo.ho * geo.wo;
  if (dx != nullptr) *dx = Tensor<T>(x.shape());
  std::vector<T> cols(geo.direct ? 0 : kk * plane);
  std::vector<T> dcols(dx != nullptr && !geo.direct ? kk * plane : 0);
  for (std::size_t n = 0; n < geo.n; ++n) {
    for (int g = 0; g < geo.groups; ++g) {
      const T* xg = x.data() + (n * geo.c + g * geo.cg) * geo.h * geo.w;
      const T* src = xg;
      if (!geo.direct) {
        detail::im2col(xg, geo.cg, geo.h, geo.w, geo.k, geo.stride, geo.ho, geo.wo, cols.data());
        src = cols.data();
      }
      ConstMapRM<T> c(src, static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(plane));
      ConstMapRM<T> dyg(dy.data() + (n * geo.f + g * geo.fg) * plane, static_cast<Eigen::Index>(geo.fg),
                        static_cast<Eigen::Index>(plane));
      MapRM<T> dwg(dweights.data() + g * geo.fg * kk, static_cast<Eigen::Index>(geo.fg),
                   static_cast<Eigen::Index>(kk));
      dwg.noalias() += dyg * c.transpose();
      if (dx == nullptr) continue;
      ConstMapRM<T> wg(weights.data() + g * geo.fg * kk, static_cast<Eigen::Index>(geo.fg),
                       static_cast<Eigen::Index>(kk));
      T* dxg = dx->data() + (n * geo.c + g * geo.cg) * geo.h * geo.w;
      if (geo.direct) {
        MapRM<T> out(dxg, static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(plane));
        out.noalias() = wg.transpose() * dyg;
      } else {
        MapRM<T> dc(dcols.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(plane));
        dc.noalias() = wg.transpose() * dyg;
        detail::col2im_add(dcols.data(), geo.cg, geo.h, geo.w, geo.k, geo.stride, geo.ho, geo.wo, dxg);
      }
    }
  }
}

// Batch normalization over all axes except 1 (channels). Works for rank-2
// (N, C) and rank-4 (N, C, H, W) inputs.
template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

namespace detail {

template <typename T>
void bn_check(const Tensor<T>& x, std::size_t params) {
  if (x.rank() != 2 && x.rank() != 4) throw ShapeError("batch_norm: input must be rank 2 or 4");
  if (x.dim(1) != params) {
    throw ShapeError("batch_norm: " + std::to_string(params) + " channel parameters for input " +
                     shape_str(x.shape()));
  }
}

template <typename T>
std::size_t bn_plane(const Tensor<T>& x) {
  return x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
}

// Reductions in double over eight fixed lanes. The summation order depends
// only on the length, never on pointer alignment, so a sample reduces to the
// same bits wherever it sits in a batch.
template <typename F>
double lane_reduce(std::size_t n, F term) {
  constexpr std::size_t kLanes = 8;
  double acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += term(i + j);
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += term(i);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <typename T>
double plane_sum(const T* p, std::size_t n) {
  return lane_reduce(n, [p](std::size_t i) { return static_cast<double>(p[i]); });
}

template <typename T>
double plane_sq_dev(const T* p, std::size_t n, double mean) {
  return lane_reduce(n, [p, mean](std::size_t i) {
    const double d = static_cast<double>(p[i]) - mean;
    return d * d;
  });
}

template <typename T>
double plane_dot(const T* a, const T* b, std::size_t n) {
  return lane_reduce(n, [a, b](std::size_t i) { return static_cast<double>(a[i]) * static_cast<double>(b[i]); });
}

}  // namespace detail

// Train mode: normalizes with batch statistics. When update_running is set,
// running <- momentum * running + (1 - momentum) * batch (biased variance).
template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                           std::span<T> running_mean, std::span<T> running_var, double epsilon,
                           double momentum, bool update_running, BatchNormCache<T>* cache) {
  const std::size_t channels = gamma.size();
  detail::bn_check(x, channels);
  if (beta.size() != channels || running_mean.size() != channels || running_var.size() != channels) {
    throw ShapeError("batch_norm: parameter length mismatch");
  }
  const std::size_t n = x.dim(0);
  const std::size_t plane = detail::bn_plane(x);
  const double count = static_cast<double>(n * plane);
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += detail::plane_sum(x.data() + (i * channels + c) * plane, plane);
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sq += detail::plane_sq_dev(x.data() + (i * channels + c) * plane, plane, mean);
    }
    const double var = sq / count;
    const double istd = 1.0 / std::sqrt(var + epsilon);
    inv_std[c] = static_cast<T>(istd);
    const T mean_t = static_cast<T>(mean);
    const T istd_t = static_cast<T>(istd);
    const T g = gamma[c];
    const T b = beta[c];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels + c) * plane;
      const T* src = x.data() + off;
      T* h = xhat.data() + off;
      T* dst = y.data() + off;
      for (std::size_t j = 0; j < plane; ++j) {
        h[j] = (src[j] - mean_t) * istd_t;
        dst[j] = g * h[j] + b;
      }
    }
    if (update_running) {
      running_mean[c] = static_cast<T>(momentum * running_mean[c] + (1.0 - momentum) * mean);
      running_var[c] = static_cast<T>(momentum * running_var[c] + (1.0 - momentum) * var);
    }
  }
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                           std::span<const T> running_mean, std::span<const T> running_var, double epsilon) {
  const std::size_t channels = gamma.size();
  detail::bn_check(x, channels);
  const std::size_t n = x.dim(0);
  const std::size_t plane = detail::bn_plane(x);
  Tensor<T> y(x.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const double istd = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + epsilon);
    const T scale = static_cast<T>(gamma[c] * istd);
    const T shift = static_cast<T>(beta[c] - gamma[c] * running_mean[c] * istd);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) y[off + j] = scale * x[off + j] + shift;
    }
  }
  return y;
}

// Gradient through train-mode batch norm; accumulates dgamma and dbeta.
template <typename T>
Tensor<T> batch_norm_backward(const Tensor<T>& dy, const BatchNormCache<T>& cache, std::span<const T> gamma,
                              std::span<T> dgamma, std::span<T> dbeta) {
  const std::size_t channels = gamma.size();
  if (dy.shape() != cache.xhat.shape()) throw ShapeError("batch_norm_backward: gradient shape mismatch");
  const std::size_t n = dy.dim(0);
  const std::size_t plane = detail::bn_plane(dy);
  const double count = static_cast<double>(n * plane);
  Tensor<T> dx(dy.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels + c) * plane;
      sum_dy += detail::plane_sum(dy.data() + off, plane);
      sum_dy_xhat += detail::plane_dot(dy.data() + off, cache.xhat.data() + off, plane);
    }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
    const T k = static_cast<T>(gamma[c] * cache.inv_std[c] / count);
    const T cnt = static_cast<T>(count);
    const T sdy = static_cast<T>(sum_dy);
    const T sdx = static_cast<T>(sum_dy_xhat);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels + c) * plane;
      const T* g = dy.data() + off;
      const T* h = cache.xhat.data() + off;
      T* out = dx.data() + off;
      for (std::size_t j = 0; j < plane; ++j) out[j] = k * (cnt * g[j] - sdy - h[j] * sdx);
    }
  }
  return dx;
}

// NaN passes through so the divergence guard sees it.
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] < T{} ? T{} : x[i];
  return y;
}

// dx = dy where the forward input was positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, std::span<const std::uint8_t> positive) {
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = positive[i] ? dy[i] : T{};
  return dx;
}

// 2x2 max pooling, stride 2. `argmax` receives the winning window offset
// (0..3, row-major, first maximum wins, NaN beats everything) for every
// output cell.
template <typename T>
Tensor<T> max_pool_2x2(const Tensor<T>& x, std::vector<std::uint8_t>* argmax = nullptr) {
  detail::require_rank(x.shape(), 4, "max_pool_2x2");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("max_pool_2x2: odd spatial size " + shape_str(x.shape()));
  Tensor<T> y({n, c, h / 2, w / 2});
  if (argmax != nullptr) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* plane = x.data() + p * h * w;
    for (std::size_t oy = 0; oy < h / 2; ++oy) {
      const T* r0 = plane + 2 * oy * w;
      const T* r1 = r0 + w;
      for (std::size_t ox = 0; ox < w / 2; ++ox, ++o) {
        const T v[4] = {r0[2 * ox], r0[2 * ox + 1], r1[2 * ox], r1[2 * ox + 1]};
        std::uint8_t best = 0;
        for (std::uint8_t k = 1; k < 4 && !std::isnan(v[best]); ++k) {
          if (v[k] > v[best] || std::isnan(v[k])) best = k;
        }
        y[o] = v[best];
        if (argmax != nullptr) (*argmax)[o] = best;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> max_pool_2x2_backward(const Tensor<T>& dy, const Shape& input_shape,
                                std::span<const std::uint8_t> argmax) {
  Tensor<T> dx(input_shape);
  const std::size_t h = input_shape[2], w = input_shape[3];
  const std::size_t planes = input_shape[0] * input_shape[1];
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    T* plane = dx.data() + p * h * w;
    for (std::size_t oy = 0; oy < h / 2; ++oy) {
      for (std::size_t ox = 0; ox < w / 2; ++ox, ++o) {
        const std::size_t dy_off = argmax[o] >> 1;
        const std::size_t dx_off = argmax[o] & 1;
        plane[(2 * oy + dy_off) * w + 2 * ox + dx_off] += dy[o];
      }
    }
  }
  return dx;
}

// N x C x H x W -> N x C plane means.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y({n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    y[p] = static_cast<T>(detail::plane_sum(x.data() + p * plane, plane) / static_cast<double>(plane));
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, const Shape& input_shape) {
  Tensor<T> dx(input_shape);
  const std::size_t plane = input_shape[2] * input_shape[3];
  const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
  for (std::size_t p = 0; p < dy.size(); ++p) {
    T* dst = dx.data() + p * plane;
    std::fill(dst, dst + plane, dy[p] * inv);
  }
  return dx;
}

// x: N x K, weights: K x M, bias: M.
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  detail::require_rank(x.shape(), 2, "dense input");
  detail::require_rank(weights.shape(), 2, "dense weights");
  const std::size_t n = x.dim(0), k = x.dim(1), m = weights.dim(1);
  if (weights.dim(0) != k || bias.size() != m) {
    throw ShapeError("dense: input " + shape_str(x.shape()) + " vs weights " + shape_str(weights.shape()));
  }
  Tensor<T> y({n, m});
  ConstMapRM<T> w(weights.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  // Row by row so a sample's output does not depend on the batch it sits in.
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> xi(x.data() + i * k, static_cast<Eigen::Index>(k));
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> yi(y.data() + i * m, static_cast<Eigen::Index>(m));
    yi.noalias() = xi * w;
    for (std::size_t j = 0; j < m; ++j) yi[static_cast<Eigen::Index>(j)] += bias[j];
  }
  return y;
}

template <typename T>
Tensor<T> dense_backward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy,
                         Tensor<T>& dweights, Tensor<T>& dbias) {
  const std::size_t n = x.dim(0), k = x.dim(1), m = weights.dim(1);
  ConstMapRM<T> xm(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  ConstMapRM<T> w(weights.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  ConstMapRM<T> g(dy.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  MapRM<T> dw(dweights.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  dw.noalias() += xm.transpose() * g;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) dbias[j] += dy[i * m + j];
  }
  Tensor<T> dx({n, k});
  MapRM<T> dxm(dx.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  dxm.noalias() = g * w.transpose();
  return dx;
}

// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  detail::require_rank(logits.shape(), 2, "softmax");
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * m;
    const T mx = *std::max_element(row, row + m);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
    const double log_sum = std::log(sum);
    for (std::size_t j = 0; j < m; ++j) p[i * m + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx) - log_sum));
  }
  return p;
}

inline constexpr double kCrossEntropyEpsilon = 1e-12;

// Mean of -ln(p[label] + 1e-12) over the batch.
template <typename T>
double cross_entropy(const Tensor<T>& probs, std::span<const int> labels) {
  detail::require_rank(probs.shape(), 2, "cross_entropy");
  const std::size_t n = probs.dim(0), m = probs.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: label count does not match batch");
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= m) {
      throw ShapeError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    }
    loss += -std::log(static_cast<double>(probs[i * m + static_cast<std::size_t>(labels[i])]) + kCrossEntropyEpsilon);
  }
  return loss / static_cast<double>(n);
}

// Gradient of mean cross-entropy w.r.t. the logits that produced `probs`.
template <typename T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& probs, std::span<const int> labels) {
  const std::size_t n = probs.dim(0), m = probs.dim(1);
  Tensor<T> d(probs.shape());
  const T inv_n = static_cast<T>(1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) d[i * m + j] = probs[i * m + j] * inv_n;
    d[i * m + static_cast<std::size_t>(labels[i])] -= inv_n;
  }
  return d;
}

}  // namespace birdclef::nn
