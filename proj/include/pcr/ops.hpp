// Copyright 2026 The pcrpose Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

/// \file ops.hpp
/// \brief Differentiable operators used by the context-aware decoder.
///
/// Weight layouts follow the usual conventions: conv2d weights are
/// (out_channels, in_channels, kh, kw); deconv2d weights are
/// (in_channels, out_channels, kh, kw) so that a deconv with weight W is the
/// adjoint of a conv with the same W. Biases and per-channel affine terms are
/// 1 x C x 1 x 1 tensors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pcr/autograd.hpp"
#include "pcr/error.hpp"
#include "pcr/tensor.hpp"

namespace pcr {

struct ConvSpec {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;

  /// 3x3 convolution with "same" padding at the given dilation.
  static ConvSpec same3x3(std::size_t in, std::size_t out, std::size_t dilation = 1) {
    return {3, 3, 1, dilation, dilation, in, out};
  }
  static ConvSpec pointwise(std::size_t in, std::size_t out) { return {1, 1, 1, 1, 0, in, out}; }
  /// Transposed conv that exactly doubles spatial extents.
  static ConvSpec upsample_deconv(std::size_t in, std::size_t out) { return {4, 4, 2, 1, 1, in, out}; }

  void validate() const {
    if (kernel_h == 0 || kernel_w == 0) throw ShapeError("ConvSpec: kernel extent must be positive");
    if (stride == 0) throw ShapeError("ConvSpec: stride must be >= 1");
    if (dilation == 0) throw ShapeError("ConvSpec: dilation must be >= 1");
    if (in_channels == 0 || out_channels == 0) throw ShapeError("ConvSpec: channel counts must be positive");
  }

  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
  Shape deconv_weight_shape() const { return {in_channels, out_channels, kernel_h, kernel_w}; }
};

/// floor((in + 2p - d(k-1) - 1) / s) + 1
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t dilation,
                                   std::size_t padding) {
  const auto num = static_cast<std::int64_t>(in + 2 * padding) - static_cast<std::int64_t>(dilation * (kernel - 1)) - 1;
  if (num < 0) throw ShapeError("conv: input extent " + std::to_string(in) + " smaller than dilated kernel");
  return static_cast<std::size_t>(num) / stride + 1;
}

/// (in - 1) s - 2p + d(k-1) + 1
inline std::size_t deconv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t dilation,
                                     std::size_t padding) {
  const auto out = static_cast<std::int64_t>((in - 1) * stride + dilation * (kernel - 1) + 1) -
                   static_cast<std::int64_t>(2 * padding);
  if (in == 0 || out <= 0) throw ShapeError("deconv: non-positive output extent");
  return static_cast<std::size_t>(out);
}

struct BnState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BnState(std::size_t channels = 0) : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

namespace kernels {

// Output positions o in [lo, hi) whose source o*stride + offset lies in [0, in).
struct Range {
  std::size_t lo;
  std::size_t hi;
};

inline Range valid_range(std::size_t out, std::size_t in, std::int64_t offset, std::size_t stride) {
  const auto s = static_cast<std::int64_t>(stride);
  std::int64_t lo = 0;
  if (offset < 0) lo = (-offset + s - 1) / s;
  const std::int64_t last = static_cast<std::int64_t>(in) - 1 - offset;
  std::int64_t hi = last < 0 ? 0 : last / s + 1;
  hi = std::min<std::int64_t>(hi, static_cast<std::int64_t>(out));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Calls fn(in_offset, out_offset, count) once per output row for kernel tap
// (ky, kx): output positions out_offset + t pair with input positions
// in_offset + t * stride for t < count.
template <class Fn>
void for_each_tap(const ConvSpec& s, std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w,
                  std::size_t ky, std::size_t kx, Fn&& fn) {
  const auto p = static_cast<std::int64_t>(s.padding);
  const std::int64_t off_y = static_cast<std::int64_t>(ky * s.dilation) - p;
  const std::int64_t off_x = static_cast<std::int64_t>(kx * s.dilation) - p;
  const Range ry = valid_range(out_h, in_h, off_y, s.stride);
  const Range rx = valid_range(out_w, in_w, off_x, s.stride);
  if (rx.lo >= rx.hi) return;
  for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
    const auto iy = static_cast<std::size_t>(static_cast<std::int64_t>(oy * s.stride) + off_y);
    const auto ix0 = static_cast<std::size_t>(static_cast<std::int64_t>(rx.lo * s.stride) + off_x);
    fn(iy * in_w + ix0, oy * out_w + rx.lo, rx.hi - rx.lo);
  }
}

/// y[n, o] = b[o] + sum_{i, ky, kx} w[o, i, ky, kx] * x[n, i, shifted]
inline Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvSpec& s,
                           std::size_t out_h, std::size_t out_w) {
  const Shape xs = x.shape();
  Tensor y({xs.n, s.out_channels, out_h, out_w});
  const std::size_t st = s.stride;
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      double* yp = y.plane(n, o);
      if (bias != nullptr) std::fill_n(yp, out_h * out_w, (*bias)[o]);
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        const double* xp = x.plane(n, i);
        for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
            const double wv = w.at(o, i, ky, kx);
            for_each_tap(s, xs.h, xs.w, out_h, out_w, ky, kx,
                         [&](std::size_t xi, std::size_t yi, std::size_t count) {
                           const double* src = xp + xi;
                           double* dst = yp + yi;
                           for (std::size_t t = 0; t < count; ++t) dst[t] += wv * src[t * st];
                         });
          }
        }
      }
    }
  }
  return y;
}

/// Input gradient of conv_forward, i.e. the transposed convolution.
inline Tensor conv_backward_data(const Tensor& gy, const Tensor& w, const ConvSpec& s, Shape x_shape) {
  Tensor gx(x_shape);
  const Shape ys = gy.shape();
  const std::size_t st = s.stride;
  for (std::size_t n = 0; n < ys.n; ++n) {
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      const double* gp = gy.plane(n, o);
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        double* xp = gx.plane(n, i);
        for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
            const double wv = w.at(o, i, ky, kx);
            for_each_tap(s, x_shape.h, x_shape.w, ys.h, ys.w, ky, kx,
                         [&](std::size_t xi, std::size_t yi, std::size_t count) {
                           double* dst = xp + xi;
                           const double* src = gp + yi;
                           for (std::size_t t = 0; t < count; ++t) dst[t * st] += wv * src[t];
                         });
          }
        }
      }
    }
  }
  return gx;
}

/// Weight gradient of conv_forward.
inline Tensor conv_backward_filter(const Tensor& x, const Tensor& gy, const ConvSpec& s) {
  Tensor gw(s.weight_shape());
  const Shape xs = x.shape();
  const Shape ys = gy.shape();
  const std::size_t st = s.stride;
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      const double* gp = gy.plane(n, o);
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        const double* xp = x.plane(n, i);
        for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
            double acc = 0.0;
            for_each_tap(s, xs.h, xs.w, ys.h, ys.w, ky, kx,
                         [&](std::size_t xi, std::size_t yi, std::size_t count) {
                           const double* a = xp + xi;
                           const double* b = gp + yi;
                           for (std::size_t t = 0; t < count; ++t) acc += a[t * st] * b[t];
                         });
            gw.at(o, i, ky, kx) += acc;
          }
        }
      }
    }
  }
  return gw;
}

inline Tensor bias_grad(const Tensor& gy) {
  const Shape s = gy.shape();
  Tensor gb({1, s.c, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* p = gy.plane(n, c);
      double acc = 0.0;
      for (std::size_t k = 0; k < s.plane(); ++k) acc += p[k];
      gb[c] += acc;
    }
  }
  return gb;
}

}  // namespace kernels

namespace detail {

inline void check_channel_vector(const Var& v, std::size_t channels, const char* op, const char* what) {
  if (v.shape() != Shape{1, channels, 1, 1}) {
    throw ShapeError(std::string(op) + ": " + what + " shape " + v.shape().str() + ", expected 1x" +
                     std::to_string(channels) + "x1x1");
  }
}

inline void check_weight(const Var& w, Shape expected, const char* op) {
  const Shape ws = w.shape();
  static constexpr const char* names[] = {"dim0", "dim1", "kernel_h", "kernel_w"};
  const std::size_t got[] = {ws.n, ws.c, ws.h, ws.w};
  const std::size_t want[] = {expected.n, expected.c, expected.h, expected.w};
  for (int d = 0; d < 4; ++d) {
    if (got[d] != want[d]) {
      throw ShapeError(std::string(op) + ": weight " + names[d] + " is " + std::to_string(got[d]) + ", expected " +
                       std::to_string(want[d]));
    }
  }
}

}  // namespace detail

inline Var conv2d(const Var& x, const Var& w, const Var& b, const ConvSpec& spec) {
  spec.validate();
  if (x.shape().c != spec.in_channels) {
    throw ShapeError("conv2d: input channels " + std::to_string(x.shape().c) + ", expected " +
                     std::to_string(spec.in_channels));
  }
  detail::check_weight(w, spec.weight_shape(), "conv2d");
  if (b.defined()) detail::check_channel_vector(b, spec.out_channels, "conv2d", "bias");
  const std::size_t oh = conv_out_extent(x.shape().h, spec.kernel_h, spec.stride, spec.dilation, spec.padding);
  const std::size_t ow = conv_out_extent(x.shape().w, spec.kernel_w, spec.stride, spec.dilation, spec.padding);
  Tensor y = kernels::conv_forward(x.value(), w.value(), b.defined() ? &b.value() : nullptr, spec, oh, ow);
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return Var::make(std::move(y), std::move(inputs), [spec](detail::Node& self) {
    const Tensor& gy = self.grad;
    detail::Node& xn = *self.parents[0];
    detail::Node& wn = *self.parents[1];
    if (xn.requires_grad) xn.grad_buffer() += kernels::conv_backward_data(gy, wn.value, spec, xn.value.shape());
    if (wn.requires_grad) wn.grad_buffer() += kernels::conv_backward_filter(xn.value, gy, spec);
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      self.parents[2]->grad_buffer() += kernels::bias_grad(gy);
    }
  });
}

/// Transposed convolution; spec.in_channels is the channel count of x.
inline Var deconv2d(const Var& x, const Var& w, const Var& b, const ConvSpec& spec) {
  spec.validate();
  if (x.shape().c != spec.in_channels) {
    throw ShapeError("deconv2d: input channels " + std::to_string(x.shape().c) + ", expected " +
                     std::to_string(spec.in_channels));
  }
  detail::check_weight(w, spec.deconv_weight_shape(), "deconv2d");
  if (b.defined()) detail::check_channel_vector(b, spec.out_channels, "deconv2d", "bias");
  const Shape xs = x.shape();
  const Shape ys{xs.n, spec.out_channels,
                 deconv_out_extent(xs.h, spec.kernel_h, spec.stride, spec.dilation, spec.padding),
                 deconv_out_extent(xs.w, spec.kernel_w, spec.stride, spec.dilation, spec.padding)};
  // The adjoint conv maps ys -> xs with the same weight tensor.
  ConvSpec adj = spec;
  adj.in_channels = spec.out_channels;
  adj.out_channels = spec.in_channels;
  Tensor y = kernels::conv_backward_data(x.value(), w.value(), adj, ys);
  if (b.defined()) {
    for (std::size_t n = 0; n < ys.n; ++n) {
      for (std::size_t c = 0; c < ys.c; ++c) {
        double* p = y.plane(n, c);
        for (std::size_t k = 0; k < ys.plane(); ++k) p[k] += b.value()[c];
      }
    }
  }
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return Var::make(std::move(y), std::move(inputs), [adj, xs](detail::Node& self) {
    const Tensor& gy = self.grad;
    detail::Node& xn = *self.parents[0];
    detail::Node& wn = *self.parents[1];
    if (xn.requires_grad) {
      xn.grad_buffer() += kernels::conv_forward(gy, wn.value, nullptr, adj, xs.h, xs.w);
    }
    if (wn.requires_grad) wn.grad_buffer() += kernels::conv_backward_filter(gy, xn.value, adj);
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      self.parents[2]->grad_buffer() += kernels::bias_grad(gy);
    }
  });
}

/// Per-channel normalisation. Train mode uses batch statistics (biased
/// variance) and folds them into `state` with the unbiased estimate.
inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BnState& state, Mode mode) {
  const Shape s = x.shape();
  detail::check_channel_vector(gamma, s.c, "batch_norm", "gamma");
  detail::check_channel_vector(beta, s.c, "batch_norm", "beta");
  if (state.running_mean.size() != s.c || state.running_var.size() != s.c) {
    throw ShapeError("batch_norm: running state has " + std::to_string(state.running_mean.size()) +
                     " channels, input has " + std::to_string(s.c));
  }
  const std::size_t m = s.n * s.plane();
  if (m == 0) throw ShapeError("batch_norm: empty input");

  auto mean = std::make_shared<std::vector<double>>(s.c, 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(s.c, 0.0);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* p = x.value().plane(n, c);
        for (std::size_t k = 0; k < s.plane(); ++k) acc += p[k];
      }
      const double mu = acc / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* p = x.value().plane(n, c);
        for (std::size_t k = 0; k < s.plane(); ++k) sq += (p[k] - mu) * (p[k] - mu);
      }
      const double var = sq / static_cast<double>(m);
      if (!std::isfinite(mu) || !std::isfinite(var)) {
        throw NumericError("batch_norm: non-finite statistics in channel " + std::to_string(c));
      }
      (*mean)[c] = mu;
      (*inv_std)[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < s.c; ++c) {
      (*mean)[c] = state.running_mean[c];
      (*inv_std)[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
      if (!std::isfinite((*inv_std)[c]) || !std::isfinite((*mean)[c])) {
        throw NumericError("batch_norm: non-finite running statistics in channel " + std::to_string(c));
      }
    }
  }

  auto xhat = std::make_shared<Tensor>(s);
  Tensor y(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* xp = x.value().plane(n, c);
      double* hp = xhat->plane(n, c);
      double* yp = y.plane(n, c);
      const double mu = (*mean)[c];
      const double is = (*inv_std)[c];
      const double g = gamma.value()[c];
      const double bt = beta.value()[c];
      for (std::size_t k = 0; k < s.plane(); ++k) {
        hp[k] = (xp[k] - mu) * is;
        yp[k] = g * hp[k] + bt;
      }
    }
  }

  return Var::make(std::move(y), {x, gamma, beta}, [xhat, inv_std, mode, m](detail::Node& self) {
    const Tensor& gy = self.grad;
    const Shape s = gy.shape();
    detail::Node& xn = *self.parents[0];
    detail::Node& gn = *self.parents[1];
    detail::Node& bn = *self.parents[2];
    std::vector<double> sum_gy(s.c, 0.0), sum_gy_xhat(s.c, 0.0);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const double* gp = gy.plane(n, c);
        const double* hp = xhat->plane(n, c);
        for (std::size_t k = 0; k < s.plane(); ++k) {
          sum_gy[c] += gp[k];
          sum_gy_xhat[c] += gp[k] * hp[k];
        }
      }
    }
    if (gn.requires_grad) {
      Tensor& g = gn.grad_buffer();
      for (std::size_t c = 0; c < s.c; ++c) g[c] += sum_gy_xhat[c];
    }
    if (bn.requires_grad) {
      Tensor& g = bn.grad_buffer();
      for (std::size_t c = 0; c < s.c; ++c) g[c] += sum_gy[c];
    }
    if (!xn.requires_grad) return;
    Tensor& gx = xn.grad_buffer();
    const double md = static_cast<double>(m);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const double* gp = gy.plane(n, c);
        const double* hp = xhat->plane(n, c);
        double* dst = gx.plane(n, c);
        const double scale = gn.value[c] * (*inv_std)[c];
        if (mode == Mode::train) {
          const double mean_g = sum_gy[c] / md;
          const double mean_gh = sum_gy_xhat[c] / md;
          for (std::size_t k = 0; k < s.plane(); ++k) dst[k] += scale * (gp[k] - mean_g - hp[k] * mean_gh);
        } else {
          for (std::size_t k = 0; k < s.plane(); ++k) dst[k] += scale * gp[k];
        }
      }
    }
  });
}

inline Var relu(const Var& x) {
  Tensor y = x.value();
  for (double& v : y.vec()) v = v > 0.0 ? v : 0.0;
  return Var::make(std::move(y), {x}, [](detail::Node& self) {
    detail::Node& xn = *self.parents[0];
    Tensor& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xn.value[i] > 0.0) gx[i] += self.grad[i];
    }
  });
}

inline double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& x) {
  Tensor y = x.value();
  for (double& v : y.vec()) v = sigmoid_scalar(v);
  auto out = std::make_shared<Tensor>(y);
  return Var::make(std::move(y), {x}, [out](detail::Node& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double s = (*out)[i];
      gx[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

inline Var global_avg_pool(const Var& x) {
  const Shape s = x.shape();
  if (s.plane() == 0) throw ShapeError("global_avg_pool: empty spatial plane");
  Tensor y({s.n, s.c, 1, 1});
  const double inv = 1.0 / static_cast<double>(s.plane());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      double acc = 0.0;
      for (std::size_t k = 0; k < s.plane(); ++k) acc += p[k];
      y.at(n, c, 0, 0) = acc * inv;
    }
  }
  return Var::make(std::move(y), {x}, [inv](detail::Node& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    const Shape s = gx.shape();
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const double g = self.grad.at(n, c, 0, 0) * inv;
        double* p = gx.plane(n, c);
        for (std::size_t k = 0; k < s.plane(); ++k) p[k] += g;
      }
    }
  });
}

/// out[n, c, :, :] = x[n, c, :, :] * s[n, c]
inline Var channel_scale(const Var& x, const Var& scale) {
  const Shape xs = x.shape();
  const Shape ss = scale.shape();
  if (ss.n != xs.n) throw ShapeError("channel_scale: batch " + std::to_string(ss.n) + " vs " + std::to_string(xs.n));
  if (ss.c != xs.c) {
    throw ShapeError("channel_scale: channels " + std::to_string(ss.c) + " vs " + std::to_string(xs.c));
  }
  if (ss.h != 1 || ss.w != 1) throw ShapeError("channel_scale: scale must be Nx Cx1x1, got " + ss.str());
  Tensor y(xs);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      const double sv = scale.value().at(n, c, 0, 0);
      const double* xp = x.value().plane(n, c);
      double* yp = y.plane(n, c);
      for (std::size_t k = 0; k < xs.plane(); ++k) yp[k] = xp[k] * sv;
    }
  }
  return Var::make(std::move(y), {x, scale}, [](detail::Node& self) {
    detail::Node& xn = *self.parents[0];
    detail::Node& sn = *self.parents[1];
    const Shape xs = xn.value.shape();
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t c = 0; c < xs.c; ++c) {
        const double* gp = self.grad.plane(n, c);
        if (xn.requires_grad) {
          const double sv = sn.value.at(n, c, 0, 0);
          double* dst = xn.grad_buffer().plane(n, c);
          for (std::size_t k = 0; k < xs.plane(); ++k) dst[k] += gp[k] * sv;
        }
        if (sn.requires_grad) {
          const double* xp = xn.value.plane(n, c);
          double acc = 0.0;
          for (std::size_t k = 0; k < xs.plane(); ++k) acc += gp[k] * xp[k];
          sn.grad_buffer().at(n, c, 0, 0) += acc;
        }
      }
    }
  });
}

inline Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: empty list");
  const Shape s0 = parts.front().shape();
  std::size_t channels = 0;
  for (const Var& p : parts) {
    const Shape s = p.shape();
    if (s.n != s0.n) throw ShapeError("concat_channels: batch " + std::to_string(s.n) + " vs " + std::to_string(s0.n));
    if (s.h != s0.h) throw ShapeError("concat_channels: height " + std::to_string(s.h) + " vs " + std::to_string(s0.h));
    if (s.w != s0.w) throw ShapeError("concat_channels: width " + std::to_string(s.w) + " vs " + std::to_string(s0.w));
    channels += s.c;
  }
  Tensor y({s0.n, channels, s0.h, s0.w});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    for (std::size_t n = 0; n < s0.n; ++n) {
      std::copy_n(p.value().plane(n, 0), p.shape().c * s0.plane(), y.plane(n, off));
    }
    off += p.shape().c;
  }
  return Var::make(std::move(y), std::vector<Var>(parts.begin(), parts.end()), [offsets](detail::Node& self) {
    const Shape s = self.grad.shape();
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      detail::Node& pn = *self.parents[i];
      if (!pn.requires_grad) continue;
      Tensor& g = pn.grad_buffer();
      const std::size_t count = pn.value.shape().c * s.plane();
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* src = self.grad.plane(n, offsets[i]);
        double* dst = g.plane(n, 0);
        for (std::size_t k = 0; k < count; ++k) dst[k] += src[k];
      }
    }
  });
}

inline Var concat_channels(std::initializer_list<Var> parts) {
  return concat_channels(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var upsample2x_nearest(const Var& x) {
  const Shape s = x.shape();
  const std::size_t ow = 2 * s.w;
  Tensor y({s.n, s.c, 2 * s.h, ow});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* xp = x.value().plane(n, c);
      double* yp = y.plane(n, c);
      for (std::size_t i = 0; i < s.h; ++i) {
        for (std::size_t j = 0; j < s.w; ++j) {
          const double v = xp[i * s.w + j];
          yp[(2 * i) * ow + 2 * j] = v;
          yp[(2 * i) * ow + 2 * j + 1] = v;
          yp[(2 * i + 1) * ow + 2 * j] = v;
          yp[(2 * i + 1) * ow + 2 * j + 1] = v;
        }
      }
    }
  }
  return Var::make(std::move(y), {x}, [](detail::Node& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    const Shape s = gx.shape();
    const std::size_t ow = 2 * s.w;
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const double* gp = self.grad.plane(n, c);
        double* dst = gx.plane(n, c);
        for (std::size_t i = 0; i < s.h; ++i) {
          for (std::size_t j = 0; j < s.w; ++j) {
            dst[i * s.w + j] += gp[(2 * i) * ow + 2 * j] + gp[(2 * i) * ow + 2 * j + 1] +
                                gp[(2 * i + 1) * ow + 2 * j] + gp[(2 * i + 1) * ow + 2 * j + 1];
          }
        }
      }
    }
  });
}

inline Var add(const Var& a, const Var& b) {
  a.value().require_same_shape(b.value(), "add");
  Tensor y = a.value();
  y += b.value();
  return Var::make(std::move(y), {a, b}, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->grad_buffer() += self.grad;
    }
  });
}

inline Var scale(const Var& x, double factor) {
  Tensor y = x.value();
  y *= factor;
  return Var::make(std::move(y), {x}, [factor](detail::Node& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
  });
}

inline Var sum(const Var& x) {
  return Var::make(Tensor::scalar(x.value().sum()), {x}, [](detail::Node& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    const double g = self.grad[0];
    for (double& v : gx.vec()) v += g;
  });
}

/// mean over all N*C*H*W entries of weights[n, c] * (pred - target)^2.
/// `weights` is N x C x 1 x 1.
inline Var weighted_mse(const Var& pred, const Tensor& target, const Tensor& weights) {
  const Shape s = pred.shape();
  if (target.shape() != s) throw ShapeError("weighted_mse: target " + target.shape().str() + " vs pred " + s.str());
  if (weights.shape() != Shape{s.n, s.c, 1, 1}) {
    throw ShapeError("weighted_mse: weights " + weights.shape().str() + ", expected " +
                     Shape{s.n, s.c, 1, 1}.str());
  }
  if (s.size() == 0) throw ShapeError("weighted_mse: empty prediction");
  const double inv = 1.0 / static_cast<double>(s.size());
  double acc = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double wv = weights.at(n, c, 0, 0);
      if (wv == 0.0) continue;
      const double* pp = pred.value().plane(n, c);
      const double* tp = target.plane(n, c);
      double part = 0.0;
      for (std::size_t k = 0; k < s.plane(); ++k) part += (pp[k] - tp[k]) * (pp[k] - tp[k]);
      acc += wv * part;
    }
  }
  auto tgt = std::make_shared<Tensor>(target);
  auto wts = std::make_shared<Tensor>(weights);
  return Var::make(Tensor::scalar(acc * inv), {pred}, [tgt, wts, inv](detail::Node& self) {
    detail::Node& pn = *self.parents[0];
    Tensor& gp = pn.grad_buffer();
    const Shape s = gp.shape();
    const double g = self.grad[0] * 2.0 * inv;
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const double wv = wts->at(n, c, 0, 0);
        if (wv == 0.0) continue;
        const double* pp = pn.value.plane(n, c);
        const double* tp = tgt->plane(n, c);
        double* dst = gp.plane(n, c);
        for (std::size_t k = 0; k < s.plane(); ++k) dst[k] += g * wv * (pp[k] - tp[k]);
      }
    }
  });
}

}  // namespace pcr
