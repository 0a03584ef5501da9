// Copyright 2026 The NeoPlan Authors. All Rights Reserved.
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

// Non-convolution operators. Feature-map operators accept NCHW and NCHW[x]c
// alike by viewing NCHW as NCHW1c; pooling windows only touch H and W.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "neoplan/tensor.hpp"
#include "neoplan/thread_pool.hpp"

namespace neoplan {

namespace detail {

/// (N, C/x, H*W, x) decomposition of a feature map.
struct BlockedDims {
  int64_t n, blocks, hw, x;
  int64_t channels() const { return blocks * x; }
};

inline BlockedDims blocked_dims(const TensorSpec& spec) {
  NEOPLAN_CHECK(spec.layout.is_feature_map(), ErrorCode::kWrongLayout,
                "expected a feature map, got " + spec.layout.str());
  const Shape l = logical_nchw(spec);
  const int64_t x = spec.layout.channel_block();
  return {l[0], l[1] / x, l[2] * l[3], x};
}

}  // namespace detail

inline void relu_into(const TensorView& in, const MutableTensorView& out, ThreadPool& pool) {
  const float* src = in.data.data();
  float* dst = out.data.data();
  pool.parallel_for(in.numel(), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) dst[i] = std::max(src[i], 0.0f);
  });
}

inline void add_into(const TensorView& a, const TensorView& b, const MutableTensorView& out,
                     ThreadPool& pool) {
  NEOPLAN_CHECK(a.shape == b.shape && a.layout == b.layout, ErrorCode::kShapeMismatch,
                "add operands differ");
  const float* pa = a.data.data();
  const float* pb = b.data.data();
  float* dst = out.data.data();
  pool.parallel_for(a.numel(), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) dst[i] = pa[i] + pb[i];
  });
}

/// Per-channel y = x * scale[c] + shift[c].
inline void scale_shift_into(const TensorView& in, std::span<const float> scale,
                             std::span<const float> shift, const MutableTensorView& out,
                             ThreadPool& pool) {
  const auto d = detail::blocked_dims(in.spec());
  NEOPLAN_CHECK(static_cast<int64_t>(scale.size()) == d.channels() &&
                    static_cast<int64_t>(shift.size()) == d.channels(),
                ErrorCode::kShapeMismatch, "scale/shift length must equal channel count");
  const float* src = in.data.data();
  float* dst = out.data.data();
  pool.parallel_for(d.n * d.blocks, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const int64_t cb = t % d.blocks;
      const int64_t base = t * d.hw * d.x;
      for (int64_t p = 0; p < d.hw; ++p)
        for (int64_t ci = 0; ci < d.x; ++ci) {
          const int64_t c = cb * d.x + ci;
          const int64_t i = base + p * d.x + ci;
          dst[i] = src[i] * scale[static_cast<std::size_t>(c)] + shift[static_cast<std::size_t>(c)];
        }
    }
  });
}

/// Inference batch norm reduced to per-channel scale and shift.
inline void batch_norm_coefficients(std::span<const float> gamma, std::span<const float> beta,
                                    std::span<const float> mean, std::span<const float> var,
                                    float eps, std::vector<float>& scale,
                                    std::vector<float>& shift) {
  const std::size_t c = gamma.size();
  NEOPLAN_CHECK(beta.size() == c && mean.size() == c && var.size() == c,
                ErrorCode::kShapeMismatch, "batch norm parameter lengths differ");
  scale.resize(c);
  shift.resize(c);
  for (std::size_t i = 0; i < c; ++i) {
    scale[i] = gamma[i] / std::sqrt(var[i] + eps);
    shift[i] = beta[i] - mean[i] * scale[i];
  }
}

enum class PoolKind { kMax, kAvg };

/// Max or average pooling over H and W. Padded positions are skipped, so
/// the average divides by the number of in-bounds taps.
inline void pool_into(PoolKind kind, const TensorView& in, int window_h, int window_w,
                      int stride, int pad, const MutableTensorView& out, ThreadPool& pool) {
  const Shape il = logical_nchw(in.spec());
  const Shape ol = logical_nchw(out.spec());
  NEOPLAN_CHECK(in.layout == out.layout && il[0] == ol[0] && il[1] == ol[1],
                ErrorCode::kShapeMismatch, "pool output does not match input");
  const int64_t x = in.layout.channel_block();
  const int64_t H = il[2], W = il[3], OH = ol[2], OW = ol[3];
  const int64_t planes = il[0] * il[1] / x;
  const float* src = in.data.data();
  float* dst = out.data.data();
  pool.parallel_for(planes * OH, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const int64_t plane = t / OH, oh = t % OH;
      const float* ip = src + plane * H * W * x;
      float* op = dst + (plane * OH + oh) * OW * x;
      const int64_t h0 = std::max<int64_t>(oh * stride - pad, 0);
      const int64_t h1 = std::min<int64_t>(oh * stride - pad + window_h, H);
      for (int64_t ow = 0; ow < OW; ++ow) {
        const int64_t w0 = std::max<int64_t>(ow * stride - pad, 0);
        const int64_t w1 = std::min<int64_t>(ow * stride - pad + window_w, W);
        for (int64_t ci = 0; ci < x; ++ci) {
          float acc = kind == PoolKind::kMax ? -std::numeric_limits<float>::infinity() : 0.0f;
          for (int64_t h = h0; h < h1; ++h)
            for (int64_t w = w0; w < w1; ++w) {
              const float v = ip[(h * W + w) * x + ci];
              acc = kind == PoolKind::kMax ? std::max(acc, v) : acc + v;
            }
          if (kind == PoolKind::kAvg) {
            const int64_t taps = std::max<int64_t>((h1 - h0) * (w1 - w0), 1);
            acc /= static_cast<float>(taps);
          }
          op[ow * x + ci] = acc;
        }
      }
    }
  });
}

/// Concatenation along physical axis `axis`. For NCHW[x]c inputs axis 1
/// concatenates channel blocks, which is channel concatenation.
inline void concat_into(std::span<const TensorView> inputs, int axis, const MutableTensorView& out) {
  NEOPLAN_CHECK(!inputs.empty(), ErrorCode::kInvalidArgument, "concat of nothing");
  const auto& s0 = inputs[0].shape;
  int64_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[static_cast<std::size_t>(d)];
  std::vector<int64_t> chunk(inputs.size());
  int64_t out_chunk = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    int64_t inner = 1;
    for (std::size_t d = static_cast<std::size_t>(axis); d < inputs[i].shape.size(); ++d) {
      inner *= inputs[i].shape[d];
    }
    chunk[i] = inner;
    out_chunk += inner;
  }
  NEOPLAN_CHECK(outer * out_chunk == out.numel(), ErrorCode::kShapeMismatch,
                "concat output size mismatch");
  float* dst = out.data.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      dst = std::copy_n(inputs[i].data.data() + o * chunk[i], chunk[i], dst);
    }
  }
}

/// out[n, u] = sum_f x[n, f] * w[u, f] + bias[u].
inline void dense_into(const TensorView& x, const TensorView& w, std::span<const float> bias,
                       const MutableTensorView& out, ThreadPool& pool) {
  const int64_t N = x.shape[0], F = x.shape[1], U = w.shape[0];
  NEOPLAN_CHECK(w.shape[1] == F, ErrorCode::kShapeMismatch, "dense weight does not match input");
  NEOPLAN_CHECK(bias.empty() || static_cast<int64_t>(bias.size()) == U, ErrorCode::kShapeMismatch,
                "dense bias length");
  const float* px = x.data.data();
  const float* pw = w.data.data();
  float* dst = out.data.data();
  pool.parallel_for(N * U, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const int64_t n = t / U, u = t % U;
      float acc = 0.0f;
      for (int64_t f = 0; f < F; ++f) acc += px[n * F + f] * pw[u * F + f];
      if (!bias.empty()) acc += bias[static_cast<std::size_t>(u)];
      dst[t] = acc;
    }
  });
}

/// Softmax over the last axis of a rank-2 tensor, or over channels of a
/// feature map.
inline void softmax_into(const TensorView& in, const MutableTensorView& out, ThreadPool& pool) {
  int64_t rows, channels, stride_c, x = 1, hw = 1;
  if (in.layout.is_feature_map()) {
    const auto d = detail::blocked_dims(in.spec());
    rows = d.n * d.hw;
    channels = d.channels();
    x = d.x;
    hw = d.hw;
    stride_c = 0;
  } else {
    NEOPLAN_CHECK(in.shape.size() == 2, ErrorCode::kShapeMismatch, "softmax needs rank 2");
    rows = in.shape[0];
    channels = in.shape[1];
    stride_c = 1;
  }
  const float* src = in.data.data();
  float* dst = out.data.data();
  // Offset of (row, c): rank-2 is row-major; feature maps index
  // ((n * C/x + c / x) * HW + p) * x + c % x.
  auto offset = [&](int64_t row, int64_t c) -> int64_t {
    if (stride_c) return row * channels + c;
    const int64_t n = row / hw, p = row % hw;
    return ((n * (channels / x) + c / x) * hw + p) * x + c % x;
  };
  pool.parallel_for(rows, [&](int64_t lo, int64_t hi) {
    for (int64_t r = lo; r < hi; ++r) {
      float m = -std::numeric_limits<float>::infinity();
      for (int64_t c = 0; c < channels; ++c) m = std::max(m, src[offset(r, c)]);
      float sum = 0.0f;
      for (int64_t c = 0; c < channels; ++c) {
        const float e = std::exp(src[offset(r, c)] - m);
        dst[offset(r, c)] = e;
        sum += e;
      }
      for (int64_t c = 0; c < channels; ++c) dst[offset(r, c)] /= sum;
    }
  });
}

}  // namespace neoplan
