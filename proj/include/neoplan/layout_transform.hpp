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

// Packing between default and blocked layouts. Every transform is a single
// pass into exactly one freshly allocated output buffer. The *_into variants
// write into caller-owned memory and are what the executor uses.

#pragma once

#include <string>

#include "neoplan/tensor.hpp"
#include "neoplan/thread_pool.hpp"

namespace neoplan {

namespace detail {

template <class Body>
void maybe_parallel(ThreadPool* pool, int64_t n, Body&& body) {
  if (pool) {
    pool->parallel_for(n, body);
  } else {
    body(int64_t{0}, n);
  }
}

inline void check_divisible(int64_t channels, int split, const char* what) {
  NEOPLAN_CHECK(split >= 1, ErrorCode::kInvalidArgument, std::string(what) + " split must be >= 1");
  NEOPLAN_CHECK(channels % split == 0, ErrorCode::kIndivisibleChannel,
                std::string(what) + " channels " + std::to_string(channels) +
                    " not divisible by " + std::to_string(split));
}

}  // namespace detail

/// Reindexes any feature map (NCHW or NCHW[a]c) into the feature-map layout
/// of `out`. NCHW is treated as NCHW1c, so pack, unpack and retile are all
/// this one loop.
inline void transform_feature_map_into(const TensorView& in, const MutableTensorView& out,
                                       ThreadPool* pool = nullptr) {
  NEOPLAN_CHECK(in.layout.is_feature_map(), ErrorCode::kWrongLayout,
                "source is not a feature map: " + in.layout.str());
  NEOPLAN_CHECK(out.layout.is_feature_map(), ErrorCode::kWrongLayout,
                "target is not a feature map: " + out.layout.str());
  const Shape logical = logical_nchw(in.spec());
  const int a = in.layout.channel_block();
  const int b = out.layout.channel_block();
  detail::check_divisible(logical[1], b, "target");
  NEOPLAN_CHECK(feature_map_shape(logical, out.layout) == out.shape, ErrorCode::kShapeMismatch,
                "target shape " + shape_str(out.shape) + " does not hold " + shape_str(logical));
  const int64_t n_batch = logical[0], channels = logical[1], hw = logical[2] * logical[3];
  const int64_t out_blocks = channels / b, in_blocks = channels / a;
  const float* src = in.data.data();
  float* dst = out.data.data();
  if (a == b) {
    detail::maybe_parallel(pool, n_batch * out_blocks, [&](int64_t lo, int64_t hi) {
      std::copy(src + lo * hw * b, src + hi * hw * b, dst + lo * hw * b);
    });
    return;
  }
  detail::maybe_parallel(pool, n_batch * out_blocks, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const int64_t n = t / out_blocks, cb_out = t % out_blocks;
      float* out_block = dst + t * hw * b;
      for (int co = 0; co < b; ++co) {
        const int64_t c = cb_out * b + co;
        const float* in_plane = src + ((n * in_blocks + c / a) * hw) * a + c % a;
        for (int64_t p = 0; p < hw; ++p) out_block[p * b + co] = in_plane[p * a];
      }
    }
  });
}

inline Tensor transform_feature_map(const Tensor& t, const Layout& target, ThreadPool* pool) {
  Tensor out(feature_map_shape(logical_nchw(t.spec()), target), target);
  transform_feature_map_into(t.view(), out.mutable_view(), pool);
  return out;
}

/// NCHW -> NCHW[x]c: (n, c, h, w) moves to (n, c / x, h, w, c % x).
inline Tensor pack_data(const Tensor& t, int x, ThreadPool* pool = nullptr) {
  NEOPLAN_CHECK(t.layout().tag == LayoutTag::kNCHW, ErrorCode::kWrongLayout,
                "pack_data expects NCHW, got " + t.layout().str());
  detail::check_divisible(t.shape()[1], x, "input");
  return transform_feature_map(t, Layout::nchwc(x), pool);
}

/// NCHW[x]c -> NCHW, the exact inverse of pack_data.
inline Tensor unpack_data(const Tensor& t, ThreadPool* pool = nullptr) {
  NEOPLAN_CHECK(t.layout().tag == LayoutTag::kNCHWc, ErrorCode::kWrongLayout,
                "unpack_data expects NCHW[x]c, got " + t.layout().str());
  return transform_feature_map(t, Layout::nchw(), pool);
}

/// NCHW[a]c -> NCHW[b]c in one pass; equals pack_data(unpack_data(t), b).
inline Tensor retile_data(const Tensor& t, int b, ThreadPool* pool = nullptr) {
  NEOPLAN_CHECK(t.layout().tag == LayoutTag::kNCHWc, ErrorCode::kWrongLayout,
                "retile_data expects NCHW[x]c, got " + t.layout().str());
  detail::check_divisible(t.shape()[1] * t.shape()[4], b, "input");
  return transform_feature_map(t, Layout::nchwc(b), pool);
}

/// NHWC -> NCHW, applied once when an NHWC graph input is ingested.
inline Tensor nhwc_to_nchw(const Tensor& t) {
  NEOPLAN_CHECK(t.layout().tag == LayoutTag::kNHWC, ErrorCode::kWrongLayout,
                "expected NHWC, got " + t.layout().str());
  const auto& s = t.shape();
  const int64_t n = s[0], h = s[1], w = s[2], c = s[3];
  Tensor out({n, c, h, w}, Layout::nchw());
  const float* src = t.data().data();
  float* dst = out.data().data();
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ih = 0; ih < h; ++ih)
      for (int64_t iw = 0; iw < w; ++iw)
        for (int64_t ic = 0; ic < c; ++ic)
          dst[((in * c + ic) * h + ih) * w + iw] = src[((in * h + ih) * w + iw) * c + ic];
  return out;
}

inline Shape packed_weight_shape(const Shape& kcrs, int x, int y) {
  detail::check_divisible(kcrs[1], x, "weight input");
  detail::check_divisible(kcrs[0], y, "weight output");
  return {kcrs[0] / y, kcrs[1] / x, kcrs[2], kcrs[3], x, y};
}

/// KCRS -> KCRS[x]c[y]k into a caller-owned buffer of the packed shape.
inline void pack_weights_into(const TensorView& w, const MutableTensorView& out) {
  NEOPLAN_CHECK(w.layout.tag == LayoutTag::kKCRS, ErrorCode::kWrongLayout,
                "pack_weights expects KCRS, got " + w.layout.str());
  NEOPLAN_CHECK(out.layout.tag == LayoutTag::kKCRSck, ErrorCode::kWrongLayout,
                "pack target must be KCRS[x]c[y]k, got " + out.layout.str());
  const int x = out.layout.x, y = out.layout.y;
  const auto& s = w.shape;
  NEOPLAN_CHECK(out.shape == packed_weight_shape(s, x, y), ErrorCode::kShapeMismatch,
                "pack target shape " + shape_str(out.shape));
  const int64_t K = s[0], C = s[1], RS = s[2] * s[3];
  const float* src = w.data.data();
  float* dst = out.data.data();
  for (int64_t k = 0; k < K; ++k)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t rs = 0; rs < RS; ++rs) {
        const int64_t o = (((k / y) * (C / x) + c / x) * RS + rs) * x * y + (c % x) * y + k % y;
        dst[o] = src[(k * C + c) * RS + rs];
      }
}

/// KCRS -> KCRS[x]c[y]k: (k, c, r, s) moves to (k / y, c / x, r, s, c % x, k % y).
inline Tensor pack_weights(const Tensor& w, int x, int y) {
  NEOPLAN_CHECK(w.layout().tag == LayoutTag::kKCRS, ErrorCode::kWrongLayout,
                "pack_weights expects KCRS, got " + w.layout().str());
  Tensor out(packed_weight_shape(w.shape(), x, y), Layout::kcrsck(x, y));
  pack_weights_into(w.view(), out.mutable_view());
  return out;
}

inline Tensor unpack_weights(const Tensor& w) {
  NEOPLAN_CHECK(w.layout().tag == LayoutTag::kKCRSck, ErrorCode::kWrongLayout,
                "unpack_weights expects KCRS[x]c[y]k, got " + w.layout().str());
  const auto& s = w.shape();
  const int x = w.layout().x, y = w.layout().y;
  const int64_t K = s[0] * y, C = s[1] * x, RS = s[2] * s[3];
  Tensor out({K, C, s[2], s[3]}, Layout::kcrs());
  const float* src = w.data().data();
  float* dst = out.data().data();
  for (int64_t k = 0; k < K; ++k)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t rs = 0; rs < RS; ++rs) {
        const int64_t i = (((k / y) * (C / x) + c / x) * RS + rs) * x * y + (c % x) * y + k % y;
        dst[(k * C + c) * RS + rs] = src[i];
      }
  return out;
}

}  // namespace neoplan
