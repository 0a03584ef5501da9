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

// Direct convolution on blocked layouts.
//
// Input is NCHW[ic_bn]c, weights KCRS[ic_bn]c[oc_bn]k, output NCHW[oc_bn]c.
// Work is split over disjoint (batch, output-channel block, output row)
// chunks. Inside a chunk the output row is walked in tiles of reg_n columns;
// each tile keeps reg_n accumulators of oc_bn lanes live across the whole
// reduction (input-channel blocks, kernel entries, input-channel lanes) and
// is stored once with the fused epilogue. Columns left over when the row
// width is not a multiple of reg_n go through single-column tiles.
//
// Lanes are expressed with std::experimental::simd. When oc_bn is wider than
// the hardware vector, the accumulator spans several physical registers.

#pragma once

#include <experimental/simd>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "neoplan/conv_types.hpp"
#include "neoplan/layout_transform.hpp"
#include "neoplan/tensor.hpp"
#include "neoplan/thread_pool.hpp"

namespace neoplan {

namespace stdx = std::experimental;

/// f32 lanes of a vector register of the given width in bits.
constexpr int lanes_for_vector_bits(int bits) { return bits >= 32 ? bits / 32 : 1; }

/// f32 lane count of the widest vector unit on this host (16, 8, 4) or 1.
inline int vector_lane_width() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx512f")) return lanes_for_vector_bits(512);
  if (__builtin_cpu_supports("avx2") || __builtin_cpu_supports("avx")) {
    return lanes_for_vector_bits(256);
  }
  if (__builtin_cpu_supports("sse2")) return lanes_for_vector_bits(128);
  return 1;
#elif defined(__ARM_NEON) || defined(__aarch64__)
  return lanes_for_vector_bits(128);
#else
  return 1;
#endif
}

namespace detail {

struct ConvArgs {
  const float* in = nullptr;  // zero-padded NCHW[icb]c
  const float* w = nullptr;
  float* out = nullptr;
  const float* residual = nullptr;
  const float* scale = nullptr;
  const float* shift = nullptr;
  const float* bias = nullptr;
  bool relu = false;
  int64_t icb = 1, ocb = 1;
  int64_t c_blocks = 1, k_blocks = 1;
  int64_t ph = 1, pw = 1;  // padded input extent
  int64_t kh = 1, kw = 1, stride = 1;
  int64_t oh = 1, ow = 1;
};

// Runtime kernel dims; with KernelUnroll == -1 the flattened R*S loop is
// unrolled by the compiler instead of replicated.
inline constexpr int kRuntimeKernel = 0;
inline constexpr int kPragmaUnroll = -1;

template <int OcBn, int RegN, int KH, int KW>
void conv_tile(const ConvArgs& a, int64_t n, int64_t kb, int64_t oh, int64_t ow0) {
  using V = stdx::fixed_size_simd<float, OcBn>;
  constexpr bool kFixedKernel = KH > 0 && KW > 0;
  const int64_t kh = kFixedKernel ? KH : a.kh;
  const int64_t kw = kFixedKernel ? KW : a.kw;
  const int64_t icb = a.icb;
  const int64_t col_step = a.stride * icb;

  V acc[RegN];
  for (auto& v : acc) v = V(0.0f);

  const float* in_n = a.in + n * a.c_blocks * a.ph * a.pw * icb;
  const float* w_kb = a.w + kb * a.c_blocks * kh * kw * icb * OcBn;
  for (int64_t cb = 0; cb < a.c_blocks; ++cb) {
    const float* in_cb = in_n + ((cb * a.ph + oh * a.stride) * a.pw + ow0 * a.stride) * icb;
    const float* w_cb = w_kb + cb * kh * kw * icb * OcBn;
    auto kernel_entry = [&](int64_t r, int64_t s) {
      const float* in_rs = in_cb + (r * a.pw + s) * icb;
      const float* w_rs = w_cb + (r * kw + s) * icb * OcBn;
      for (int64_t ci = 0; ci < icb; ++ci) {
        const V wv(w_rs + ci * OcBn, stdx::element_aligned);
        const float* x = in_rs + ci;
#pragma GCC unroll 32
        for (int i = 0; i < RegN; ++i) acc[i] += V(x[i * col_step]) * wv;
      }
    };
    if constexpr (kFixedKernel) {
      [&]<int... E>(std::integer_sequence<int, E...>) {
        (kernel_entry(E / KW, E % KW), ...);
      }(std::make_integer_sequence<int, KH * KW>{});
    } else if constexpr (KH == kPragmaUnroll) {
      const int64_t entries = kh * kw;
#pragma GCC unroll 25
      for (int64_t e = 0; e < entries; ++e) kernel_entry(e / kw, e % kw);
    } else {
      for (int64_t r = 0; r < kh; ++r)
        for (int64_t s = 0; s < kw; ++s) kernel_entry(r, s);
    }
  }

  const int64_t k0 = kb * OcBn;
  V scale, shift, bias;
  if (a.scale) {
    scale.copy_from(a.scale + k0, stdx::element_aligned);
    shift.copy_from(a.shift + k0, stdx::element_aligned);
  }
  if (a.bias) bias.copy_from(a.bias + k0, stdx::element_aligned);
  const int64_t out_off = (((n * a.k_blocks + kb) * a.oh + oh) * a.ow + ow0) * OcBn;
  float* o = a.out + out_off;
  const float* res = a.residual ? a.residual + out_off : nullptr;
  for (int i = 0; i < RegN; ++i) {
    V v = acc[i];
    if (a.scale) v = v * scale + shift;
    if (a.bias) v = v + bias;
    if (res) v = v + V(res + i * OcBn, stdx::element_aligned);
    if (a.relu) v = stdx::max(v, V(0.0f));
    v.copy_to(o + i * OcBn, stdx::element_aligned);
  }
}

/// Fallback for oc_bn / reg_n values without a compiled tile.
inline void conv_tile_generic(const ConvArgs& a, int64_t n, int64_t kb, int64_t oh, int64_t ow0,
                              int64_t nreg) {
  const int64_t ocb = a.ocb, icb = a.icb;
  thread_local std::vector<float> acc;
  acc.assign(static_cast<std::size_t>(nreg * ocb), 0.0f);
  const float* in_n = a.in + n * a.c_blocks * a.ph * a.pw * icb;
  const float* w_kb = a.w + kb * a.c_blocks * a.kh * a.kw * icb * ocb;
  for (int64_t cb = 0; cb < a.c_blocks; ++cb) {
    const float* in_cb = in_n + ((cb * a.ph + oh * a.stride) * a.pw + ow0 * a.stride) * icb;
    const float* w_cb = w_kb + cb * a.kh * a.kw * icb * ocb;
    for (int64_t r = 0; r < a.kh; ++r)
      for (int64_t s = 0; s < a.kw; ++s)
        for (int64_t ci = 0; ci < icb; ++ci) {
          const float* w = w_cb + ((r * a.kw + s) * icb + ci) * ocb;
          const float* x = in_cb + (r * a.pw + s) * icb + ci;
          for (int64_t i = 0; i < nreg; ++i) {
            const float xv = x[i * a.stride * icb];
            float* __restrict acc_i = acc.data() + i * ocb;
            for (int64_t o = 0; o < ocb; ++o) acc_i[o] += xv * w[o];
          }
        }
  }
  const int64_t k0 = kb * ocb;
  const int64_t out_off = (((n * a.k_blocks + kb) * a.oh + oh) * a.ow + ow0) * ocb;
  for (int64_t i = 0; i < nreg; ++i)
    for (int64_t o = 0; o < ocb; ++o) {
      float v = acc[static_cast<std::size_t>(i * ocb + o)];
      if (a.scale) v = v * a.scale[k0 + o] + a.shift[k0 + o];
      if (a.bias) v = v + a.bias[k0 + o];
      if (a.residual) v = v + a.residual[out_off + i * ocb + o];
      if (a.relu) v = std::max(v, 0.0f);
      a.out[out_off + i * ocb + o] = v;
    }
}

using TileFn = void (*)(const ConvArgs&, int64_t, int64_t, int64_t, int64_t);

template <int OcBn, int RegN>
TileFn tile_for_kernel(int kernel_variant) {
  switch (kernel_variant) {
    case 1: return &conv_tile<OcBn, RegN, 1, 1>;
    case 3: return &conv_tile<OcBn, RegN, 3, 3>;
    case kPragmaUnroll: return &conv_tile<OcBn, RegN, kPragmaUnroll, kPragmaUnroll>;
    default: return &conv_tile<OcBn, RegN, kRuntimeKernel, kRuntimeKernel>;
  }
}

template <int OcBn>
TileFn tile_for_reg(int reg_n, int kernel_variant) {
  switch (reg_n) {
    case 1: return tile_for_kernel<OcBn, 1>(kernel_variant);
    case 2: return tile_for_kernel<OcBn, 2>(kernel_variant);
    case 4: return tile_for_kernel<OcBn, 4>(kernel_variant);
    case 8: return tile_for_kernel<OcBn, 8>(kernel_variant);
    case 16: return tile_for_kernel<OcBn, 16>(kernel_variant);
    case 32: return tile_for_kernel<OcBn, 32>(kernel_variant);
    default: return nullptr;
  }
}

inline TileFn select_tile(int oc_bn, int reg_n, int kernel_variant) {
  switch (oc_bn) {
    case 4: return tile_for_reg<4>(reg_n, kernel_variant);
    case 8: return tile_for_reg<8>(reg_n, kernel_variant);
    case 16: return tile_for_reg<16>(reg_n, kernel_variant);
    case 32: return tile_for_reg<32>(reg_n, kernel_variant);
    default: return nullptr;
  }
}

/// unroll_ker replicates the kernel loop when R*S <= 25; 1x1 and 3x3 get
/// fully specialised bodies, other small kernels a compiler-unrolled loop.
inline int kernel_variant(const ConvWorkload& wl, bool unroll) {
  if (!unroll || wl.kernel_h * wl.kernel_w > 25) return kRuntimeKernel;
  if (wl.kernel_h == 1 && wl.kernel_w == 1) return 1;
  if (wl.kernel_h == 3 && wl.kernel_w == 3) return 3;
  return kPragmaUnroll;
}

inline void check_channel_vector(std::span<const float> v, int channels, const char* what) {
  NEOPLAN_CHECK(v.empty() || static_cast<int>(v.size()) == channels, ErrorCode::kShapeMismatch,
                std::string(what) + " vector length must equal out_channel");
}

inline void check_epilogue(const Epilogue& epi, const ConvWorkload& wl, const Shape& out_shape,
                           const Layout& out_layout) {
  check_channel_vector(epi.scale, wl.out_channel, "scale");
  check_channel_vector(epi.shift, wl.out_channel, "shift");
  check_channel_vector(epi.bias, wl.out_channel, "bias");
  NEOPLAN_CHECK(epi.scale.size() == epi.shift.size(), ErrorCode::kShapeMismatch,
                "scale and shift must both be present or absent");
  if (epi.residual) {
    NEOPLAN_CHECK(epi.residual->shape == out_shape && epi.residual->layout == out_layout,
                  ErrorCode::kShapeMismatch,
                  "residual " + shape_str(epi.residual->shape) + " " + epi.residual->layout.str() +
                      " does not match conv output " + shape_str(out_shape) + " " +
                      out_layout.str());
  }
}

inline void apply_epilogue_scalar(float& v, const Epilogue& epi, int64_t k, int64_t out_index) {
  if (!epi.scale.empty()) v = v * epi.scale[k] + epi.shift[k];
  if (!epi.bias.empty()) v = v + epi.bias[k];
  if (epi.residual) v = v + epi.residual->data[static_cast<std::size_t>(out_index)];
  if (epi.relu) v = std::max(v, 0.0f);
}

/// Naive six-loop convolution of output channels [k_begin, k_end) of batch n.
inline void conv_reference_channels(const TensorView& in, const TensorView& w,
                                    const ConvWorkload& wl, const Epilogue& epi, float* out,
                                    int64_t n, int64_t k_begin, int64_t k_end) {
  const int64_t C = wl.in_channel, H = wl.in_h, W = wl.in_w;
  const int64_t R = wl.kernel_h, S = wl.kernel_w;
  const int64_t OH = wl.out_h(), OW = wl.out_w(), K = wl.out_channel;
  const float* x = in.data.data() + n * C * H * W;
  const float* wt = w.data.data();
  for (int64_t k = k_begin; k < k_end; ++k)
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow) {
        float acc = 0.0f;
        for (int64_t c = 0; c < C; ++c)
          for (int64_t r = 0; r < R; ++r) {
            const int64_t ih = oh * wl.stride - wl.pad + r;
            if (ih < 0 || ih >= H) continue;
            for (int64_t s = 0; s < S; ++s) {
              const int64_t iw = ow * wl.stride - wl.pad + s;
              if (iw < 0 || iw >= W) continue;
              acc += x[(c * H + ih) * W + iw] * wt[((k * C + c) * R + r) * S + s];
            }
          }
        const int64_t idx = ((n * K + k) * OH + oh) * OW + ow;
        apply_epilogue_scalar(acc, epi, k, idx);
        out[idx] = acc;
      }
}

inline void check_reference_operands(const TensorView& in, const TensorView& w,
                                     const ConvWorkload& wl) {
  wl.validate();
  NEOPLAN_CHECK(in.layout.tag == LayoutTag::kNCHW && in.shape.size() == 4 &&
                    in.shape[1] == wl.in_channel && in.shape[2] == wl.in_h &&
                    in.shape[3] == wl.in_w,
                ErrorCode::kShapeMismatch,
                "ifmap " + shape_str(in.shape) + " " + in.layout.str() + " does not match " +
                    wl.str());
  NEOPLAN_CHECK(w.layout.tag == LayoutTag::kKCRS &&
                    w.shape == Shape({wl.out_channel, wl.in_channel, wl.kernel_h, wl.kernel_w}),
                ErrorCode::kShapeMismatch,
                "weights " + shape_str(w.shape) + " " + w.layout.str() + " do not match " +
                    wl.str());
}

}  // namespace detail

inline Shape conv_output_shape(int64_t batch, const ConvWorkload& wl, const Layout& layout) {
  return feature_map_shape({batch, wl.out_channel, wl.out_h(), wl.out_w()}, layout);
}

/// Ground-truth convolution on NCHW / KCRS with zero padding.
inline Tensor conv_reference(const Tensor& ifmap, const Tensor& weights, const ConvWorkload& wl,
                             const Epilogue& epi = {}) {
  detail::check_reference_operands(ifmap.view(), weights.view(), wl);
  const int64_t batch = ifmap.shape()[0];
  Tensor out(conv_output_shape(batch, wl, Layout::nchw()), Layout::nchw());
  detail::check_epilogue(epi, wl, out.shape(), out.layout());
  for (int64_t n = 0; n < batch; ++n) {
    detail::conv_reference_channels(ifmap.view(), weights.view(), wl, epi, out.data().data(), n, 0,
                                    wl.out_channel);
  }
  return out;
}

/// The reference loop nest split over output channels; this is the
/// unoptimised NCHW baseline and is bit-identical to conv_reference.
inline void conv_nchw_into(const TensorView& ifmap, const TensorView& weights,
                           const ConvWorkload& wl, const Epilogue& epi,
                           const MutableTensorView& out, ThreadPool& pool) {
  detail::check_reference_operands(ifmap, weights, wl);
  const int64_t batch = ifmap.shape[0];
  NEOPLAN_CHECK(out.shape == conv_output_shape(batch, wl, Layout::nchw()), ErrorCode::kShapeMismatch,
                "output buffer shape " + shape_str(out.shape));
  detail::check_epilogue(epi, wl, out.shape, Layout::nchw());
  pool.parallel_for(batch * wl.out_channel, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const int64_t n = t / wl.out_channel, k = t % wl.out_channel;
      detail::conv_reference_channels(ifmap, weights, wl, epi, out.data.data(), n, k, k + 1);
    }
  });
}

/// Blocked direct convolution writing into a caller-provided NCHW[oc_bn]c
/// buffer.
inline void conv_blocked_into(const TensorView& ifmap, const TensorView& weights,
                              const ConvWorkload& wl, const ConvSchedule& sch, const Epilogue& epi,
                              const MutableTensorView& out, ThreadPool& pool) {
  wl.validate();
  NEOPLAN_CHECK(sch.valid_for(wl), ErrorCode::kScheduleInvalid,
                "schedule " + sch.str() + " invalid for " + wl.str());
  const int icb = sch.ic_bn, ocb = sch.oc_bn;
  NEOPLAN_CHECK(ifmap.layout == Layout::nchwc(icb) && ifmap.shape.size() == 5,
                ErrorCode::kWrongLayout,
                "ifmap layout " + ifmap.layout.str() + " does not match ic_bn=" +
                    std::to_string(icb));
  const int64_t batch = ifmap.shape[0];
  NEOPLAN_CHECK(ifmap.shape == feature_map_shape({batch, wl.in_channel, wl.in_h, wl.in_w},
                                                 ifmap.layout),
                ErrorCode::kShapeMismatch, "ifmap " + shape_str(ifmap.shape) + " vs " + wl.str());
  NEOPLAN_CHECK(weights.layout == Layout::kcrsck(icb, ocb), ErrorCode::kWrongLayout,
                "weight layout " + weights.layout.str() + " does not match schedule " + sch.str());
  NEOPLAN_CHECK(weights.shape == packed_weight_shape({wl.out_channel, wl.in_channel, wl.kernel_h,
                                                      wl.kernel_w},
                                                     icb, ocb),
                ErrorCode::kShapeMismatch, "weights " + shape_str(weights.shape));
  const Layout out_layout = Layout::nchwc(ocb);
  NEOPLAN_CHECK(out.layout == out_layout && out.shape == conv_output_shape(batch, wl, out_layout),
                ErrorCode::kShapeMismatch, "output buffer " + shape_str(out.shape));
  detail::check_epilogue(epi, wl, out.shape, out_layout);

  detail::ConvArgs a;
  a.icb = icb;
  a.ocb = ocb;
  a.c_blocks = wl.in_channel / icb;
  a.k_blocks = wl.out_channel / ocb;
  a.ph = wl.in_h + 2 * wl.pad;
  a.pw = wl.in_w + 2 * wl.pad;
  a.kh = wl.kernel_h;
  a.kw = wl.kernel_w;
  a.stride = wl.stride;
  a.oh = wl.out_h();
  a.ow = wl.out_w();
  a.w = weights.data.data();
  a.out = out.data.data();
  a.residual = epi.residual ? epi.residual->data.data() : nullptr;
  a.scale = epi.scale.empty() ? nullptr : epi.scale.data();
  a.shift = epi.shift.empty() ? nullptr : epi.shift.data();
  a.bias = epi.bias.empty() ? nullptr : epi.bias.data();
  a.relu = epi.relu;

  // Zero border materialised once so the tile loops never branch on bounds.
  std::unique_ptr<float[], detail::AlignedFree> padded;
  if (wl.pad > 0) {
    const int64_t rows = batch * a.c_blocks;
    padded = detail::aligned_floats(rows * a.ph * a.pw * icb);
    float* dst = padded.get();
    const float* src = ifmap.data.data();
    const int64_t row_in = static_cast<int64_t>(wl.in_w) * icb;
    pool.parallel_for(rows, [&](int64_t lo, int64_t hi) {
      for (int64_t plane = lo; plane < hi; ++plane) {
        float* p = dst + plane * a.ph * a.pw * icb;
        std::fill_n(p, a.ph * a.pw * icb, 0.0f);
        for (int64_t h = 0; h < wl.in_h; ++h) {
          std::copy_n(src + (plane * wl.in_h + h) * row_in, row_in,
                      p + ((h + wl.pad) * a.pw + wl.pad) * icb);
        }
      }
    });
    a.in = dst;
  } else {
    a.in = ifmap.data.data();
  }

  const int variant = detail::kernel_variant(wl, sch.unroll_ker);
  const detail::TileFn main_tile = detail::select_tile(ocb, sch.reg_n, variant);
  const detail::TileFn tail_tile = detail::select_tile(ocb, 1, variant);
  const int64_t reg_n = sch.reg_n;
  const int64_t main_cols = a.ow / reg_n * reg_n;

  pool.parallel_for(batch * a.k_blocks * a.oh, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const int64_t oh = t % a.oh;
      const int64_t kb = (t / a.oh) % a.k_blocks;
      const int64_t n = t / (a.oh * a.k_blocks);
      for (int64_t ow0 = 0; ow0 < main_cols; ow0 += reg_n) {
        if (main_tile) {
          main_tile(a, n, kb, oh, ow0);
        } else {
          detail::conv_tile_generic(a, n, kb, oh, ow0, reg_n);
        }
      }
      for (int64_t ow0 = main_cols; ow0 < a.ow; ++ow0) {
        if (tail_tile) {
          tail_tile(a, n, kb, oh, ow0);
        } else {
          detail::conv_tile_generic(a, n, kb, oh, ow0, 1);
        }
      }
    }
  });
}

inline Tensor conv_blocked(const Tensor& ifmap, const Tensor& weights, const ConvWorkload& wl,
                           const ConvSchedule& sch, const Epilogue& epi, ThreadPool& pool) {
  NEOPLAN_CHECK(sch.valid_for(wl), ErrorCode::kScheduleInvalid,
                "schedule " + sch.str() + " invalid for " + wl.str());
  NEOPLAN_CHECK(!ifmap.shape().empty(), ErrorCode::kShapeMismatch, "empty ifmap");
  const Layout out_layout = Layout::nchwc(sch.oc_bn);
  Tensor out(conv_output_shape(ifmap.shape()[0], wl, out_layout), out_layout);
  conv_blocked_into(ifmap.view(), weights.view(), wl, sch, epi, out.mutable_view(), pool);
  return out;
}

}  // namespace neoplan
