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

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neoplan/error.hpp"

namespace neoplan {

using Shape = std::vector<int64_t>;

inline constexpr std::size_t kTensorAlignment = 64;

enum class DataType : uint8_t { kF32 = 0 };

enum class LayoutTag : uint8_t {
  kNCHW,
  kNHWC,
  kNCHWc,   // NCHW[x]c, rank 5: (N, C/x, H, W, x)
  kKCRS,
  kKCRSck,  // KCRS[x]c[y]k, rank 6: (K/y, C/x, R, S, x, y)
  kPlain,   // row-major of any rank (vectors, matrices)
};

struct Layout {
  LayoutTag tag = LayoutTag::kNCHW;
  int x = 0;
  int y = 0;

  static Layout nchw() { return {LayoutTag::kNCHW, 0, 0}; }
  static Layout nhwc() { return {LayoutTag::kNHWC, 0, 0}; }
  static Layout kcrs() { return {LayoutTag::kKCRS, 0, 0}; }
  static Layout plain() { return {LayoutTag::kPlain, 0, 0}; }
  static Layout nchwc(int x) {
    NEOPLAN_CHECK(x >= 1, ErrorCode::kInvalidArgument, "channel split must be >= 1");
    return {LayoutTag::kNCHWc, x, 0};
  }
  static Layout kcrsck(int x, int y) {
    NEOPLAN_CHECK(x >= 1 && y >= 1, ErrorCode::kInvalidArgument, "weight splits must be >= 1");
    return {LayoutTag::kKCRSck, x, y};
  }

  /// Feature-map layout for a channel block; 0 means plain NCHW.
  static Layout feature_map(int block) { return block > 0 ? nchwc(block) : nchw(); }

  int rank() const {
    switch (tag) {
      case LayoutTag::kNCHW:
      case LayoutTag::kNHWC:
      case LayoutTag::kKCRS: return 4;
      case LayoutTag::kNCHWc: return 5;
      case LayoutTag::kKCRSck: return 6;
      case LayoutTag::kPlain: return -1;
    }
    return -1;
  }

  bool is_feature_map() const { return tag == LayoutTag::kNCHW || tag == LayoutTag::kNCHWc; }

  /// Innermost channel block of a feature map. NCHW is memory-identical to NCHW1c.
  int channel_block() const { return tag == LayoutTag::kNCHWc ? x : 1; }

  std::string str() const {
    switch (tag) {
      case LayoutTag::kNCHW: return "NCHW";
      case LayoutTag::kNHWC: return "NHWC";
      case LayoutTag::kKCRS: return "KCRS";
      case LayoutTag::kPlain: return "plain";
      case LayoutTag::kNCHWc: return "NCHW" + std::to_string(x) + "c";
      case LayoutTag::kKCRSck:
        return "KCRS" + std::to_string(x) + "c" + std::to_string(y) + "k";
    }
    return "?";
  }

  static Layout parse(std::string_view s) {
    if (s == "NCHW") return nchw();
    if (s == "NHWC") return nhwc();
    if (s == "KCRS") return kcrs();
    if (s == "plain") return plain();
    auto parse_int = [&](std::string_view digits) {
      NEOPLAN_CHECK(!digits.empty() && std::all_of(digits.begin(), digits.end(),
                                                   [](char c) { return c >= '0' && c <= '9'; }),
                    ErrorCode::kInvalidArgument, "bad layout string: " + std::string(s));
      return std::stoi(std::string(digits));
    };
    if (s.starts_with("NCHW") && s.ends_with("c")) {
      return nchwc(parse_int(s.substr(4, s.size() - 5)));
    }
    if (s.starts_with("KCRS") && s.ends_with("k")) {
      auto body = s.substr(4, s.size() - 5);
      auto cpos = body.find('c');
      NEOPLAN_CHECK(cpos != std::string_view::npos, ErrorCode::kInvalidArgument,
                    "bad layout string: " + std::string(s));
      return kcrsck(parse_int(body.substr(0, cpos)), parse_int(body.substr(cpos + 1)));
    }
    throw Error(ErrorCode::kInvalidArgument, "bad layout string: " + std::string(s));
  }

  friend bool operator==(const Layout&, const Layout&) = default;
  friend auto operator<=>(const Layout&, const Layout&) = default;
};

struct TensorSpec {
  Shape shape;
  DataType dtype = DataType::kF32;
  Layout layout;

  int64_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), int64_t{1}, std::multiplies<>());
  }
  friend bool operator==(const TensorSpec&, const TensorSpec&) = default;
};

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

inline int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), int64_t{1}, std::multiplies<>());
}

/// Logical (N, C, H, W) of a feature-map spec in NCHW or NCHW[x]c.
inline Shape logical_nchw(const TensorSpec& spec) {
  const auto& s = spec.shape;
  switch (spec.layout.tag) {
    case LayoutTag::kNCHW: return s;
    case LayoutTag::kNCHWc: return {s[0], s[1] * s[4], s[2], s[3]};
    case LayoutTag::kNHWC: return {s[0], s[3], s[1], s[2]};
    default:
      throw Error(ErrorCode::kWrongLayout, "not a feature map layout: " + spec.layout.str());
  }
}

/// Physical shape of a logical NCHW feature map stored in `layout`.
inline Shape feature_map_shape(const Shape& nchw, const Layout& layout) {
  switch (layout.tag) {
    case LayoutTag::kNCHW: return nchw;
    case LayoutTag::kNCHWc:
      NEOPLAN_CHECK(nchw[1] % layout.x == 0, ErrorCode::kIndivisibleChannel,
                    "C=" + std::to_string(nchw[1]) + " not divisible by x=" + std::to_string(layout.x));
      return {nchw[0], nchw[1] / layout.x, nchw[2], nchw[3], layout.x};
    default:
      throw Error(ErrorCode::kWrongLayout, "not a feature map layout: " + layout.str());
  }
}

namespace detail {

struct AllocationStats {
  std::atomic<int64_t> count{0};
  std::atomic<int64_t> bytes{0};
};

inline AllocationStats& allocation_stats() {
  static AllocationStats stats;
  return stats;
}

struct AlignedFree {
  void operator()(float* p) const noexcept { std::free(p); }
};

inline std::unique_ptr<float[], AlignedFree> aligned_floats(int64_t n) {
  std::size_t bytes = static_cast<std::size_t>(std::max<int64_t>(n, 1)) * sizeof(float);
  bytes = (bytes + kTensorAlignment - 1) / kTensorAlignment * kTensorAlignment;
  auto* p = static_cast<float*>(std::aligned_alloc(kTensorAlignment, bytes));
  if (!p) throw std::bad_alloc();
  auto& stats = allocation_stats();
  stats.count.fetch_add(1, std::memory_order_relaxed);
  stats.bytes.fetch_add(n * static_cast<int64_t>(sizeof(float)), std::memory_order_relaxed);
  return std::unique_ptr<float[], AlignedFree>(p);
}

}  // namespace detail

/// Snapshot of tensor-buffer allocations; used to check the memory contract
/// of layout transforms.
struct AllocationCounter {
  int64_t count0 = detail::allocation_stats().count.load();
  int64_t bytes0 = detail::allocation_stats().bytes.load();
  int64_t count() const { return detail::allocation_stats().count.load() - count0; }
  int64_t bytes() const { return detail::allocation_stats().bytes.load() - bytes0; }
};

template <class T>
struct BasicTensorView {
  std::span<T> data;
  Shape shape;
  Layout layout;

  TensorSpec spec() const { return {shape, DataType::kF32, layout}; }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

using TensorView = BasicTensorView<const float>;
using MutableTensorView = BasicTensorView<float>;

/// Dense f32 tensor with a 64-byte aligned, row-major buffer. Copies are deep.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, Layout layout) : shape_(std::move(shape)), layout_(layout) {
    check_shape();
    size_ = neoplan::numel(shape_);
    data_ = detail::aligned_floats(size_);
    std::fill_n(data_.get(), size_, 0.0f);
  }

  static Tensor from_data(Shape shape, Layout layout, std::span<const float> values) {
    Tensor t(std::move(shape), layout);
    NEOPLAN_CHECK(static_cast<int64_t>(values.size()) == t.size_, ErrorCode::kShapeMismatch,
                  "data length does not match shape " + shape_str(t.shape_));
    std::copy(values.begin(), values.end(), t.data_.get());
    return t;
  }

  Tensor(const Tensor& other) : shape_(other.shape_), layout_(other.layout_), size_(other.size_) {
    if (other.data_) {
      data_ = detail::aligned_floats(size_);
      std::copy_n(other.data_.get(), size_, data_.get());
    }
  }
  Tensor& operator=(const Tensor& other) {
    if (this != &other) *this = Tensor(other);
    return *this;
  }
  Tensor(Tensor&&) noexcept = default;
  Tensor& operator=(Tensor&&) noexcept = default;

  const Shape& shape() const { return shape_; }
  const Layout& layout() const { return layout_; }
  TensorSpec spec() const { return {shape_, DataType::kF32, layout_}; }
  int64_t size() const { return size_; }
  bool empty() const { return !data_; }

  std::span<float> data() { return {data_.get(), static_cast<std::size_t>(size_)}; }
  std::span<const float> data() const { return {data_.get(), static_cast<std::size_t>(size_)}; }

  TensorView view() const { return {data(), shape_, layout_}; }
  MutableTensorView mutable_view() { return {data(), shape_, layout_}; }

  float& at(std::initializer_list<int64_t> index) { return data_[offset(index)]; }
  float at(std::initializer_list<int64_t> index) const { return data_[offset(index)]; }

  /// Bitwise equality of shape, layout and every f32 bit pattern.
  bool bit_equal(const Tensor& other) const {
    return shape_ == other.shape_ && layout_ == other.layout_ &&
           std::memcmp(data_.get(), other.data_.get(), size_ * sizeof(float)) == 0;
  }

 private:
  void check_shape() const {
    for (auto d : shape_) {
      NEOPLAN_CHECK(d >= 1, ErrorCode::kShapeMismatch, "non-positive dim in " + shape_str(shape_));
    }
    int rank = layout_.rank();
    NEOPLAN_CHECK(rank < 0 || rank == static_cast<int>(shape_.size()), ErrorCode::kShapeMismatch,
                  "shape " + shape_str(shape_) + " has wrong rank for layout " + layout_.str());
    if (layout_.tag == LayoutTag::kNCHWc) {
      NEOPLAN_CHECK(shape_[4] == layout_.x, ErrorCode::kShapeMismatch, "inner dim must equal x");
    }
    if (layout_.tag == LayoutTag::kKCRSck) {
      NEOPLAN_CHECK(shape_[4] == layout_.x && shape_[5] == layout_.y, ErrorCode::kShapeMismatch,
                    "inner dims must equal (x, y)");
    }
  }

  int64_t offset(std::initializer_list<int64_t> index) const {
    NEOPLAN_CHECK(index.size() == shape_.size(), ErrorCode::kInvalidArgument, "index rank mismatch");
    int64_t off = 0;
    std::size_t i = 0;
    for (auto v : index) off = off * shape_[i++] + v;
    return off;
  }

  Shape shape_;
  Layout layout_;
  int64_t size_ = 0;
  std::unique_ptr<float[], detail::AlignedFree> data_;
};

/// Fills with uniform values in [lo, hi) from a seeded generator.
inline void fill_uniform(Tensor& t, uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
}

inline Tensor random_tensor(Shape shape, Layout layout, uint64_t seed, float lo = -1.0f,
                            float hi = 1.0f) {
  Tensor t(std::move(shape), layout);
  fill_uniform(t, seed, lo, hi);
  return t;
}

/// Max over elements of |a - e| / max(|e|, 1). Relative for values of
/// magnitude >= 1, absolute below that so near-zero sums do not blow up.
inline double max_rel_error(std::span<const float> actual, std::span<const float> expected) {
  NEOPLAN_CHECK(actual.size() == expected.size(), ErrorCode::kShapeMismatch,
                "error metric on tensors of different sizes");
  double worst = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    double e = expected[i];
    double diff = std::abs(static_cast<double>(actual[i]) - e);
    if (std::isnan(diff)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, diff / std::max(std::abs(e), 1.0));
  }
  return worst;
}

inline double max_rel_error(const Tensor& actual, const Tensor& expected) {
  NEOPLAN_CHECK(actual.shape() == expected.shape(), ErrorCode::kShapeMismatch,
                "compare " + shape_str(actual.shape()) + " vs " + shape_str(expected.shape()));
  return max_rel_error(actual.data(), expected.data());
}

}  // namespace neoplan
