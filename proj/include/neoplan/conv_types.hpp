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

#include <compare>
#include <optional>
#include <span>
#include <string>

#include "neoplan/error.hpp"
#include "neoplan/tensor.hpp"

namespace neoplan {

/// A convolution problem, identified by feature-map and kernel sizes. This
/// is also the key under which tuned schedules are stored.
struct ConvWorkload {
  int in_channel = 1;
  int out_channel = 1;
  int in_h = 1;
  int in_w = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int pad = 0;

  int out_h() const { return (in_h + 2 * pad - kernel_h) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel_w) / stride + 1; }

  void validate() const {
    NEOPLAN_CHECK(in_channel >= 1 && out_channel >= 1 && in_h >= 1 && in_w >= 1 &&
                      kernel_h >= 1 && kernel_w >= 1 && stride >= 1 && pad >= 0,
                  ErrorCode::kInvalidArgument, "bad workload " + str());
    NEOPLAN_CHECK(in_h + 2 * pad >= kernel_h && in_w + 2 * pad >= kernel_w,
                  ErrorCode::kShapeMismatch, "kernel larger than padded input in " + str());
  }

  std::string str() const {
    return "C" + std::to_string(in_channel) + "_K" + std::to_string(out_channel) + "_H" +
           std::to_string(in_h) + "_W" + std::to_string(in_w) + "_R" + std::to_string(kernel_h) +
           "_S" + std::to_string(kernel_w) + "_st" + std::to_string(stride) + "_p" +
           std::to_string(pad);
  }

  friend auto operator<=>(const ConvWorkload&, const ConvWorkload&) = default;
};

/// (ic_bn, oc_bn, reg_n, unroll_ker). ic_bn == 0 marks a conv that has not
/// been assigned a blocked layout and runs on plain NCHW.
struct ConvSchedule {
  int ic_bn = 0;
  int oc_bn = 0;
  int reg_n = 1;
  bool unroll_ker = false;

  bool blocked() const { return ic_bn > 0; }

  bool valid_for(const ConvWorkload& wl) const {
    return ic_bn >= 1 && oc_bn >= 1 && reg_n >= 1 && wl.in_channel % ic_bn == 0 &&
           wl.out_channel % oc_bn == 0;
  }

  std::string str() const {
    return "(" + std::to_string(ic_bn) + "," + std::to_string(oc_bn) + "," +
           std::to_string(reg_n) + "," + (unroll_ker ? "true" : "false") + ")";
  }

  friend auto operator<=>(const ConvSchedule&, const ConvSchedule&) = default;
};

/// Per-element post-processing fused into the conv store, applied in the
/// order scale/shift, bias, residual add, relu. Channel vectors are indexed
/// by logical output channel.
struct Epilogue {
  std::span<const float> scale;
  std::span<const float> shift;
  std::span<const float> bias;
  std::optional<TensorView> residual;
  bool relu = false;
};

}  // namespace neoplan
