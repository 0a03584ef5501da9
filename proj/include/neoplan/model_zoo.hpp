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

// Small seeded synthetic CNNs.

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <string_view>

#include "neoplan/graph.hpp"

namespace neoplan {

inline constexpr std::array<std::string_view, 4> kModelKinds = {"chain", "vgg-ish", "resnet-block",
                                                                "diamond-concat"};

struct ModelParams {
  std::string kind = "chain";
  int depth = 3;
  int channels = 16;
  int spatial = 0;  // 0: per-kind default
  uint64_t seed = 1;
};

namespace detail {

class ZooBuilder {
 public:
  ZooBuilder(std::string name, uint64_t seed) : b_(std::move(name)), seed_(seed) {}

  GraphBuilder& b() { return b_; }

  int conv(int x, int in_c, int out_c, int k, int stride, int pad, bool bias = true) {
    const int id = ++convs_;
    const std::string base = "conv" + std::to_string(id);
    const float bound = std::sqrt(6.0f / static_cast<float>(in_c * k * k));
    int w = b_.constant(base + ".weight",
                        random_tensor({out_c, in_c, k, k}, Layout::kcrs(), next_seed(), -bound, bound));
    std::optional<int> bvec;
    if (bias) {
      bvec = b_.constant(base + ".bias",
                         random_tensor({out_c}, Layout::plain(), next_seed(), -0.1f, 0.1f));
    }
    return b_.conv(x, w, stride, pad, bvec);
  }

  int bn(int x, int c) {
    const std::string base = "bn" + std::to_string(++bns_);
    int gamma = b_.constant(base + ".gamma", random_tensor({c}, Layout::plain(), next_seed(), 0.5f, 1.5f));
    int beta = b_.constant(base + ".beta", random_tensor({c}, Layout::plain(), next_seed(), -0.1f, 0.1f));
    int mean = b_.constant(base + ".mean", random_tensor({c}, Layout::plain(), next_seed(), -0.1f, 0.1f));
    int var = b_.constant(base + ".var", random_tensor({c}, Layout::plain(), next_seed(), 0.5f, 1.5f));
    return b_.batch_norm(x, gamma, beta, mean, var);
  }

  int dense(int x, int in_f, int out_f) {
    const std::string base = "fc" + std::to_string(++denses_);
    const float bound = std::sqrt(6.0f / static_cast<float>(in_f));
    int w = b_.constant(base + ".weight",
                        random_tensor({out_f, in_f}, Layout::plain(), next_seed(), -bound, bound));
    int bias = b_.constant(base + ".bias",
                           random_tensor({out_f}, Layout::plain(), next_seed(), -0.1f, 0.1f));
    return b_.dense(x, w, bias);
  }

 private:
  uint64_t next_seed() { return seed_ * 0x9E3779B97F4A7C15ull + (++tensors_); }

  GraphBuilder b_;
  uint64_t seed_;
  uint64_t tensors_ = 0;
  int convs_ = 0;
  int bns_ = 0;
  int denses_ = 0;
};

inline Graph gen_chain(const ModelParams& p) {
  const int hw = p.spatial > 0 ? p.spatial : 28;
  ZooBuilder z("chain", p.seed);
  int x = z.b().input("data", {1, p.channels, hw, hw});
  for (int i = 0; i < p.depth; ++i) x = z.b().relu(z.conv(x, p.channels, p.channels, 3, 1, 1));
  z.b().output(x);
  return z.b().build();
}

inline Graph gen_vgg(const ModelParams& p) {
  int hw = p.spatial > 0 ? p.spatial : 32;
  ZooBuilder z("vgg-ish", p.seed);
  int x = z.b().input("data", {1, 3, hw, hw});
  int c = 3;
  int width = p.channels;
  for (int i = 0; i < p.depth; ++i) {
    x = z.b().relu(z.conv(x, c, width, 3, 1, 1));
    c = width;
    if (hw >= 4) {
      x = z.b().max_pool(x, 2, 2);
      hw /= 2;
    }
    if (width < 4 * p.channels) width *= 2;
  }
  x = z.b().flatten(x);
  x = z.dense(x, c * hw * hw, 10);
  z.b().output(z.b().softmax(x));
  return z.b().build();
}

inline Graph gen_resnet(const ModelParams& p) {
  int hw = p.spatial > 0 ? p.spatial : 16;
  const int c = p.channels;
  ZooBuilder z("resnet-block", p.seed);
  int x = z.b().input("data", {1, c, hw, hw});
  x = z.b().relu(z.bn(z.conv(x, c, c, 3, 1, 1, false), c));
  for (int i = 0; i < p.depth; ++i) {
    int y = z.b().relu(z.bn(z.conv(x, c, c, 3, 1, 1, false), c));
    y = z.bn(z.conv(y, c, c, 3, 1, 1, false), c);
    x = z.b().relu(z.b().add(y, x));
  }
  // Projection block: both add operands come straight from convs.
  int main = z.b().relu(z.conv(x, c, 2 * c, 3, 2, 1));
  main = z.conv(main, 2 * c, 2 * c, 3, 1, 1);
  int shortcut = z.conv(x, c, 2 * c, 1, 2, 0);
  x = z.b().relu(z.b().add(main, shortcut));
  hw = (hw - 1) / 2 + 1;
  x = z.b().avg_pool(x, hw, 1);
  x = z.b().flatten(x);
  x = z.dense(x, 2 * c, 10);
  z.b().output(z.b().softmax(x));
  return z.b().build();
}

inline Graph gen_diamond(const ModelParams& p) {
  const int hw = p.spatial > 0 ? p.spatial : 16;
  const int c = p.channels;
  ZooBuilder z("diamond-concat", p.seed);
  int x = z.b().input("data", {1, c, hw, hw});
  for (int i = 0; i < p.depth; ++i) x = z.b().relu(z.conv(x, c, c, 3, 1, 1));
  const int half = std::max(1, c / 2);
  int h1 = z.b().relu(z.conv(x, c, c, 1, 1, 0));
  int h2 = z.b().relu(z.conv(x, c, c, 3, 1, 1));
  int h3 = z.b().relu(z.conv(z.b().relu(z.conv(x, c, half, 1, 1, 0)), half, c, 3, 1, 1));
  int cat = z.b().concat({h1, h2, h3}, 1);
  z.b().output(z.conv(cat, 3 * c, c, 1, 1, 0));
  return z.b().build();
}

}  // namespace detail

inline Graph gen_model(const ModelParams& p) {
  NEOPLAN_CHECK(p.depth >= 1 && p.channels >= 1 && p.spatial >= 0, ErrorCode::kInvalidArgument,
                "depth and channels must be positive");
  if (p.kind == "chain") return detail::gen_chain(p);
  if (p.kind == "vgg-ish") return detail::gen_vgg(p);
  if (p.kind == "resnet-block") return detail::gen_resnet(p);
  if (p.kind == "diamond-concat") return detail::gen_diamond(p);
  throw Error(ErrorCode::kInvalidArgument, "unknown model kind: " + p.kind);
}

inline Graph gen_model(std::string kind, int depth, int channels, uint64_t seed = 1) {
  return gen_model(ModelParams{std::move(kind), depth, channels, 0, seed});
}

}  // namespace neoplan
