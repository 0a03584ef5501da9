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

// Test oracles. Everything here is written from first principles and shares
// no code paths with the library beyond the data containers.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "neoplan/neoplan.hpp"

namespace neoplan::testing {

// ---------------------------------------------------------------------------
// Conv

/// Direct convolution with double accumulation, NCHW in, NCHW out.
inline Tensor naive_conv(const Tensor& in, const Tensor& w, int stride, int pad,
                         std::span<const float> bias = {}, bool relu = false) {
  const int64_t n = in.shape()[0], c = in.shape()[1], h = in.shape()[2], wd = in.shape()[3];
  const int64_t k = w.shape()[0], r = w.shape()[2], s = w.shape()[3];
  const int64_t oh = (h + 2 * pad - r) / stride + 1;
  const int64_t ow = (wd + 2 * pad - s) / stride + 1;
  Tensor out({n, k, oh, ow}, Layout::nchw());
  auto id = in.data();
  auto wdat = w.data();
  auto od = out.data();
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ko = 0; ko < k; ++ko)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(ko)];
          for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t ry = 0; ry < r; ++ry)
              for (int64_t sx = 0; sx < s; ++sx) {
                const int64_t iy = y * stride + ry - pad;
                const int64_t ix = x * stride + sx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += static_cast<double>(id[((b * c + ci) * h + iy) * wd + ix]) *
                       wdat[((ko * c + ci) * r + ry) * s + sx];
              }
          float v = static_cast<float>(acc);
          if (relu) v = std::max(v, 0.0f);
          od[((b * k + ko) * oh + y) * ow + x] = v;
        }
  return out;
}

// ---------------------------------------------------------------------------
// Layout index oracles

/// NCHW -> NCHW[x]c by the defining index relation
/// out[n][c/x][h][w][c%x] = in[n][c][h][w].
inline Tensor oracle_pack(const Tensor& in, int x) {
  const int64_t n = in.shape()[0], c = in.shape()[1], h = in.shape()[2], w = in.shape()[3];
  Tensor out({n, c / x, h, w, x}, Layout::nchwc(x));
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
          out.at({b, ch / x, i, j, ch % x}) = in.at({b, ch, i, j});
        }
  return out;
}

/// KCRS -> KCRS[x]c[y]k: out[k/y][c/x][r][s][c%x][k%y] = in[k][c][r][s].
inline Tensor oracle_pack_weights(const Tensor& in, int x, int y) {
  const int64_t k = in.shape()[0], c = in.shape()[1], r = in.shape()[2], s = in.shape()[3];
  Tensor out({k / y, c / x, r, s, x, y}, Layout::kcrsck(x, y));
  for (int64_t a = 0; a < k; ++a)
    for (int64_t b = 0; b < c; ++b)
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < s; ++j) {
          out.at({a / y, b / x, i, j, b % x, a % y}) = in.at({a, b, i, j});
        }
  return out;
}

// ---------------------------------------------------------------------------
// Planning fixtures

struct PlanningCase {
  Graph graph;
  CandidateMap cands;
  TransformCostFn cost;
};

/// Deterministic synthetic transform cost: zero for identical layouts,
/// otherwise proportional to the tensor size with a factor that depends on
/// both blocks.
inline TransformCostFn synthetic_transform_cost(uint64_t salt) {
  return [salt](const Shape& logical, const Layout& from, const Layout& to) -> Cost {
    if (from == to) return Cost{0};
    const uint64_t a = static_cast<uint64_t>(from.channel_block()) + (from.tag == LayoutTag::kNCHW ? 100 : 0);
    const uint64_t b = static_cast<uint64_t>(to.channel_block()) + (to.tag == LayoutTag::kNCHW ? 100 : 0);
    uint64_t h = (a * 1000003u) ^ (b * 999983u) ^ (salt * 0x9E3779B97F4A7C15ull);
    h ^= h >> 29;
    h *= 0xBF58476D1CE4E5B9ull;
    h ^= h >> 32;
    const int64_t size = numel(logical);
    return Cost{size / 4 + static_cast<int64_t>(h % 7) * size / 8 + 1};
  };
}

/// Random DAG of convs, ReLUs, adds and channel concats over 8x8 feature
/// maps whose channel counts are multiples of 8. Each conv receives between
/// 1 and `max_pairs` random (ic_bn, oc_bn) candidates with random costs.
/// `chain_only` restricts the graph to a conv/ReLU list.
inline PlanningCase random_planning_case(uint64_t seed, int max_convs = 8, int max_pairs = 4,
                                         bool chain_only = false) {
  std::mt19937_64 rng(seed);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  GraphBuilder b("plan" + std::to_string(seed));
  std::vector<std::pair<int, int>> fms;  // (node, channels)
  fms.push_back({b.input("data", {1, 8, 8, 8}), 8});
  const int target_convs = uni(1, max_convs);
  int convs = 0;
  int consts = 0;
  while (convs < target_convs) {
    const int op = chain_only ? (uni(0, 3) == 0 ? 1 : 0) : uni(0, 9);
    const auto src = chain_only ? fms.back() : fms[static_cast<std::size_t>(uni(0, static_cast<int>(fms.size()) - 1))];
    if (op <= 4) {
      const int out_c = uni(0, 2) == 0 ? 16 : 8;
      const int k = uni(0, 1) == 0 ? 1 : 3;
      const std::string name = "w" + std::to_string(consts++);
      int w = b.constant(name, random_tensor({out_c, src.second, k, k}, Layout::kcrs(), seed + consts));
      fms.push_back({b.conv(src.first, w, 1, k / 2), out_c});
      ++convs;
    } else if (op <= 6) {
      fms.push_back({b.relu(src.first), src.second});
    } else if (op <= 8) {
      std::vector<int> same;
      for (const auto& f : fms) {
        if (f.second == src.second && f.first != src.first) same.push_back(f.first);
      }
      if (same.empty()) continue;
      const int other = same[static_cast<std::size_t>(uni(0, static_cast<int>(same.size()) - 1))];
      fms.push_back({b.add(src.first, other), src.second});
    } else {
      const auto other = fms[static_cast<std::size_t>(uni(0, static_cast<int>(fms.size()) - 1))];
      if (src.second + other.second > 32) continue;
      fms.push_back({b.concat({src.first, other.first}), src.second + other.second});
    }
  }
  // Every sink becomes a graph output.
  Graph g = b.graph();
  for (const auto& f : fms) {
    if (g.consumers(f.first).empty() && g.node(f.first).kind != OpKind::kInput) {
      g.outputs.push_back(f.first);
    }
  }
  g = infer_shapes(g);

  const std::vector<int> blocks = {1, 2, 4, 8};
  PlanningCase pc;
  for (int id : conv_ids(g)) {
    std::vector<std::pair<int, int>> pairs;
    for (int ic : blocks)
      for (int oc : blocks) pairs.push_back({ic, oc});
    std::shuffle(pairs.begin(), pairs.end(), rng);
    const int n = uni(1, max_pairs);
    std::vector<SchemeCandidate> cs;
    for (int i = 0; i < n; ++i) {
      ConvSchedule s{pairs[static_cast<std::size_t>(i)].first, pairs[static_cast<std::size_t>(i)].second, 1, false};
      cs.push_back({s, Cost{uni(1'000, 100'000)}});
    }
    pc.cands[id] = cs;
  }
  pc.graph = std::move(g);
  pc.cost = synthetic_transform_cost(seed);
  return pc;
}

/// Objective of one full choice (conv id -> candidate index), computed by
/// walking the graph: each conv pays its execution cost, and every edge
/// into a layout-sensitive consumer pays the transform from the layout the
/// producer carries to the layout the consumer wants.
inline Cost simulate_plan_cost(const PlanningCase& pc, const std::map<int, int>& choice) {
  const Graph& g = pc.graph;
  std::map<int, Layout> carried;
  Cost total{0};
  auto sched = [&](int conv) {
    return pc.cands.at(conv)[static_cast<std::size_t>(choice.at(conv))];
  };
  auto charge = [&](NodeInput in, const Layout& want) {
    const Layout have = carried.at(in.node);
    if (!have.is_feature_map()) return;
    total += pc.cost(g.spec(in).shape, have, want);
  };
  for (int id : topo_sort(g)) {
    const Node& n = g.node(id);
    switch (n.kind) {
      case OpKind::kInput: carried[id] = Layout::nchw(); break;
      case OpKind::kConstant: carried[id] = Layout::kcrs(); break;
      case OpKind::kConv2d: {
        const auto c = sched(id);
        total += c.exec;
        charge(n.inputs[0], Layout::nchwc(c.schedule.ic_bn));
        carried[id] = Layout::nchwc(c.schedule.oc_bn);
        break;
      }
      case OpKind::kElementwiseAdd:
      case OpKind::kConcat:
        for (std::size_t i = 1; i < n.inputs.size(); ++i) charge(n.inputs[i], carried.at(n.inputs[0].node));
        carried[id] = carried.at(n.inputs[0].node);
        break;
      default: carried[id] = carried.at(n.inputs[0].node); break;
    }
  }
  for (int o : g.outputs) charge({o, 0}, Layout::nchw());
  return total;
}

/// Minimum of simulate_plan_cost over every combination.
inline Cost brute_force_min(const PlanningCase& pc) {
  std::vector<int> ids;
  for (const auto& [id, c] : pc.cands) ids.push_back(id);
  std::map<int, int> choice;
  for (int id : ids) choice[id] = 0;
  Cost best = Cost::inf();
  while (true) {
    const Cost c = simulate_plan_cost(pc, choice);
    if (c < best) best = c;
    std::size_t k = 0;
    for (; k < ids.size(); ++k) {
      int& d = choice[ids[k]];
      if (++d < static_cast<int>(pc.cands.at(ids[k]).size())) break;
      d = 0;
    }
    if (k == ids.size()) break;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Transform-count oracle

/// Distinct (value, layout) pairs that must be materialized for `assign`,
/// by walking the fused graph: blocked convs produce NCHW[oc]c and want
/// NCHW[ic]c, joins want every operand in their first operand's layout,
/// flatten/dense and graph outputs want NCHW. The returned count is the
/// number of producer->consumer edges whose endpoint layouts differ after
/// sharing identical conversions of one value.
inline int mismatched_edges(const Graph& input, const LayoutAssignment& assign) {
  const Graph g = infer_shapes(input);
  std::map<int, Layout> carried;
  std::set<std::pair<int, Layout>> needed;
  auto want = [&](NodeInput in, const Layout& l) {
    const Layout have = carried.at(in.node);
    if (have.is_feature_map() && have != l) needed.insert({in.node, l});
  };
  for (int id : topo_sort(g)) {
    const Node& n = g.node(id);
    switch (n.kind) {
      case OpKind::kInput: carried[id] = Layout::nchw(); break;
      case OpKind::kConstant: carried[id] = Layout::kcrs(); break;
      case OpKind::kConv2d: {
        const auto& s = assign.convs.at(id);
        want(n.inputs[0], Layout::feature_map(s.ic_bn));
        const Layout out = Layout::feature_map(s.blocked() ? s.oc_bn : 0);
        if (n.attrs.has_residual) want(n.inputs.back(), out);
        carried[id] = out;
        break;
      }
      case OpKind::kElementwiseAdd:
      case OpKind::kConcat: {
        Layout l = carried.at(n.inputs[0].node);
        if (n.kind == OpKind::kConcat && l.tag == LayoutTag::kNCHWc) {
          for (const auto& in : n.inputs) {
            if (g.spec(in).shape[1] % l.x != 0) l = Layout::nchw();
          }
          if (n.attrs.axis != 1) l = Layout::nchw();
        }
        for (const auto& in : n.inputs) want(in, l);
        carried[id] = l;
        break;
      }
      case OpKind::kFlatten:
      case OpKind::kDense:
        want(n.inputs[0], Layout::nchw());
        carried[id] = Layout::plain();
        break;
      default: carried[id] = carried.at(n.inputs[0].node); break;
    }
  }
  for (int o : g.outputs) want({o, 0}, Layout::nchw());
  return static_cast<int>(needed.size());
}

/// After lowering, every edge must connect matching layouts: each
/// LayoutTransform sits between different layouts and every consumer sees
/// the layout it needs. Returns the number of offending edges.
inline int layout_violations(const Graph& lowered) {
  int bad = 0;
  for (const auto& [id, n] : lowered.nodes) {
    if (n.kind == OpKind::kLayoutTransform) {
      if (n.attrs.src_layout == n.attrs.dst_layout) ++bad;
      if (lowered.spec(n.inputs[0]).layout != n.attrs.src_layout) ++bad;
    }
    if (n.kind == OpKind::kConv2d && n.attrs.schedule.blocked()) {
      if (lowered.spec(n.inputs[0]).layout != Layout::nchwc(n.attrs.schedule.ic_bn)) ++bad;
    }
    if (n.kind == OpKind::kElementwiseAdd || n.kind == OpKind::kConcat) {
      for (const auto& in : n.inputs) {
        if (lowered.spec(in).layout != lowered.spec(n.inputs[0]).layout) ++bad;
      }
    }
  }
  for (int o : lowered.outputs) {
    if (lowered.spec(o).layout.tag == LayoutTag::kNCHWc) ++bad;
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Misc

inline bool bitwise_equal(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].shape() != b[i].shape()) return false;
    auto x = a[i].data();
    auto y = b[i].data();
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

/// max |a - e| / max(|e|, 1) across a list of outputs.
inline double max_error(const std::vector<Tensor>& actual, const std::vector<Tensor>& expected) {
  double worst = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    auto a = actual[i].data();
    auto e = expected[i].data();
    if (a.size() != e.size()) return std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double d = std::abs(static_cast<double>(a[j]) - e[j]);
      worst = std::max(worst, d / std::max(1.0, std::abs(static_cast<double>(e[j]))));
    }
  }
  return worst;
}

/// Pool that really runs `n` lanes, even on a single-core host.
inline ThreadPool::Options lanes(int n) { return ThreadPool::Options{n, false, true}; }

}  // namespace neoplan::testing
