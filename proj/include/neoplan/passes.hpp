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

// Graph rewrites, applied in the order
//   fold_batchnorm -> fuse_elementwise -> alter_and_insert_transforms
//   -> pretransform_weights.
// Every pass takes a graph by const reference and returns a new,
// shape-annotated graph.

#pragma once

#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "neoplan/conv.hpp"
#include "neoplan/graph.hpp"
#include "neoplan/ops.hpp"

namespace neoplan {

enum class LayoutBehavior { kOblivious, kTolerant, kDependent };

inline LayoutBehavior classify(OpKind kind) {
  switch (kind) {
    case OpKind::kReLU:
    case OpKind::kSoftmax:
    case OpKind::kElementwiseAdd:
    case OpKind::kConcat:
    case OpKind::kInput:
    case OpKind::kConstant:
    case OpKind::kLayoutTransform: return LayoutBehavior::kOblivious;
    case OpKind::kConv2d:
    case OpKind::kBatchNorm:
    case OpKind::kMaxPool:
    case OpKind::kAvgPool: return LayoutBehavior::kTolerant;
    case OpKind::kFlatten:
    case OpKind::kDense: return LayoutBehavior::kDependent;
  }
  return LayoutBehavior::kDependent;
}

inline std::string_view layout_behavior_name(LayoutBehavior b) {
  switch (b) {
    case LayoutBehavior::kOblivious: return "Oblivious";
    case LayoutBehavior::kTolerant: return "Tolerant";
    case LayoutBehavior::kDependent: return "Dependent";
  }
  return "?";
}

namespace detail {

inline bool is_constant(const Graph& g, NodeInput in) {
  return g.contains(in.node) && g.node(in.node).kind == OpKind::kConstant;
}

inline std::string unique_constant_name(const Graph& g, const std::string& base) {
  if (!g.constants.count(base)) return base;
  for (int i = 1;; ++i) {
    std::string name = base + "." + std::to_string(i);
    if (!g.constants.count(name)) return name;
  }
}

inline int add_constant(Graph& g, const std::string& base, Tensor t) {
  NodeAttrs a;
  a.name = unique_constant_name(g, base);
  a.shape = t.shape();
  a.layout = t.layout();
  g.constants[a.name] = std::make_shared<const Tensor>(std::move(t));
  return g.add(OpKind::kConstant, a, {});
}

inline std::span<const float> constant_data(const Graph& g, NodeInput in) {
  return g.constant(g.node(in.node)).data();
}

}  // namespace detail

/// Folds inference batch norms. A BatchNorm whose sole producer is an
/// unfused conv with no other users is absorbed into that conv's weights and
/// bias; any other BatchNorm is rewritten to its scale/shift form.
inline Graph fold_batchnorm(const Graph& input) {
  // Statistics are checked before shape inference so a graph feeding them
  // from a runtime tensor reports the real problem.
  for (const auto& [id, n] : input.nodes) {
    if (n.kind != OpKind::kBatchNorm || n.attrs.scale_shift) continue;
    for (std::size_t i = 1; i < n.inputs.size(); ++i) {
      if (!detail::is_constant(input, n.inputs[i])) {
        throw Error(ErrorCode::kNonConstantStatistics,
                    "batch norm " + std::to_string(id) + " has non-constant statistics", id);
      }
    }
  }
  Graph g = infer_shapes(input);
  for (int id : topo_sort(g)) {
    Node bn = g.node(id);
    if (bn.kind != OpKind::kBatchNorm || bn.attrs.scale_shift) continue;
    std::vector<float> scale, shift;
    batch_norm_coefficients(detail::constant_data(g, bn.inputs[1]),
                            detail::constant_data(g, bn.inputs[2]),
                            detail::constant_data(g, bn.inputs[3]),
                            detail::constant_data(g, bn.inputs[4]), bn.attrs.eps, scale, shift);
    const int producer = bn.inputs[0].node;
    const Node& p = g.node(producer);
    const bool foldable = p.kind == OpKind::kConv2d && g.use_count(producer) == 1 &&
                          !p.attrs.relu && !p.attrs.has_residual &&
                          detail::is_constant(g, p.inputs[1]) &&
                          g.spec(p.inputs[1]).layout.tag == LayoutTag::kKCRS &&
                          (!p.attrs.has_bias || detail::is_constant(g, p.inputs[2]));
    if (foldable) {
      Node conv = p;
      const Node& wnode = g.node(conv.inputs[1].node);
      Tensor w = g.constant(wnode);
      const int64_t per_k = w.size() / w.shape()[0];
      auto wd = w.data();
      for (int64_t k = 0; k < w.shape()[0]; ++k)
        for (int64_t j = 0; j < per_k; ++j) wd[k * per_k + j] *= scale[k];
      std::vector<float> bias(shift);
      if (conv.attrs.has_bias) {
        auto b = detail::constant_data(g, conv.inputs[2]);
        for (std::size_t k = 0; k < bias.size(); ++k) bias[k] = b[k] * scale[k] + shift[k];
      }
      const int64_t k_count = static_cast<int64_t>(bias.size());
      int new_w = detail::add_constant(g, wnode.attrs.name + ".bnfold", std::move(w));
      int new_b = detail::add_constant(
          g, wnode.attrs.name + ".bnbias",
          Tensor::from_data({k_count}, Layout::plain(), bias));
      Node& c = g.node(producer);
      c.inputs[1] = {new_w, 0};
      if (c.attrs.has_bias) {
        c.inputs[2] = {new_b, 0};
      } else {
        c.attrs.has_bias = true;
        c.inputs.insert(c.inputs.begin() + 2, NodeInput{new_b, 0});
      }
      g.replace_uses(id, {producer, 0});
      g.nodes.erase(id);
    } else {
      const int64_t c = static_cast<int64_t>(scale.size());
      const std::string base = "bn" + std::to_string(id);
      int s = detail::add_constant(g, base + ".scale", Tensor::from_data({c}, Layout::plain(), scale));
      int t = detail::add_constant(g, base + ".shift", Tensor::from_data({c}, Layout::plain(), shift));
      Node& n = g.node(id);
      n.attrs.scale_shift = true;
      n.inputs = {n.inputs[0], {s, 0}, {t, 0}};
    }
  }
  g.remove_dead_nodes();
  return infer_shapes(g);
}

/// Folds conv -> ReLU and conv -> ElementwiseAdd into conv epilogues. A conv
/// is only extended when its output has exactly one use, and the epilogue
/// order (bias, residual, relu) must be preserved, so a conv that already
/// applies relu does not absorb a later add.
inline Graph fuse_elementwise(const Graph& input) {
  Graph g = infer_shapes(input);
  auto fusible_conv = [&](int id) {
    const Node& n = g.node(id);
    return n.kind == OpKind::kConv2d && g.use_count(id) == 1 && !n.attrs.relu;
  };
  for (bool changed = true; changed;) {
    changed = false;
    for (int id : topo_sort(g)) {
      const Node& n = g.node(id);
      if (n.kind == OpKind::kReLU && fusible_conv(n.inputs[0].node)) {
        const int conv = n.inputs[0].node;
        g.node(conv).attrs.relu = true;
        g.replace_uses(id, {conv, 0});
        g.nodes.erase(id);
        changed = true;
        break;
      }
      if (n.kind == OpKind::kElementwiseAdd) {
        for (int side = 0; side < 2; ++side) {
          const int conv = n.inputs[static_cast<std::size_t>(side)].node;
          const NodeInput other = n.inputs[static_cast<std::size_t>(1 - side)];
          if (other.node == conv || !fusible_conv(conv) || g.node(conv).attrs.has_residual) {
            continue;
          }
          Node& c = g.node(conv);
          c.attrs.has_residual = true;
          c.inputs.push_back(other);
          g.replace_uses(id, {conv, 0});
          g.nodes.erase(id);
          changed = true;
          break;
        }
        if (changed) break;
      }
    }
  }
  return infer_shapes(g);
}

/// Per-conv schedule chosen by the uniform heuristic or the global planner.
/// A schedule with ic_bn == 0 keeps that conv on plain NCHW.
struct LayoutAssignment {
  std::map<int, ConvSchedule> convs;
};

enum class TransformPolicy {
  kEliminate,  // transforms only where producer and consumer layouts differ
  kPerConv,    // every blocked conv packs its input and unpacks its output
};

namespace detail {

/// Removes LayoutTransform nodes, resets conv schedules and unpacks
/// prepacked weights, so the layout passes can be re-run on their own output.
inline void strip_transforms(Graph& g) {
  std::vector<int> transforms;
  for (const auto& [id, n] : g.nodes) {
    if (n.kind == OpKind::kLayoutTransform) transforms.push_back(id);
  }
  for (int id : transforms) {
    g.replace_uses(id, g.node(id).inputs[0]);
  }
  for (int id : transforms) g.nodes.erase(id);
  std::vector<int> convs;
  for (auto& [id, n] : g.nodes) {
    if (n.kind == OpKind::kConv2d) convs.push_back(id);
  }
  for (int id : convs) {
    g.node(id).attrs.schedule = ConvSchedule{};
    const Node& w = g.node(g.node(id).inputs[1].node);
    const Tensor& packed = g.constant(w);
    if (packed.layout().tag != LayoutTag::kKCRSck) continue;
    std::string name = w.attrs.name;
    const std::string suffix = "." + packed.layout().str();
    if (name.ends_with(suffix)) name.resize(name.size() - suffix.size());
    int fresh = add_constant(g, name, unpack_weights(packed));
    g.node(id).inputs[1] = {fresh, 0};
  }
  g.remove_dead_nodes();
}

/// Whether every input of a channel concat divides into blocks of `x`.
inline bool concat_divisible(const Graph& g, const Node& n, int x) {
  for (const auto& in : n.inputs) {
    if (logical_nchw(g.spec(in))[1] % x != 0) return false;
  }
  return true;
}

}  // namespace detail

/// Rewrites convs to their assigned blocked layouts and inserts the
/// LayoutTransform nodes required by the resulting producer/consumer
/// mismatches. Graph inputs and outputs stay in default layout.
inline Graph alter_and_insert_transforms(const Graph& input, const LayoutAssignment& assign,
                                         TransformPolicy policy = TransformPolicy::kEliminate) {
  Graph g = infer_shapes(input);
  detail::strip_transforms(g);
  for (const auto& [id, n] : g.nodes) {
    if (n.kind == OpKind::kConv2d && !assign.convs.count(id)) {
      throw Error(ErrorCode::kAssignmentIncomplete,
                  "no layout assigned to conv " + std::to_string(id), id);
    }
  }
  g = infer_shapes(g);  // specs of the stripped graph, all default layouts

  std::map<int, Layout> produced;  // layout of each node's output after rewrite
  std::map<std::pair<int, Layout>, int> cache;
  // Returns a node producing `src` in layout `target`, adding a transform
  // if needed.
  auto coerce = [&](NodeInput src, const Layout& target) -> NodeInput {
    const Layout have = produced.at(src.node);
    if (have == target || !have.is_feature_map()) return src;
    auto key = std::make_pair(src.node, target);
    if (policy == TransformPolicy::kEliminate) {
      if (auto it = cache.find(key); it != cache.end()) return {it->second, 0};
    }
    NodeAttrs a;
    a.src_layout = have;
    a.dst_layout = target;
    int t = g.add(OpKind::kLayoutTransform, a, {src});
    produced[t] = target;
    cache[key] = t;
    return {t, 0};
  };

  std::vector<int> order = topo_sort(g);
  for (int id : order) {
    Node& n = g.node(id);
    switch (n.kind) {
      case OpKind::kInput:
      case OpKind::kConstant:
        produced[id] = n.kind == OpKind::kInput ? Layout::nchw() : g.spec(id).layout;
        break;
      case OpKind::kConv2d: {
        const ConvSchedule sch = assign.convs.at(id);
        const Layout in_layout = Layout::feature_map(sch.ic_bn);
        const Layout out_layout = Layout::feature_map(sch.blocked() ? sch.oc_bn : 0);
        n.attrs.schedule = sch;
        NodeInput data = coerce(n.inputs[0], in_layout);
        std::optional<NodeInput> residual;
        if (n.attrs.has_residual) residual = coerce(n.inputs.back(), out_layout);
        Node& c = g.node(id);
        c.inputs[0] = data;
        if (residual) c.inputs.back() = *residual;
        produced[id] = out_layout;
        if (policy == TransformPolicy::kPerConv && sch.blocked()) {
          // Unpack right away; consumers see NCHW.
          NodeAttrs a;
          a.src_layout = out_layout;
          a.dst_layout = Layout::nchw();
          std::vector<int> users = g.consumers(id);
          bool is_output = std::count(g.outputs.begin(), g.outputs.end(), id) > 0;
          int t = g.add(OpKind::kLayoutTransform, a, {{id, 0}});
          produced[t] = Layout::nchw();
          for (int u : users) {
            for (auto& in : g.node(u).inputs) {
              if (in.node == id) in = {t, 0};
            }
          }
          if (is_output) {
            for (auto& o : g.outputs) {
              if (o == id) o = t;
            }
          }
        }
        break;
      }
      case OpKind::kReLU:
      case OpKind::kSoftmax:
      case OpKind::kBatchNorm:
      case OpKind::kMaxPool:
      case OpKind::kAvgPool:
      case OpKind::kLayoutTransform:
        produced[id] = produced.at(n.inputs[0].node);
        break;
      case OpKind::kElementwiseAdd:
      case OpKind::kConcat: {
        Layout target = produced.at(n.inputs[0].node);
        if (n.kind == OpKind::kConcat && target.tag == LayoutTag::kNCHWc &&
            (n.attrs.axis != 1 || !detail::concat_divisible(g, n, target.x))) {
          target = Layout::nchw();
        }
        std::vector<NodeInput> ins;
        for (const auto& in : n.inputs) ins.push_back(coerce(in, target));
        g.node(id).inputs = ins;
        produced[id] = target;
        break;
      }
      case OpKind::kFlatten:
      case OpKind::kDense: {
        NodeInput in = coerce(n.inputs[0], Layout::nchw());
        g.node(id).inputs[0] = in;
        produced[id] = Layout::plain();
        break;
      }
    }
  }
  for (auto& o : g.outputs) {
    o = coerce({o, 0}, Layout::nchw()).node;
  }
  g.remove_dead_nodes();
  return infer_shapes(g);
}

/// Replaces the weight of every blocked conv by its KCRS[x]c[y]k packing so
/// nothing is repacked at run time.
inline Graph pretransform_weights(const Graph& input) {
  Graph g = infer_shapes(input);
  for (int id : topo_sort(g)) {
    const Node& n = g.node(id);
    if (n.kind != OpKind::kConv2d || !n.attrs.schedule.blocked()) continue;
    const NodeInput w = n.inputs[1];
    if (g.spec(w).layout.tag != LayoutTag::kKCRS || !detail::is_constant(g, w)) continue;
    const auto sch = n.attrs.schedule;
    const Node& wnode = g.node(w.node);
    Tensor packed = pack_weights(g.constant(wnode), sch.ic_bn, sch.oc_bn);
    int fresh = detail::add_constant(g, wnode.attrs.name + "." + packed.layout().str(),
                                     std::move(packed));
    g.node(id).inputs[1] = {fresh, 0};
  }
  g.remove_dead_nodes();
  return infer_shapes(g);
}

/// Number of LayoutTransform nodes.
inline int count_transforms(const Graph& g) {
  return static_cast<int>(std::count_if(g.nodes.begin(), g.nodes.end(), [](const auto& kv) {
    return kv.second.kind == OpKind::kLayoutTransform;
  }));
}

/// Blocked convs whose weights the executor still has to pack per run.
inline int count_weight_transforms(const Graph& g) {
  int count = 0;
  for (const auto& [id, n] : g.nodes) {
    if (n.kind == OpKind::kConv2d && n.attrs.schedule.blocked() &&
        g.spec(n.inputs[1]).layout.tag == LayoutTag::kKCRS) {
      ++count;
    }
  }
  return count;
}

inline std::vector<int> conv_ids(const Graph& g) {
  std::vector<int> ids;
  for (const auto& [id, n] : g.nodes) {
    if (n.kind == OpKind::kConv2d) ids.push_back(id);
  }
  return ids;
}

/// Largest divisor of `n` that is <= `limit`.
inline int largest_divisor_at_most(int64_t n, int limit) {
  for (int d = std::max(1, limit); d > 1; --d) {
    if (n % d == 0) return d;
  }
  return 1;
}

/// One shared split factor x for every conv: the largest divisor of the
/// common factor of all conv output channels that fits a vector register.
/// A conv whose input channels do not divide by x (an RGB stem, say) takes
/// the largest divisor of its own input channels below x.
inline LayoutAssignment uniform_assignment(const Graph& input, int lane_width = vector_lane_width()) {
  Graph g = infer_shapes(input);
  int64_t common = 0;
  for (int id : conv_ids(g)) common = std::gcd(common, conv_workload(g, g.node(id)).out_channel);
  const int x = common > 0 ? largest_divisor_at_most(common, lane_width) : 1;
  LayoutAssignment assign;
  for (int id : conv_ids(g)) {
    const ConvWorkload wl = conv_workload(g, g.node(id));
    ConvSchedule s;
    s.oc_bn = x;
    s.ic_bn = wl.in_channel % x == 0 ? x : largest_divisor_at_most(wl.in_channel, x);
    s.reg_n = 1;
    for (int r : {8, 4, 2}) {
      if (r <= wl.out_w()) {
        s.reg_n = r;
        break;
      }
    }
    s.unroll_ker = wl.kernel_h * wl.kernel_w <= 9;
    assign.convs[id] = s;
  }
  return assign;
}

/// Assignment that keeps every conv on plain NCHW.
inline LayoutAssignment default_assignment(const Graph& g) {
  LayoutAssignment assign;
  for (int id : conv_ids(g)) assign.convs[id] = ConvSchedule{};
  return assign;
}

}  // namespace neoplan
