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
#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "neoplan/conv_types.hpp"
#include "neoplan/error.hpp"
#include "neoplan/layout_transform.hpp"
#include "neoplan/tensor.hpp"

namespace neoplan {

enum class OpKind : uint8_t {
  kConv2d,
  kBatchNorm,
  kReLU,
  kMaxPool,
  kAvgPool,
  kElementwiseAdd,
  kConcat,
  kFlatten,
  kDense,
  kSoftmax,
  kLayoutTransform,
  kInput,
  kConstant,
};

inline constexpr std::array<std::pair<OpKind, std::string_view>, 13> kOpKindNames{{
    {OpKind::kConv2d, "Conv2d"},
    {OpKind::kBatchNorm, "BatchNorm"},
    {OpKind::kReLU, "ReLU"},
    {OpKind::kMaxPool, "MaxPool"},
    {OpKind::kAvgPool, "AvgPool"},
    {OpKind::kElementwiseAdd, "ElementwiseAdd"},
    {OpKind::kConcat, "Concat"},
    {OpKind::kFlatten, "Flatten"},
    {OpKind::kDense, "Dense"},
    {OpKind::kSoftmax, "Softmax"},
    {OpKind::kLayoutTransform, "LayoutTransform"},
    {OpKind::kInput, "Input"},
    {OpKind::kConstant, "Constant"},
}};

inline std::string_view op_kind_name(OpKind kind) {
  for (const auto& [k, name] : kOpKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

inline OpKind parse_op_kind(std::string_view name) {
  for (const auto& [k, n] : kOpKindNames) {
    if (n == name) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown op kind: " + std::string(name));
}

struct NodeInput {
  int node = -1;
  int slot = 0;
  friend auto operator<=>(const NodeInput&, const NodeInput&) = default;
};

/// Kind-specific attributes, flattened into one record. Fields not used by a
/// kind keep their defaults.
struct NodeAttrs {
  // Conv2d (kernel dims, stride, pad) and pooling (window, stride, pad).
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int pad = 0;
  // Conv2d: blocked schedule (ic_bn == 0 means plain NCHW) and fused epilogue.
  // Inputs are [data, weight, bias if has_bias, residual if has_residual].
  ConvSchedule schedule;
  bool has_bias = false;
  bool has_residual = false;
  bool relu = false;
  // BatchNorm: inputs [data, gamma, beta, mean, var], or [data, scale, shift]
  // once statistics are folded.
  float eps = 1e-5f;
  bool scale_shift = false;
  // Concat.
  int axis = 1;
  // LayoutTransform.
  Layout src_layout;
  Layout dst_layout;
  // Input / Constant: tensor name, declared shape and layout.
  std::string name;
  Shape shape;
  Layout layout;

  friend bool operator==(const NodeAttrs&, const NodeAttrs&) = default;
};

struct Node {
  int id = -1;
  OpKind kind = OpKind::kInput;
  NodeAttrs attrs;
  std::vector<NodeInput> inputs;
  std::vector<TensorSpec> outputs;  // filled by infer_shapes

  friend bool operator==(const Node&, const Node&) = default;
};

/// A DAG of operators. Values are immutable once built: passes return new
/// graphs and share constant tensors by pointer.
class Graph {
 public:
  std::string name;
  std::map<int, Node> nodes;
  std::vector<int> outputs;
  std::map<std::string, std::shared_ptr<const Tensor>> constants;

  bool contains(int id) const { return nodes.count(id) != 0; }

  const Node& node(int id) const {
    auto it = nodes.find(id);
    NEOPLAN_CHECK(it != nodes.end(), ErrorCode::kInvalidArgument,
                  "no node with id " + std::to_string(id));
    return it->second;
  }
  Node& node(int id) {
    auto it = nodes.find(id);
    NEOPLAN_CHECK(it != nodes.end(), ErrorCode::kInvalidArgument,
                  "no node with id " + std::to_string(id));
    return it->second;
  }

  int next_id() const { return nodes.empty() ? 0 : nodes.rbegin()->first + 1; }

  int add(OpKind kind, NodeAttrs attrs, std::vector<NodeInput> inputs) {
    int id = next_id();
    nodes[id] = Node{id, kind, std::move(attrs), std::move(inputs), {}};
    return id;
  }

  /// Distinct consumers of `id`, ascending.
  std::vector<int> consumers(int id) const {
    std::vector<int> out;
    for (const auto& [nid, n] : nodes) {
      for (const auto& in : n.inputs) {
        if (in.node == id) {
          out.push_back(nid);
          break;
        }
      }
    }
    return out;
  }

  /// Number of input references plus graph-output references to `id`.
  int use_count(int id) const {
    int uses = static_cast<int>(std::count(outputs.begin(), outputs.end(), id));
    for (const auto& [nid, n] : nodes) {
      for (const auto& in : n.inputs) uses += in.node == id ? 1 : 0;
    }
    return uses;
  }

  const TensorSpec& spec(NodeInput in) const {
    const Node& n = node(in.node);
    NEOPLAN_CHECK(in.slot >= 0 && in.slot < static_cast<int>(n.outputs.size()),
                  ErrorCode::kShapeMismatch,
                  "node " + std::to_string(in.node) + " has no inferred output slot " +
                      std::to_string(in.slot));
    return n.outputs[static_cast<std::size_t>(in.slot)];
  }
  const TensorSpec& spec(int id) const { return spec(NodeInput{id, 0}); }

  const Tensor& constant(const Node& n) const {
    auto it = constants.find(n.attrs.name);
    NEOPLAN_CHECK(it != constants.end() && it->second, ErrorCode::kShapeMismatch,
                  "constant '" + n.attrs.name + "' has no tensor");
    return *it->second;
  }

  /// Replaces every reference to `from` (inputs and graph outputs) by `to`.
  void replace_uses(int from, NodeInput to) {
    for (auto& [nid, n] : nodes) {
      for (auto& in : n.inputs) {
        if (in.node == from) in = to;
      }
    }
    for (auto& o : outputs) {
      if (o == from) o = to.node;
    }
  }

  /// Drops nodes not reachable backwards from the outputs.
  void remove_dead_nodes() {
    std::set<int> live;
    std::vector<int> stack(outputs.begin(), outputs.end());
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      if (!live.insert(id).second || !contains(id)) continue;
      for (const auto& in : node(id).inputs) stack.push_back(in.node);
    }
    std::erase_if(nodes, [&](const auto& kv) {
      return !live.count(kv.first) && kv.second.kind != OpKind::kInput;
    });
    std::set<std::string> used;
    for (const auto& [id, n] : nodes) {
      if (n.kind == OpKind::kConstant) used.insert(n.attrs.name);
    }
    std::erase_if(constants, [&](const auto& kv) { return !used.count(kv.first); });
  }
};

// ---------------------------------------------------------------------------
// Validation

enum class ViolationKind {
  kDanglingInput,
  kArityMismatch,
  kCycle,
  kEmptyOutputs,
  kDanglingOutput,
  kSelfLoop,
  kUnreachable,
  kMissingConstant,
};

struct Violation {
  ViolationKind kind;
  int node = -1;
  std::string message;
};

/// Allowed input count [min, max] for a node, given its attributes.
inline std::pair<int, int> arity(const Node& n) {
  switch (n.kind) {
    case OpKind::kInput:
    case OpKind::kConstant: return {0, 0};
    case OpKind::kConv2d: {
      int a = 2 + (n.attrs.has_bias ? 1 : 0) + (n.attrs.has_residual ? 1 : 0);
      return {a, a};
    }
    case OpKind::kBatchNorm: return n.attrs.scale_shift ? std::pair{3, 3} : std::pair{5, 5};
    case OpKind::kElementwiseAdd: return {2, 2};
    case OpKind::kConcat: return {1, 1 << 20};
    case OpKind::kDense: return {2, 3};
    case OpKind::kReLU:
    case OpKind::kMaxPool:
    case OpKind::kAvgPool:
    case OpKind::kFlatten:
    case OpKind::kSoftmax:
    case OpKind::kLayoutTransform: return {1, 1};
  }
  return {0, 0};
}

namespace detail {

/// Kahn's algorithm with ascending-id tie breaking over the nodes whose
/// inputs all exist. Returns the order and whether every node was placed.
inline std::pair<std::vector<int>, bool> kahn_order(const Graph& g) {
  std::map<int, int> indegree;
  std::map<int, std::vector<int>> succ;
  for (const auto& [id, n] : g.nodes) {
    indegree[id];
    for (const auto& in : n.inputs) {
      if (!g.contains(in.node)) continue;
      ++indegree[id];
      succ[in.node].push_back(id);
    }
  }
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (const auto& [id, d] : indegree) {
    if (d == 0) ready.push(id);
  }
  std::vector<int> order;
  order.reserve(g.nodes.size());
  while (!ready.empty()) {
    int id = ready.top();
    ready.pop();
    order.push_back(id);
    for (int s : succ[id]) {
      if (--indegree[s] == 0) ready.push(s);
    }
  }
  bool complete = order.size() == g.nodes.size();
  return {std::move(order), complete};
}

}  // namespace detail

/// Every violated structural invariant; an empty list means the graph is ok.
inline std::vector<Violation> validate(const Graph& g) {
  std::vector<Violation> out;
  if (g.outputs.empty()) out.push_back({ViolationKind::kEmptyOutputs, -1, "graph has no outputs"});
  for (int o : g.outputs) {
    if (!g.contains(o)) {
      out.push_back({ViolationKind::kDanglingOutput, o,
                     "output refers to missing node " + std::to_string(o)});
    }
  }
  for (const auto& [id, n] : g.nodes) {
    for (const auto& in : n.inputs) {
      if (in.node == id) {
        out.push_back({ViolationKind::kSelfLoop, id, "node consumes itself"});
      } else if (!g.contains(in.node)) {
        out.push_back({ViolationKind::kDanglingInput, id,
                       "input refers to missing node " + std::to_string(in.node)});
      }
    }
    auto [lo, hi] = arity(n);
    int count = static_cast<int>(n.inputs.size());
    if (count < lo || count > hi) {
      out.push_back({ViolationKind::kArityMismatch, id,
                     std::string(op_kind_name(n.kind)) + " takes " + std::to_string(lo) +
                         (lo == hi ? "" : "+") + " inputs, got " + std::to_string(count)});
    }
    if (n.kind == OpKind::kConstant && !g.constants.count(n.attrs.name)) {
      out.push_back({ViolationKind::kMissingConstant, id,
                     "constant '" + n.attrs.name + "' has no tensor"});
    }
  }
  auto [order, acyclic] = detail::kahn_order(g);
  if (!acyclic) out.push_back({ViolationKind::kCycle, -1, "graph contains a cycle"});

  // Forward reachability from inputs.
  std::set<int> reached;
  std::vector<int> stack;
  for (const auto& [id, n] : g.nodes) {
    if (n.kind == OpKind::kInput) stack.push_back(id);
  }
  std::map<int, std::vector<int>> succ;
  for (const auto& [id, n] : g.nodes) {
    for (const auto& in : n.inputs) succ[in.node].push_back(id);
  }
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    if (!reached.insert(id).second) continue;
    for (int s : succ[id]) stack.push_back(s);
  }
  for (const auto& [id, n] : g.nodes) {
    if (n.kind != OpKind::kInput && n.kind != OpKind::kConstant && !reached.count(id)) {
      out.push_back({ViolationKind::kUnreachable, id, "node not reachable from any input"});
    }
  }
  return out;
}

/// Topological order, ties broken by ascending node id.
inline std::vector<int> topo_sort(const Graph& g) {
  auto [order, acyclic] = detail::kahn_order(g);
  NEOPLAN_CHECK(acyclic, ErrorCode::kCycleDetected, "graph '" + g.name + "' contains a cycle");
  return order;
}

inline void require_valid(const Graph& g) {
  auto violations = validate(g);
  if (violations.empty()) return;
  std::string msg = "graph '" + g.name + "' is invalid:";
  for (const auto& v : violations) msg += " [node " + std::to_string(v.node) + "] " + v.message + ";";
  bool cyclic = std::any_of(violations.begin(), violations.end(),
                            [](const Violation& v) { return v.kind == ViolationKind::kCycle; });
  throw Error(cyclic ? ErrorCode::kCycleDetected : ErrorCode::kValidation, msg);
}

// ---------------------------------------------------------------------------
// Shape inference

namespace detail {

inline Error shape_error(const Node& n, const std::string& what) {
  return Error(ErrorCode::kShapeMismatch,
               std::string(op_kind_name(n.kind)) + " node " + std::to_string(n.id) + ": " + what,
               n.id);
}

/// Logical (K, C, R, S) of a conv weight in KCRS or KCRS[x]c[y]k.
inline Shape logical_kcrs(const TensorSpec& w) {
  if (w.layout.tag == LayoutTag::kKCRS && w.shape.size() == 4) return w.shape;
  if (w.layout.tag == LayoutTag::kKCRSck && w.shape.size() == 6) {
    return {w.shape[0] * w.layout.y, w.shape[1] * w.layout.x, w.shape[2], w.shape[3]};
  }
  throw Error(ErrorCode::kWrongLayout, "not a conv weight layout: " + w.layout.str());
}

inline int64_t pool_out(int64_t in, int window, int stride, int pad) {
  return (in + 2 * pad - window) / stride + 1;
}

}  // namespace detail

/// Conv problem of a shape-annotated Conv2d node.
inline ConvWorkload conv_workload(const Graph& g, const Node& n) {
  NEOPLAN_CHECK(n.kind == OpKind::kConv2d, ErrorCode::kInvalidArgument, "not a conv node");
  const Shape data = logical_nchw(g.spec(n.inputs[0]));
  const Shape w = detail::logical_kcrs(g.spec(n.inputs[1]));
  return ConvWorkload{static_cast<int>(data[1]), static_cast<int>(w[0]), static_cast<int>(data[2]),
                      static_cast<int>(data[3]), static_cast<int>(w[2]), static_cast<int>(w[3]),
                      n.attrs.stride, n.attrs.pad};
}

inline TensorSpec infer_node(const Graph& g, const Node& n) {
  using detail::shape_error;
  auto in_spec = [&](std::size_t i) -> const TensorSpec& { return g.spec(n.inputs.at(i)); };
  auto channel_vector = [&](std::size_t i, int64_t channels) {
    const auto& s = in_spec(i);
    if (s.shape != Shape{channels}) {
      throw shape_error(n, "input " + std::to_string(i) + " must be a vector of length " +
                               std::to_string(channels) + ", got " + shape_str(s.shape));
    }
  };
  switch (n.kind) {
    case OpKind::kInput: {
      if (n.attrs.shape.size() != 4) throw shape_error(n, "input needs a rank-4 shape");
      if (n.attrs.layout.tag == LayoutTag::kNHWC) {
        const auto& s = n.attrs.shape;
        return {{s[0], s[3], s[1], s[2]}, DataType::kF32, Layout::nchw()};
      }
      if (n.attrs.layout.tag != LayoutTag::kNCHW) throw shape_error(n, "input must be NCHW or NHWC");
      return {n.attrs.shape, DataType::kF32, Layout::nchw()};
    }
    case OpKind::kConstant: {
      const Tensor& t = g.constant(n);
      return {t.shape(), DataType::kF32, t.layout()};
    }
    case OpKind::kConv2d: {
      const auto& data = in_spec(0);
      const auto& weight = in_spec(1);
      if (!data.layout.is_feature_map()) throw shape_error(n, "data must be a feature map");
      Shape x = logical_nchw(data);
      Shape w = detail::logical_kcrs(weight);
      if (x[1] != w[1]) {
        throw shape_error(n, "data has " + std::to_string(x[1]) + " channels, weight expects " +
                                 std::to_string(w[1]));
      }
      if (n.attrs.kernel_h != w[2] || n.attrs.kernel_w != w[3]) {
        throw shape_error(n, "kernel attrs disagree with weight " + shape_str(w));
      }
      ConvWorkload wl{static_cast<int>(x[1]), static_cast<int>(w[0]), static_cast<int>(x[2]),
                      static_cast<int>(x[3]),  static_cast<int>(w[2]), static_cast<int>(w[3]),
                      n.attrs.stride,          n.attrs.pad};
      if (wl.in_h + 2 * wl.pad < wl.kernel_h || wl.in_w + 2 * wl.pad < wl.kernel_w ||
          wl.stride < 1) {
        throw shape_error(n, "kernel does not fit padded input");
      }
      const auto& sch = n.attrs.schedule;
      Layout out_layout = Layout::nchw();
      if (sch.blocked()) {
        if (!sch.valid_for(wl)) {
          throw Error(ErrorCode::kIndivisibleChannel,
                      "schedule " + sch.str() + " invalid for " + wl.str(), n.id);
        }
        if (data.layout != Layout::nchwc(sch.ic_bn)) {
          throw shape_error(n, "data layout " + data.layout.str() + " but ic_bn=" +
                                   std::to_string(sch.ic_bn));
        }
        if (weight.layout.tag == LayoutTag::kKCRSck &&
            weight.layout != Layout::kcrsck(sch.ic_bn, sch.oc_bn)) {
          throw shape_error(n, "weight layout " + weight.layout.str() + " but schedule " + sch.str());
        }
        out_layout = Layout::nchwc(sch.oc_bn);
      } else if (data.layout.tag != LayoutTag::kNCHW ||
                 weight.layout.tag != LayoutTag::kKCRS) {
        throw shape_error(n, "unscheduled conv needs NCHW data and KCRS weights");
      }
      TensorSpec out{feature_map_shape({x[0], wl.out_channel, wl.out_h(), wl.out_w()}, out_layout),
                     DataType::kF32, out_layout};
      std::size_t next = 2;
      if (n.attrs.has_bias) channel_vector(next++, wl.out_channel);
      if (n.attrs.has_residual && in_spec(next) != out) {
        throw shape_error(n, "residual " + shape_str(in_spec(next).shape) + " " +
                                 in_spec(next).layout.str() + " differs from output " +
                                 shape_str(out.shape) + " " + out_layout.str());
      }
      return out;
    }
    case OpKind::kBatchNorm: {
      const auto& data = in_spec(0);
      if (!data.layout.is_feature_map()) throw shape_error(n, "data must be a feature map");
      int64_t channels = logical_nchw(data)[1];
      for (std::size_t i = 1; i < n.inputs.size(); ++i) channel_vector(i, channels);
      return data;
    }
    case OpKind::kReLU:
    case OpKind::kSoftmax: return in_spec(0);
    case OpKind::kMaxPool:
    case OpKind::kAvgPool: {
      const auto& data = in_spec(0);
      if (!data.layout.is_feature_map()) throw shape_error(n, "pooling needs a feature map");
      const auto& a = n.attrs;
      if (a.kernel_h < 1 || a.kernel_w < 1 || a.stride < 1 || a.pad < 0) {
        throw shape_error(n, "bad pooling window");
      }
      Shape s = data.shape;
      s[2] = detail::pool_out(s[2], a.kernel_h, a.stride, a.pad);
      s[3] = detail::pool_out(s[3], a.kernel_w, a.stride, a.pad);
      if (s[2] < 1 || s[3] < 1) throw shape_error(n, "pooling window larger than input");
      return {s, DataType::kF32, data.layout};
    }
    case OpKind::kElementwiseAdd: {
      if (in_spec(0) != in_spec(1)) {
        throw shape_error(n, "operands differ: " + shape_str(in_spec(0).shape) + " " +
                                 in_spec(0).layout.str() + " vs " + shape_str(in_spec(1).shape) +
                                 " " + in_spec(1).layout.str());
      }
      return in_spec(0);
    }
    case OpKind::kConcat: {
      TensorSpec out = in_spec(0);
      const int axis = n.attrs.axis;
      if (axis < 0 || axis >= static_cast<int>(out.shape.size())) throw shape_error(n, "bad axis");
      for (std::size_t i = 1; i < n.inputs.size(); ++i) {
        const auto& s = in_spec(i);
        if (s.layout != out.layout || s.shape.size() != out.shape.size()) {
          throw shape_error(n, "inputs must share one layout");
        }
        for (std::size_t d = 0; d < s.shape.size(); ++d) {
          if (static_cast<int>(d) != axis && s.shape[d] != out.shape[d]) {
            throw shape_error(n, "non-axis dims differ: " + shape_str(s.shape) + " vs " +
                                     shape_str(out.shape));
          }
        }
        out.shape[static_cast<std::size_t>(axis)] += s.shape[static_cast<std::size_t>(axis)];
      }
      if (out.layout.tag == LayoutTag::kNCHWc && axis == 4) throw shape_error(n, "bad axis");
      return out;
    }
    case OpKind::kFlatten: {
      const auto& data = in_spec(0);
      if (data.layout.tag != LayoutTag::kNCHW && data.layout.tag != LayoutTag::kPlain) {
        throw shape_error(n, "flatten needs default layout, got " + data.layout.str());
      }
      return {{data.shape[0], numel(data.shape) / data.shape[0]}, DataType::kF32, Layout::plain()};
    }
    case OpKind::kDense: {
      const auto& data = in_spec(0);
      const auto& w = in_spec(1);
      if (data.layout.tag != LayoutTag::kPlain || data.shape.size() != 2) {
        throw shape_error(n, "dense needs a rank-2 default-layout input");
      }
      if (w.shape.size() != 2 || w.shape[1] != data.shape[1]) {
        throw shape_error(n, "weight " + shape_str(w.shape) + " vs input " + shape_str(data.shape));
      }
      if (n.inputs.size() == 3) channel_vector(2, w.shape[0]);
      return {{data.shape[0], w.shape[0]}, DataType::kF32, Layout::plain()};
    }
    case OpKind::kLayoutTransform: {
      const auto& data = in_spec(0);
      if (data.layout != n.attrs.src_layout) {
        throw Error(ErrorCode::kWrongLayout,
                    "transform expects " + n.attrs.src_layout.str() + ", got " + data.layout.str(),
                    n.id);
      }
      Shape logical = logical_nchw(data);
      return {feature_map_shape(logical, n.attrs.dst_layout), DataType::kF32, n.attrs.dst_layout};
    }
  }
  throw shape_error(n, "unhandled kind");
}

/// Copy of `g` with every node's output spec filled in.
inline Graph infer_shapes(const Graph& g) {
  require_valid(g);
  Graph out = g;
  for (int id : topo_sort(out)) {
    Node& n = out.node(id);
    n.outputs.clear();
    n.outputs.push_back(infer_node(out, n));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Construction helper

class GraphBuilder {
 public:
  explicit GraphBuilder(std::string name) { g_.name = std::move(name); }

  int input(std::string name, Shape shape, Layout layout = Layout::nchw()) {
    NodeAttrs a;
    a.name = std::move(name);
    a.shape = std::move(shape);
    a.layout = layout;
    return g_.add(OpKind::kInput, a, {});
  }

  int constant(std::string name, Tensor t) {
    NodeAttrs a;
    a.name = name;
    a.shape = t.shape();
    a.layout = t.layout();
    g_.constants[name] = std::make_shared<const Tensor>(std::move(t));
    return g_.add(OpKind::kConstant, a, {});
  }

  int conv(int data, int weight, int stride, int pad, std::optional<int> bias = std::nullopt) {
    const Tensor& w = g_.constant(g_.node(weight));
    NodeAttrs a;
    a.kernel_h = static_cast<int>(w.shape()[2]);
    a.kernel_w = static_cast<int>(w.shape()[3]);
    a.stride = stride;
    a.pad = pad;
    std::vector<NodeInput> ins{{data, 0}, {weight, 0}};
    if (bias) {
      a.has_bias = true;
      ins.push_back({*bias, 0});
    }
    return g_.add(OpKind::kConv2d, a, std::move(ins));
  }

  int batch_norm(int data, int gamma, int beta, int mean, int var, float eps = 1e-5f) {
    NodeAttrs a;
    a.eps = eps;
    return g_.add(OpKind::kBatchNorm, a, {{data, 0}, {gamma, 0}, {beta, 0}, {mean, 0}, {var, 0}});
  }

  int relu(int x) { return g_.add(OpKind::kReLU, {}, {{x, 0}}); }
  int softmax(int x) { return g_.add(OpKind::kSoftmax, {}, {{x, 0}}); }
  int flatten(int x) { return g_.add(OpKind::kFlatten, {}, {{x, 0}}); }

  int max_pool(int x, int window, int stride, int pad = 0) {
    return pool(OpKind::kMaxPool, x, window, stride, pad);
  }
  int avg_pool(int x, int window, int stride, int pad = 0) {
    return pool(OpKind::kAvgPool, x, window, stride, pad);
  }

  int add(int a, int b) { return g_.add(OpKind::kElementwiseAdd, {}, {{a, 0}, {b, 0}}); }

  int concat(const std::vector<int>& xs, int axis = 1) {
    NodeAttrs a;
    a.axis = axis;
    std::vector<NodeInput> ins;
    for (int x : xs) ins.push_back({x, 0});
    return g_.add(OpKind::kConcat, a, std::move(ins));
  }

  int dense(int x, int weight, std::optional<int> bias = std::nullopt) {
    std::vector<NodeInput> ins{{x, 0}, {weight, 0}};
    if (bias) ins.push_back({*bias, 0});
    return g_.add(OpKind::kDense, {}, std::move(ins));
  }

  void output(int id) { g_.outputs.push_back(id); }

  Graph& graph() { return g_; }
  Graph build() const { return infer_shapes(g_); }

 private:
  int pool(OpKind kind, int x, int window, int stride, int pad) {
    NodeAttrs a;
    a.kernel_h = a.kernel_w = window;
    a.stride = stride;
    a.pad = pad;
    return g_.add(kind, a, {{x, 0}});
  }

  Graph g_;
};

}  // namespace neoplan
