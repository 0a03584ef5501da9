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

// Whole-graph layout planning.
//
// Every conv is a variable whose value is one of its candidate schemes. The
// layout of every other feature map follows from the conv (or graph input)
// it descends from, so the objective is a sum of per-conv terms (execution
// time plus transforms to or from default layout) and pairwise terms
// between convs (the transform cost on edges connecting them). dp_plan
// minimises it exactly; the PBQP path approximates it when the exact state
// space grows too large.

#pragma once

#include <algorithm>
#include <chrono>
#include <compare>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "neoplan/graph.hpp"
#include "neoplan/passes.hpp"
#include "neoplan/tuner.hpp"

namespace neoplan {

/// Nanoseconds with a saturating infinity.
struct Cost {
  static constexpr int64_t kInf = std::numeric_limits<int64_t>::max();
  int64_t ns = 0;

  static constexpr Cost inf() { return Cost{kInf}; }
  constexpr bool is_inf() const { return ns == kInf; }

  friend constexpr Cost operator+(Cost a, Cost b) {
    if (a.is_inf() || b.is_inf() || a.ns > kInf - b.ns) return inf();
    return Cost{a.ns + b.ns};
  }
  Cost& operator+=(Cost b) { return *this = *this + b; }
  friend constexpr auto operator<=>(Cost, Cost) = default;

  std::string str() const { return is_inf() ? "inf" : std::to_string(ns); }
};

struct SchemeCandidate {
  ConvSchedule schedule;
  Cost exec;
  friend bool operator==(const SchemeCandidate&, const SchemeCandidate&) = default;
};

using CandidateMap = std::map<int, std::vector<SchemeCandidate>>;

/// Cost of moving a feature map of logical NCHW shape between two layouts.
/// Must return 0 when the layouts agree.
using TransformCostFn = std::function<Cost(const Shape&, const Layout&, const Layout&)>;

/// Measures retile time on a representative tensor, median of a few runs,
/// cached per (shape, from, to). Indivisible pairs cost infinity.
class TransformCostModel {
 public:
  explicit TransformCostModel(ThreadPool* pool = nullptr, int repeats = 5)
      : pool_(pool), repeats_(repeats) {}

  Cost operator()(const Shape& logical, const Layout& from, const Layout& to) {
    if (from == to) return Cost{0};
    const int64_t channels = logical[1];
    if (channels % from.channel_block() != 0 || channels % to.channel_block() != 0) {
      return Cost::inf();
    }
    auto key = std::make_tuple(logical, from, to);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    Tensor src = random_tensor(feature_map_shape(logical, from), from, 3);
    Tensor dst(feature_map_shape(logical, to), to);
    std::vector<double> times;
    for (int i = 0; i < repeats_ + 1; ++i) {
      auto t0 = std::chrono::steady_clock::now();
      transform_feature_map_into(src.view(), dst.mutable_view(), pool_);
      auto t1 = std::chrono::steady_clock::now();
      if (i > 0) times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
    }
    std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
    Cost c{std::max<int64_t>(1, static_cast<int64_t>(times[times.size() / 2]))};
    cache_[key] = c;
    return c;
  }

  TransformCostFn fn() {
    return [this](const Shape& s, const Layout& a, const Layout& b) { return (*this)(s, a, b); };
  }

 private:
  ThreadPool* pool_;
  int repeats_;
  std::map<std::tuple<Shape, Layout, Layout>, Cost> cache_;
};

// ---------------------------------------------------------------------------
// Problem construction

/// A place where a feature map must arrive in a layout decided elsewhere.
struct Requirement {
  enum Kind { kConvInput, kResidual, kJoinOther, kDefault };
  Kind kind = kDefault;
  int source = -1;         // node whose output is consumed
  int source_origin = -1;  // variable the source layout descends from, -1 for default
  int target = -1;         // variable the required layout depends on, -1 for default
  int join = -1;           // join node id for kJoinOther
};

struct PairTerm {
  int a = -1;
  int b = -1;
  std::vector<Cost> m;  // row-major |cands a| x |cands b|
  int join = -1;        // graph id of the join that produced this term, if any
  int join_first = -1;  // variable whose layout the join adopts
};

struct LayoutProblem {
  std::vector<int> conv_ids;  // variable -> conv node id, topological order
  std::map<int, int> var_of;  // conv node id -> variable
  std::vector<std::vector<SchemeCandidate>> cands;
  std::vector<std::vector<Cost>> unary;
  std::vector<PairTerm> pairs;

  std::size_t size() const { return conv_ids.size(); }

  Cost evaluate(const std::vector<int>& choice) const {
    Cost total{0};
    for (std::size_t v = 0; v < size(); ++v) total += unary[v][static_cast<std::size_t>(choice[v])];
    for (const auto& t : pairs) {
      total += t.m[static_cast<std::size_t>(choice[static_cast<std::size_t>(t.a)]) *
                       cands[static_cast<std::size_t>(t.b)].size() +
                   static_cast<std::size_t>(choice[static_cast<std::size_t>(t.b)])];
    }
    return total;
  }

  /// Execution-only part of the objective.
  Cost exec_cost(const std::vector<int>& choice) const {
    Cost total{0};
    for (std::size_t v = 0; v < size(); ++v) {
      total += cands[v][static_cast<std::size_t>(choice[v])].exec;
    }
    return total;
  }
};

/// Layout-origin analysis shared by the cost model and the transform count.
struct OriginAnalysis {
  std::map<int, int> origin;  // feature-map node -> variable, or -1 for default
  std::vector<Requirement> requirements;
  std::map<int, int> var_of;
  std::vector<int> conv_ids;
};

namespace detail {

inline Graph strip_layouts(const Graph& g) {
  Graph s = infer_shapes(g);
  strip_transforms(s);
  return infer_shapes(s);
}

}  // namespace detail

/// Walks a graph without transforms and records, for every feature map,
/// which conv's output layout it carries and every edge whose consumer
/// requires a specific layout. Joins adopt their first input's origin.
inline OriginAnalysis analyze_origins(const Graph& g) {
  OriginAnalysis a;
  const auto order = topo_sort(g);
  for (int id : order) {
    if (g.node(id).kind == OpKind::kConv2d) {
      a.var_of[id] = static_cast<int>(a.conv_ids.size());
      a.conv_ids.push_back(id);
    }
  }
  auto is_fm = [&](NodeInput in) { return g.spec(in).layout.is_feature_map(); };
  auto require = [&](Requirement::Kind kind, NodeInput src, int target, int join = -1) {
    if (!is_fm(src)) return;
    a.requirements.push_back({kind, src.node, a.origin.at(src.node), target, join});
  };
  for (int id : order) {
    const Node& n = g.node(id);
    switch (n.kind) {
      case OpKind::kInput: a.origin[id] = -1; break;
      case OpKind::kConstant: break;
      case OpKind::kConv2d: {
        const int v = a.var_of.at(id);
        require(Requirement::kConvInput, n.inputs[0], v);
        if (n.attrs.has_residual) require(Requirement::kResidual, n.inputs.back(), v);
        a.origin[id] = v;
        break;
      }
      case OpKind::kReLU:
      case OpKind::kSoftmax:
      case OpKind::kBatchNorm:
      case OpKind::kMaxPool:
      case OpKind::kAvgPool:
      case OpKind::kLayoutTransform:
        if (is_fm(n.inputs[0])) a.origin[id] = a.origin.at(n.inputs[0].node);
        break;
      case OpKind::kElementwiseAdd:
      case OpKind::kConcat: {
        if (!is_fm(n.inputs[0])) break;
        if (n.kind == OpKind::kConcat && n.attrs.axis != 1) {
          for (const auto& in : n.inputs) require(Requirement::kDefault, in, -1);
          a.origin[id] = -1;
          break;
        }
        const int first = a.origin.at(n.inputs[0].node);
        for (std::size_t i = 1; i < n.inputs.size(); ++i) {
          require(Requirement::kJoinOther, n.inputs[i], first, id);
        }
        a.origin[id] = first;
        break;
      }
      case OpKind::kFlatten:
      case OpKind::kDense: require(Requirement::kDefault, n.inputs[0], -1); break;
    }
  }
  for (int o : g.outputs) require(Requirement::kDefault, {o, 0}, -1);
  return a;
}

namespace detail {

inline Layout origin_layout(int origin, const std::vector<int>& oc_of_var) {
  return origin < 0 ? Layout::nchw() : Layout::nchwc(oc_of_var[static_cast<std::size_t>(origin)]);
}

inline Layout required_layout(const Requirement& r, const std::vector<int>& ic_of_var,
                              const std::vector<int>& oc_of_var) {
  switch (r.kind) {
    case Requirement::kConvInput:
      return Layout::nchwc(ic_of_var[static_cast<std::size_t>(r.target)]);
    case Requirement::kResidual:
      return Layout::nchwc(oc_of_var[static_cast<std::size_t>(r.target)]);
    case Requirement::kJoinOther: return origin_layout(r.target, oc_of_var);
    case Requirement::kDefault: return Layout::nchw();
  }
  return Layout::nchw();
}

}  // namespace detail

/// Builds the planning objective. Each requirement is charged on its own,
/// so two consumers needing the same transform of one value both pay for it.
inline LayoutProblem build_problem(const Graph& input, const CandidateMap& cands,
                                   const TransformCostFn& cost) {
  const Graph g = detail::strip_layouts(input);
  const OriginAnalysis oa = analyze_origins(g);
  LayoutProblem p;
  p.conv_ids = oa.conv_ids;
  p.var_of = oa.var_of;
  for (int id : p.conv_ids) {
    auto it = cands.find(id);
    if (it == cands.end() || it->second.empty()) {
      throw Error(ErrorCode::kMissingSchedule, "no candidates for conv " + std::to_string(id), id);
    }
    p.cands.push_back(it->second);
    std::vector<Cost> u;
    for (const auto& c : it->second) u.push_back(c.exec);
    p.unary.push_back(std::move(u));
  }
  auto count = [&](int var) -> std::size_t {
    return var < 0 ? 1 : p.cands[static_cast<std::size_t>(var)].size();
  };
  auto ic = [&](int var, std::size_t j) { return p.cands[static_cast<std::size_t>(var)][j].schedule.ic_bn; };
  auto oc = [&](int var, std::size_t j) { return p.cands[static_cast<std::size_t>(var)][j].schedule.oc_bn; };
  for (const auto& r : oa.requirements) {
    const Shape logical = logical_nchw(g.spec(r.source));
    const int s = r.source_origin;
    const int t = r.target;
    // Layout on each side as a function of that side's variable choice.
    auto src_layout = [&](std::size_t i) {
      return s < 0 ? Layout::nchw() : Layout::nchwc(oc(s, i));
    };
    auto dst_layout = [&](std::size_t j) {
      switch (r.kind) {
        case Requirement::kConvInput: return Layout::nchwc(ic(t, j));
        case Requirement::kResidual: return Layout::nchwc(oc(t, j));
        case Requirement::kJoinOther: return t < 0 ? Layout::nchw() : Layout::nchwc(oc(t, j));
        case Requirement::kDefault: break;
      }
      return Layout::nchw();
    };
    if (s < 0 && t < 0) continue;
    if (s == t) {
      for (std::size_t i = 0; i < count(s); ++i) {
        p.unary[static_cast<std::size_t>(s)][i] += cost(logical, src_layout(i), dst_layout(i));
      }
    } else if (s < 0 || t < 0) {
      const int v = s < 0 ? t : s;
      for (std::size_t i = 0; i < count(v); ++i) {
        p.unary[static_cast<std::size_t>(v)][i] +=
            s < 0 ? cost(logical, src_layout(0), dst_layout(i))
                  : cost(logical, src_layout(i), dst_layout(0));
      }
    } else {
      PairTerm term;
      term.a = s;
      term.b = t;
      term.m.resize(count(s) * count(t));
      for (std::size_t i = 0; i < count(s); ++i)
        for (std::size_t j = 0; j < count(t); ++j) {
          term.m[i * count(t) + j] = cost(logical, src_layout(i), dst_layout(j));
        }
      if (r.kind == Requirement::kJoinOther) {
        term.join = r.join;
        term.join_first = t;
      }
      p.pairs.push_back(std::move(term));
    }
  }
  return p;
}

/// Number of LayoutTransform nodes alter_and_insert_transforms will create
/// for `assign` under the eliminating policy, derived from the origin
/// analysis rather than by running the rewrite.
inline int predicted_transforms(const Graph& input, const LayoutAssignment& assign) {
  const Graph g = detail::strip_layouts(input);
  const OriginAnalysis oa = analyze_origins(g);
  std::vector<int> ic, oc;
  for (int id : oa.conv_ids) {
    const auto& s = assign.convs.at(id);
    ic.push_back(s.blocked() ? s.ic_bn : 0);
    oc.push_back(s.blocked() ? s.oc_bn : 0);
  }
  auto layout_of_origin = [&](int o) {
    return o < 0 ? Layout::nchw() : Layout::feature_map(oc[static_cast<std::size_t>(o)]);
  };
  // Channel concats whose inputs do not divide by the adopted block fall
  // back to default layout, which changes the layout they produce.
  std::map<int, bool> concat_fallback;
  std::map<int, Layout> produced;
  for (int id : topo_sort(g)) {
    const Node& n = g.node(id);
    if (!oa.origin.count(id)) continue;
    Layout l = layout_of_origin(oa.origin.at(id));
    if (n.kind == OpKind::kConv2d) {
      l = Layout::feature_map(oc[static_cast<std::size_t>(oa.var_of.at(id))]);
    } else if (n.kind != OpKind::kInput) {
      l = produced.at(n.inputs[0].node);
    }
    if (n.kind == OpKind::kConcat && l.tag == LayoutTag::kNCHWc) {
      bool ok = n.attrs.axis == 1;
      for (const auto& in : n.inputs) ok = ok && logical_nchw(g.spec(in))[1] % l.x == 0;
      if (!ok) {
        concat_fallback[id] = true;
        l = Layout::nchw();
      }
    }
    if (n.kind == OpKind::kConcat && n.attrs.axis != 1) l = Layout::nchw();
    produced[id] = l;
  }
  std::set<std::pair<int, Layout>> needed;
  for (const auto& r : oa.requirements) {
    Layout want;
    switch (r.kind) {
      case Requirement::kConvInput:
        want = Layout::feature_map(ic[static_cast<std::size_t>(r.target)]);
        break;
      case Requirement::kResidual:
        want = Layout::feature_map(oc[static_cast<std::size_t>(r.target)]);
        break;
      case Requirement::kJoinOther: want = produced.at(r.join); break;
      case Requirement::kDefault: want = Layout::nchw(); break;
    }
    if (produced.at(r.source) != want) needed.insert({r.source, want});
  }
  // The first input of a fallen-back concat is coerced too.
  for (const auto& [id, fell] : concat_fallback) {
    const NodeInput first = g.node(id).inputs[0];
    if (fell && produced.at(first.node) != Layout::nchw()) needed.insert({first.node, Layout::nchw()});
  }
  return static_cast<int>(needed.size());
}

// ---------------------------------------------------------------------------
// Exact search

struct DpOptions {
  std::size_t state_cap = 1'000'000;
  std::optional<std::chrono::steady_clock::time_point> deadline;
};

struct Assignment {
  std::vector<int> choice;  // per variable
  Cost total;
};

/// Exact minimisation by variable elimination in topological order. The
/// table at each step is indexed by the joint choice of the processed
/// convs that still have edges to unprocessed ones; on a chain that is one
/// conv, and joins keep a joint state only while both branches are open.
inline Assignment dp_plan(const LayoutProblem& p, const DpOptions& opt = {}) {
  const int n = static_cast<int>(p.size());
  if (n == 0) return {{}, Cost{0}};
  std::vector<int> last_use(static_cast<std::size_t>(n));
  std::iota(last_use.begin(), last_use.end(), 0);
  // Terms attached to their later endpoint.
  std::vector<std::vector<std::size_t>> terms_at(static_cast<std::size_t>(n));
  for (std::size_t t = 0; t < p.pairs.size(); ++t) {
    const auto& term = p.pairs[t];
    const int lo = std::min(term.a, term.b), hi = std::max(term.a, term.b);
    last_use[static_cast<std::size_t>(lo)] = std::max(last_use[static_cast<std::size_t>(lo)], hi);
    terms_at[static_cast<std::size_t>(hi)].push_back(t);
  }
  auto radix = [&](int v) { return p.cands[static_cast<std::size_t>(v)].size(); };

  struct Step {
    std::vector<int> ext;       // old frontier then the new variable
    std::vector<int> frontier;  // variables kept after this step
    std::vector<std::size_t> back;
  };
  std::vector<Step> steps;
  std::vector<int> frontier;
  std::vector<Cost> table{Cost{0}};
  std::size_t ticks = 0;

  for (int v = 0; v < n; ++v) {
    Step st;
    st.ext = frontier;
    st.ext.push_back(v);
    std::size_t ext_size = table.size() * radix(v);
    if (ext_size > opt.state_cap || ext_size / radix(v) != table.size()) {
      throw Error(ErrorCode::kStateExplosion,
                  "joint state count " + std::to_string(ext_size) + " exceeds cap " +
                      std::to_string(opt.state_cap));
    }
    for (int u : st.ext) {
      if (last_use[static_cast<std::size_t>(u)] > v) st.frontier.push_back(u);
    }
    // ext digits are little-endian (first ext variable varies fastest), so
    // the old table index is the ext index modulo the old table size.
    std::vector<std::size_t> new_stride(st.ext.size(), 0);
    std::size_t new_size = 1;
    for (std::size_t k = 0; k < st.ext.size(); ++k) {
      if (std::find(st.frontier.begin(), st.frontier.end(), st.ext[k]) != st.frontier.end()) {
        new_stride[k] = new_size;
        new_size *= radix(st.ext[k]);
      }
    }
    // Position of each term's other endpoint within ext.
    struct TermRef {
      const PairTerm* term;
      std::size_t other_pos;
      bool v_is_a;
    };
    std::vector<TermRef> refs;
    for (std::size_t t : terms_at[static_cast<std::size_t>(v)]) {
      const auto& term = p.pairs[t];
      const bool v_is_a = term.a == v;
      const int other = v_is_a ? term.b : term.a;
      auto pos = static_cast<std::size_t>(
          std::find(st.ext.begin(), st.ext.end(), other) - st.ext.begin());
      refs.push_back({&term, pos, v_is_a});
    }
    std::vector<Cost> next(new_size, Cost::inf());
    std::vector<bool> seen(new_size, false);
    st.back.assign(new_size, 0);
    std::vector<std::size_t> digit(st.ext.size(), 0);
    const std::size_t vpos = st.ext.size() - 1;
    for (std::size_t e = 0; e < ext_size; ++e) {
      if (opt.deadline && (ticks++ & 0xFFFF) == 0 &&
          std::chrono::steady_clock::now() > *opt.deadline) {
        throw Error(ErrorCode::kPlanTimeout, "dp search exceeded its time budget");
      }
      const std::size_t old_index = e % table.size();
      const std::size_t j = digit[vpos];
      Cost c = table[old_index] + p.unary[static_cast<std::size_t>(v)][j];
      for (const auto& r : refs) {
        const std::size_t i = digit[r.other_pos];
        const std::size_t cols = radix(r.term->b);
        c += r.v_is_a ? r.term->m[j * cols + i] : r.term->m[i * cols + j];
      }
      std::size_t ni = 0;
      for (std::size_t k = 0; k < digit.size(); ++k) ni += digit[k] * new_stride[k];
      if (!seen[ni] || c < next[ni]) {
        seen[ni] = true;
        next[ni] = c;
        st.back[ni] = e;
      }
      for (std::size_t k = 0; k < digit.size(); ++k) {
        if (++digit[k] < radix(st.ext[k])) break;
        digit[k] = 0;
      }
    }
    table = std::move(next);
    frontier = st.frontier;
    steps.push_back(std::move(st));
  }

  Assignment out;
  out.total = table.at(0);
  out.choice.assign(static_cast<std::size_t>(n), 0);
  std::size_t index = 0;
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    std::size_t e = it->back[index];
    std::vector<std::size_t> digit(it->ext.size());
    for (std::size_t k = 0; k < it->ext.size(); ++k) {
      digit[k] = e % radix(it->ext[k]);
      e /= radix(it->ext[k]);
      out.choice[static_cast<std::size_t>(it->ext[k])] = static_cast<int>(digit[k]);
    }
    // Index into the previous step's table: the old frontier digits.
    index = 0;
    std::size_t stride = 1;
    for (std::size_t k = 0; k + 1 < it->ext.size(); ++k) {
      index += digit[k] * stride;
      stride *= radix(it->ext[k]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PBQP approximation

struct PbqpInstance {
  struct Edge {
    int u = -1;
    int v = -1;
    std::vector<Cost> m;  // |u| x |v|
  };
  std::vector<std::vector<Cost>> costs;
  std::vector<int> node_ref;  // graph node id of each PBQP node
  std::vector<Edge> edges;
  int num_vars = 0;           // leading nodes that are conv variables

  Cost evaluate(const std::vector<int>& sel) const {
    Cost total{0};
    for (std::size_t i = 0; i < costs.size(); ++i) total += costs[i][static_cast<std::size_t>(sel[i])];
    for (const auto& e : edges) {
      total += e.m[static_cast<std::size_t>(sel[static_cast<std::size_t>(e.u)]) *
                       costs[static_cast<std::size_t>(e.v)].size() +
                   static_cast<std::size_t>(sel[static_cast<std::size_t>(e.v)])];
    }
    return total;
  }
};

/// Maps the planning problem to PBQP. Convs become nodes with their cost
/// vectors. Each join whose coercions created pairwise terms becomes an
/// extra node with the candidate list of its first input, tied to it by a
/// matrix with zero diagonal and infinite elsewhere; the coercion matrices
/// then connect the join node to its other inputs.
inline PbqpInstance pbqp_reduce(const LayoutProblem& p) {
  PbqpInstance inst;
  inst.costs = p.unary;
  inst.node_ref = p.conv_ids;
  inst.num_vars = static_cast<int>(p.size());
  std::map<int, int> join_node;
  for (const auto& t : p.pairs) {
    if (t.join < 0) {
      inst.edges.push_back({t.a, t.b, t.m});
      continue;
    }
    auto [it, fresh] = join_node.try_emplace(t.join, static_cast<int>(inst.costs.size()));
    const int f = t.join_first;
    const std::size_t nf = p.cands[static_cast<std::size_t>(f)].size();
    if (fresh) {
      inst.costs.emplace_back(nf, Cost{0});
      inst.node_ref.push_back(t.join);
      std::vector<Cost> diag(nf * nf, Cost::inf());
      for (std::size_t i = 0; i < nf; ++i) diag[i * nf + i] = Cost{0};
      inst.edges.push_back({f, it->second, std::move(diag)});
    }
    // Same matrix, with the first-input endpoint renamed to the join node.
    PbqpInstance::Edge e{t.a == f ? it->second : t.a, t.b == f ? it->second : t.b, t.m};
    inst.edges.push_back(std::move(e));
  }
  return inst;
}

namespace detail {

struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<Cost> m;
  Cost at(std::size_t i, std::size_t j) const { return m[i * cols + j]; }
  Matrix transposed() const {
    Matrix t{cols, rows, std::vector<Cost>(m.size())};
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t.m[j * rows + i] = at(i, j);
    return t;
  }
};

}  // namespace detail

struct PbqpSolution {
  std::vector<int> selection;
  Cost cost;
  int r0 = 0, r1 = 0, r2 = 0, rn = 0;  // reduction counts
};

/// Heuristic PBQP solve: degree-0/1/2 reductions while any node has degree
/// at most two, otherwise eliminate the highest-degree node (ties to the
/// lowest index) at its locally best choice; then back-propagate.
inline PbqpSolution pbqp_solve(const PbqpInstance& inst) {
  using detail::Matrix;
  const int n = static_cast<int>(inst.costs.size());
  std::vector<std::vector<Cost>> cost = inst.costs;
  std::map<std::pair<int, int>, Matrix> edges;  // key (u < v), rows index u
  auto add_edge = [&](int u, int v, Matrix m) {
    if (u > v) {
      std::swap(u, v);
      m = m.transposed();
    }
    auto [it, fresh] = edges.try_emplace({u, v}, m);
    if (!fresh) {
      for (std::size_t k = 0; k < m.m.size(); ++k) it->second.m[k] += m.m[k];
    }
  };
  for (const auto& e : inst.edges) {
    NEOPLAN_CHECK(e.m.size() == inst.costs[static_cast<std::size_t>(e.u)].size() *
                                    inst.costs[static_cast<std::size_t>(e.v)].size(),
                  ErrorCode::kInvalidArgument, "edge matrix does not match node vectors");
    if (e.u == e.v) {
      // Self edge: only the diagonal is reachable.
      auto& c = cost[static_cast<std::size_t>(e.u)];
      for (std::size_t i = 0; i < c.size(); ++i) c[i] += e.m[i * c.size() + i];
      continue;
    }
    add_edge(e.u, e.v, Matrix{inst.costs[static_cast<std::size_t>(e.u)].size(),
                              inst.costs[static_cast<std::size_t>(e.v)].size(), e.m});
  }
  // Edge oriented with rows indexing `u`.
  auto oriented = [&](int u, int v) -> Matrix {
    const Matrix& m = edges.at({std::min(u, v), std::max(u, v)});
    return u < v ? m : m.transposed();
  };
  auto neighbors = [&](int u) {
    std::vector<int> out;
    for (const auto& [key, m] : edges) {
      if (key.first == u) out.push_back(key.second);
      if (key.second == u) out.push_back(key.first);
    }
    std::sort(out.begin(), out.end());
    return out;
  };

  struct Record {
    int kind;  // 0, 1, 2 or 3 for RN
    int u;
    std::vector<int> nb;
    std::vector<Cost> cu;
    std::vector<Matrix> ms;  // oriented u x nb[k]
    int fixed = 0;
  };
  std::vector<Record> stack;
  std::vector<bool> alive(static_cast<std::size_t>(n), true);
  PbqpSolution sol;
  auto argmin = [](const std::vector<Cost>& v) {
    return static_cast<int>(std::min_element(v.begin(), v.end()) - v.begin());
  };

  for (int remaining = n; remaining > 0; --remaining) {
    // Reducible nodes (degree <= 2) first, lowest degree then lowest index;
    // otherwise the highest-degree node, lowest index on ties.
    int pick = -1;
    std::vector<int> pick_nb;
    for (int u = 0; u < n; ++u) {
      if (!alive[static_cast<std::size_t>(u)]) continue;
      auto nb = neighbors(u);
      const bool better =
          pick < 0 ||
          (nb.size() <= 2 ? pick_nb.size() > 2 || nb.size() < pick_nb.size()
                          : pick_nb.size() > 2 && nb.size() > pick_nb.size());
      if (better) {
        pick = u;
        pick_nb = std::move(nb);
      }
    }
    const int u = pick;
    Record rec;
    rec.u = u;
    rec.nb = pick_nb;
    rec.cu = cost[static_cast<std::size_t>(u)];
    for (int v : pick_nb) rec.ms.push_back(oriented(u, v));
    const auto& cu = rec.cu;
    if (pick_nb.empty()) {
      rec.kind = 0;
      ++sol.r0;
    } else if (pick_nb.size() == 1) {
      rec.kind = 1;
      ++sol.r1;
      const Matrix& m = rec.ms[0];
      auto& cv = cost[static_cast<std::size_t>(pick_nb[0])];
      for (std::size_t j = 0; j < m.cols; ++j) {
        Cost best = Cost::inf();
        for (std::size_t i = 0; i < m.rows; ++i) best = std::min(best, cu[i] + m.at(i, j));
        cv[j] += best;
      }
    } else if (pick_nb.size() == 2) {
      rec.kind = 2;
      ++sol.r2;
      const Matrix& mv = rec.ms[0];
      const Matrix& mw = rec.ms[1];
      Matrix d{mv.cols, mw.cols, std::vector<Cost>(mv.cols * mw.cols)};
      for (std::size_t j = 0; j < mv.cols; ++j)
        for (std::size_t k = 0; k < mw.cols; ++k) {
          Cost best = Cost::inf();
          for (std::size_t i = 0; i < mv.rows; ++i) {
            best = std::min(best, cu[i] + mv.at(i, j) + mw.at(i, k));
          }
          d.m[j * mw.cols + k] = best;
        }
      add_edge(pick_nb[0], pick_nb[1], std::move(d));
    } else {
      rec.kind = 3;
      ++sol.rn;
      std::vector<Cost> local(cu.size());
      for (std::size_t i = 0; i < cu.size(); ++i) {
        Cost c = cu[i];
        for (std::size_t k = 0; k < pick_nb.size(); ++k) {
          const auto& cv = cost[static_cast<std::size_t>(pick_nb[k])];
          Cost best = Cost::inf();
          for (std::size_t j = 0; j < cv.size(); ++j) best = std::min(best, rec.ms[k].at(i, j) + cv[j]);
          c += best;
        }
        local[i] = c;
      }
      rec.fixed = argmin(local);
      for (std::size_t k = 0; k < pick_nb.size(); ++k) {
        auto& cv = cost[static_cast<std::size_t>(pick_nb[k])];
        for (std::size_t j = 0; j < cv.size(); ++j) {
          cv[j] += rec.ms[k].at(static_cast<std::size_t>(rec.fixed), j);
        }
      }
    }
    for (int v : pick_nb) edges.erase({std::min(u, v), std::max(u, v)});
    alive[static_cast<std::size_t>(u)] = false;
    stack.push_back(std::move(rec));
  }

  sol.selection.assign(static_cast<std::size_t>(n), 0);
  for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
    const Record& r = *it;
    if (r.kind == 3) {
      sol.selection[static_cast<std::size_t>(r.u)] = r.fixed;
      continue;
    }
    std::vector<Cost> local = r.cu;
    for (std::size_t k = 0; k < r.nb.size(); ++k) {
      const auto j = static_cast<std::size_t>(sol.selection[static_cast<std::size_t>(r.nb[k])]);
      for (std::size_t i = 0; i < local.size(); ++i) local[i] += r.ms[k].at(i, j);
    }
    sol.selection[static_cast<std::size_t>(r.u)] = argmin(local);
  }
  sol.cost = inst.evaluate(sol.selection);
  if (sol.cost.is_inf()) throw Error(ErrorCode::kInfeasible, "no finite-cost assignment found");
  return sol;
}

// ---------------------------------------------------------------------------
// Planning entry points

enum class Solver { kAuto, kDp, kPbqp };

struct PlanOptions {
  Solver solver = Solver::kAuto;
  std::size_t state_cap = 1'000'000;
  std::chrono::milliseconds time_budget{10'000};
  std::string cpu;  // empty: this machine
};

struct SchemePlan {
  std::string solver = "DP";  // "DP" or "PBQP"
  Cost predicted_total{0};
  Cost exec_total{0};
  std::map<int, SchemeCandidate> convs;

  LayoutAssignment assignment() const {
    LayoutAssignment a;
    for (const auto& [id, c] : convs) a.convs[id] = c.schedule;
    return a;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["solver"] = solver;
    j["predicted_total_ns"] = predicted_total.ns;
    j["exec_total_ns"] = exec_total.ns;
    j["convs"] = nlohmann::json::object();
    for (const auto& [id, c] : convs) {
      j["convs"][std::to_string(id)] = {{"ic_bn", c.schedule.ic_bn},
                                        {"oc_bn", c.schedule.oc_bn},
                                        {"reg_n", c.schedule.reg_n},
                                        {"unroll", c.schedule.unroll_ker},
                                        {"exec_ns", c.exec.ns}};
    }
    return j;
  }

  static SchemePlan from_json(const nlohmann::json& j) {
    SchemePlan p;
    try {
      p.solver = j.at("solver").get<std::string>();
      p.predicted_total = Cost{j.at("predicted_total_ns").get<int64_t>()};
      p.exec_total = Cost{j.value("exec_total_ns", int64_t{0})};
      for (const auto& [key, c] : j.at("convs").items()) {
        SchemeCandidate sc;
        sc.schedule = {c.at("ic_bn").get<int>(), c.at("oc_bn").get<int>(), c.at("reg_n").get<int>(),
                       c.at("unroll").get<bool>()};
        sc.exec = Cost{c.value("exec_ns", int64_t{0})};
        p.convs[std::stoi(key)] = sc;
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kValidation, std::string("bad plan file: ") + e.what());
    }
    return p;
  }
};

/// Solves an already-built problem with the requested solver.
inline SchemePlan solve_problem(const LayoutProblem& p, const PlanOptions& opt = {}) {
  SchemePlan plan;
  Assignment best;
  bool done = false;
  if (opt.solver != Solver::kPbqp) {
    try {
      DpOptions dopt;
      dopt.state_cap = opt.state_cap;
      dopt.deadline = std::chrono::steady_clock::now() + opt.time_budget;
      best = dp_plan(p, dopt);
      plan.solver = "DP";
      done = true;
    } catch (const Error& e) {
      if (opt.solver == Solver::kDp || (e.code() != ErrorCode::kStateExplosion &&
                                        e.code() != ErrorCode::kPlanTimeout)) {
        throw;
      }
    }
  }
  if (!done) {
    const PbqpInstance inst = pbqp_reduce(p);
    const PbqpSolution sol = pbqp_solve(inst);
    best.choice.assign(sol.selection.begin(), sol.selection.begin() + inst.num_vars);
    best.total = p.evaluate(best.choice);
    plan.solver = "PBQP";
  }
  if (best.total.is_inf()) throw Error(ErrorCode::kInfeasible, "every layout plan has infinite cost");
  plan.predicted_total = best.total;
  plan.exec_total = p.exec_cost(best.choice);
  for (std::size_t v = 0; v < p.size(); ++v) {
    plan.convs[p.conv_ids[v]] = p.cands[v][static_cast<std::size_t>(best.choice[v])];
  }
  return plan;
}

inline SchemePlan plan_with_candidates(const Graph& g, const CandidateMap& cands,
                                       const TransformCostFn& cost, const PlanOptions& opt = {}) {
  return solve_problem(build_problem(g, cands, cost), opt);
}

/// Keeps the fastest schedule of each (ic_bn, oc_bn) pair; the rest of the
/// graph only sees the pair.
inline std::vector<SchemeCandidate> prune_candidates(const std::vector<MeasuredScheme>& measured) {
  std::map<std::pair<int, int>, SchemeCandidate> best;
  for (const auto& m : measured) {
    SchemeCandidate c{m.schedule, Cost{std::max<int64_t>(1, std::llround(m.mean_ns))}};
    auto key = std::make_pair(m.schedule.ic_bn, m.schedule.oc_bn);
    auto it = best.find(key);
    if (it == best.end() || c.exec < it->second.exec) best[key] = c;
  }
  std::vector<SchemeCandidate> out;
  for (const auto& [k, c] : best) out.push_back(c);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.exec < b.exec; });
  return out;
}

/// Candidate lists for every conv of `g` from the schedule database.
inline CandidateMap candidates_from_db(const Graph& input, const ScheduleDb& db,
                                       const std::string& cpu) {
  const Graph g = infer_shapes(input);
  CandidateMap out;
  for (int id : conv_ids(g)) {
    const ConvWorkload wl = conv_workload(g, g.node(id));
    auto measured = db.get({cpu, wl});
    if (!measured || measured->empty()) {
      throw Error(ErrorCode::kMissingSchedule, "no tuned schedules for workload " + wl.str(), id);
    }
    out[id] = prune_candidates(*measured);
  }
  return out;
}

/// Full global search over a graph that has been simplified (batch norms
/// folded, elementwise ops fused).
inline SchemePlan plan(const Graph& g, const ScheduleDb& db, const TransformCostFn& cost,
                       const PlanOptions& opt = {}) {
  const std::string cpu = opt.cpu.empty() ? cpu_identifier() : opt.cpu;
  return plan_with_candidates(g, candidates_from_db(g, db, cpu), cost, opt);
}

// ---------------------------------------------------------------------------
// Pipelines

/// fold_batchnorm then fuse_elementwise.
inline Graph simplify(const Graph& g) { return fuse_elementwise(fold_batchnorm(g)); }

/// Layout rewrite plus optional weight pre-packing.
inline Graph lower(const Graph& simplified, const LayoutAssignment& assign,
                   TransformPolicy policy = TransformPolicy::kEliminate, bool pretransform = true) {
  Graph out = alter_and_insert_transforms(simplified, assign, policy);
  return pretransform ? pretransform_weights(out) : out;
}

}  // namespace neoplan
