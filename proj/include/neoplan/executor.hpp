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

#include <chrono>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "neoplan/conv.hpp"
#include "neoplan/graph.hpp"
#include "neoplan/layout_transform.hpp"
#include "neoplan/ops.hpp"
#include "neoplan/thread_pool.hpp"
#include "neoplan/tuner.hpp"

namespace neoplan {

/// Graph compiled for repeated execution: nodes in topological order and
/// activation buffers shared between values whose lifetimes do not overlap.
class Executor {
 public:
  struct Slot {
    int node = -1;
    int buffer = -1;  // index into buffers; -1 for constants
    int def = 0;      // step that writes it
    int last_use = 0; // last step that reads it (INT_MAX for graph outputs)
  };

  explicit Executor(const Graph& graph) : g_(infer_shapes(graph)) {
    order_ = topo_sort(g_);
    for (const auto& [id, n] : g_.nodes) {
      if (n.kind == OpKind::kInput) inputs_.push_back(id);
    }
    plan_buffers();
  }

  const Graph& graph() const { return g_; }
  const std::vector<Slot>& slots() const { return slots_; }
  std::size_t buffer_count() const { return buffer_sizes_.size(); }
  const std::vector<int64_t>& buffer_sizes() const { return buffer_sizes_; }

  /// Input names in node-id order.
  std::vector<std::string> input_names() const {
    std::vector<std::string> names;
    for (int id : inputs_) names.push_back(g_.node(id).attrs.name);
    return names;
  }

  /// Declared spec of an input (NHWC inputs keep their NHWC shape).
  TensorSpec input_spec(const std::string& name) const {
    for (int id : inputs_) {
      const Node& n = g_.node(id);
      if (n.attrs.name == name) return {n.attrs.shape, DataType::kF32, n.attrs.layout};
    }
    throw Error(ErrorCode::kInputMismatch, "graph has no input '" + name + "'");
  }

  /// Runs the graph. Outputs come back in graph-output order, default layout.
  std::vector<Tensor> run(const std::map<std::string, Tensor>& feeds, ThreadPool& pool) {
    NEOPLAN_CHECK(feeds.size() == inputs_.size(), ErrorCode::kInputMismatch,
                  "expected " + std::to_string(inputs_.size()) + " inputs, got " +
                      std::to_string(feeds.size()));
    for (std::size_t b = 0; b < buffers_.size(); ++b) {
      if (!buffers_[b]) buffers_[b] = detail::aligned_floats(buffer_sizes_[b]);
    }
    for (int id : order_) run_node(g_.node(id), feeds, pool);
    std::vector<Tensor> outs;
    for (int o : g_.outputs) {
      TensorView v = view(o);
      Tensor t = Tensor::from_data(v.shape, v.layout, v.data);
      if (t.layout().tag == LayoutTag::kNCHWc) t = unpack_data(t);
      outs.push_back(std::move(t));
    }
    return outs;
  }

 private:
  void plan_buffers() {
    std::map<int, int> step_of;
    for (std::size_t i = 0; i < order_.size(); ++i) step_of[order_[i]] = static_cast<int>(i);
    std::map<int, int> last;
    for (int id : order_) {
      for (const auto& in : g_.node(id).inputs) {
        last[in.node] = std::max(last[in.node], step_of.at(id));
      }
    }
    for (int o : g_.outputs) last[o] = std::numeric_limits<int>::max();
    // Greedy linear scan: the smallest free buffer that fits, else the
    // largest free one grown to fit, else a new buffer.
    std::vector<bool> free_buf;
    for (std::size_t i = 0; i < order_.size(); ++i) {
      const int id = order_[i];
      const Node& n = g_.node(id);
      Slot s{id, -1, static_cast<int>(i), last.count(id) ? last[id] : static_cast<int>(i)};
      if (n.kind != OpKind::kConstant) {
        const int64_t need = g_.spec(id).numel();
        int fit = -1, largest = -1;
        for (std::size_t b = 0; b < free_buf.size(); ++b) {
          if (!free_buf[b]) continue;
          const int64_t size = buffer_sizes_[b];
          if (size >= need && (fit < 0 || size < buffer_sizes_[static_cast<std::size_t>(fit)])) {
            fit = static_cast<int>(b);
          }
          if (largest < 0 || size > buffer_sizes_[static_cast<std::size_t>(largest)]) {
            largest = static_cast<int>(b);
          }
        }
        int pick = fit >= 0 ? fit : largest;
        if (pick < 0) {
          pick = static_cast<int>(buffer_sizes_.size());
          buffer_sizes_.push_back(0);
          free_buf.push_back(false);
        }
        auto& size = buffer_sizes_[static_cast<std::size_t>(pick)];
        size = std::max(size, need);
        free_buf[static_cast<std::size_t>(pick)] = false;
        s.buffer = pick;
      }
      slot_index_[id] = slots_.size();
      slots_.push_back(s);
      // Release inputs whose lifetime ends here, after the output is placed
      // so a node never writes over its own operands.
      for (const auto& in : n.inputs) {
        const Slot& src = slots_[slot_index_.at(in.node)];
        if (src.buffer >= 0 && src.last_use == static_cast<int>(i)) {
          free_buf[static_cast<std::size_t>(src.buffer)] = true;
        }
      }
      // Values nobody reads are dead on arrival.
      if (s.buffer >= 0 && s.last_use == static_cast<int>(i)) {
        free_buf[static_cast<std::size_t>(s.buffer)] = true;
      }
    }
    buffers_.resize(buffer_sizes_.size());
  }

  TensorView view(int id) const {
    const Node& n = g_.node(id);
    const TensorSpec& spec = g_.spec(id);
    if (n.kind == OpKind::kConstant) return g_.constant(n).view();
    const Slot& s = slots_[slot_index_.at(id)];
    return {std::span<const float>(buffers_[static_cast<std::size_t>(s.buffer)].get(),
                                   static_cast<std::size_t>(spec.numel())),
            spec.shape, spec.layout};
  }

  MutableTensorView out_view(int id) {
    const TensorSpec& spec = g_.spec(id);
    const Slot& s = slots_[slot_index_.at(id)];
    return {std::span<float>(buffers_[static_cast<std::size_t>(s.buffer)].get(),
                             static_cast<std::size_t>(spec.numel())),
            spec.shape, spec.layout};
  }

  void run_node(const Node& n, const std::map<std::string, Tensor>& feeds, ThreadPool& pool) {
    auto in = [&](std::size_t i) { return view(n.inputs.at(i).node); };
    switch (n.kind) {
      case OpKind::kConstant: return;
      case OpKind::kInput: {
        auto it = feeds.find(n.attrs.name);
        NEOPLAN_CHECK(it != feeds.end(), ErrorCode::kInputMismatch,
                      "missing input '" + n.attrs.name + "'");
        const Tensor& t = it->second;
        NEOPLAN_CHECK(t.shape() == n.attrs.shape && t.layout() == n.attrs.layout,
                      ErrorCode::kInputMismatch,
                      "input '" + n.attrs.name + "' expects " + shape_str(n.attrs.shape) + " " +
                          n.attrs.layout.str() + ", got " + shape_str(t.shape()) + " " +
                          t.layout().str());
        auto out = out_view(n.id);
        if (t.layout().tag == LayoutTag::kNHWC) {
          Tensor c = nhwc_to_nchw(t);
          std::copy(c.data().begin(), c.data().end(), out.data.begin());
        } else {
          std::copy(t.data().begin(), t.data().end(), out.data.begin());
        }
        return;
      }
      case OpKind::kConv2d: {
        const ConvWorkload wl = conv_workload(g_, n);
        Epilogue epi;
        std::size_t next = 2;
        if (n.attrs.has_bias) epi.bias = in(next++).data;
        if (n.attrs.has_residual) epi.residual = in(next);
        epi.relu = n.attrs.relu;
        const auto& sch = n.attrs.schedule;
        TensorView w = in(1);
        if (!sch.blocked()) {
          conv_nchw_into(in(0), w, wl, epi, out_view(n.id), pool);
          return;
        }
        if (w.layout.tag == LayoutTag::kKCRS) {
          // Not pre-packed: pay the weight transform on every run.
          const Layout packed_layout = Layout::kcrsck(sch.ic_bn, sch.oc_bn);
          auto [it, fresh] = weight_scratch_.try_emplace(n.id);
          if (fresh) it->second = Tensor(packed_weight_shape(w.shape, sch.ic_bn, sch.oc_bn), packed_layout);
          pack_weights_into(w, it->second.mutable_view());
          conv_blocked_into(in(0), it->second.view(), wl, sch, epi, out_view(n.id), pool);
          return;
        }
        conv_blocked_into(in(0), w, wl, sch, epi, out_view(n.id), pool);
        return;
      }
      case OpKind::kBatchNorm: {
        if (n.attrs.scale_shift) {
          scale_shift_into(in(0), in(1).data, in(2).data, out_view(n.id), pool);
          return;
        }
        std::vector<float> scale, shift;
        batch_norm_coefficients(in(1).data, in(2).data, in(3).data, in(4).data, n.attrs.eps,
                                scale, shift);
        scale_shift_into(in(0), scale, shift, out_view(n.id), pool);
        return;
      }
      case OpKind::kReLU: relu_into(in(0), out_view(n.id), pool); return;
      case OpKind::kSoftmax: softmax_into(in(0), out_view(n.id), pool); return;
      case OpKind::kMaxPool:
      case OpKind::kAvgPool:
        pool_into(n.kind == OpKind::kMaxPool ? PoolKind::kMax : PoolKind::kAvg, in(0),
                  n.attrs.kernel_h, n.attrs.kernel_w, n.attrs.stride, n.attrs.pad, out_view(n.id),
                  pool);
        return;
      case OpKind::kElementwiseAdd: add_into(in(0), in(1), out_view(n.id), pool); return;
      case OpKind::kConcat: {
        std::vector<TensorView> views;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) views.push_back(in(i));
        concat_into(views, n.attrs.axis, out_view(n.id));
        return;
      }
      case OpKind::kFlatten: {
        auto src = in(0);
        auto dst = out_view(n.id);
        std::copy(src.data.begin(), src.data.end(), dst.data.begin());
        return;
      }
      case OpKind::kDense: {
        std::span<const float> bias;
        if (n.inputs.size() == 3) bias = in(2).data;
        dense_into(in(0), in(1), bias, out_view(n.id), pool);
        return;
      }
      case OpKind::kLayoutTransform:
        transform_feature_map_into(in(0), out_view(n.id), &pool);
        return;
    }
  }

  Graph g_;
  std::vector<int> order_;
  std::vector<int> inputs_;
  std::vector<Slot> slots_;
  std::map<int, std::size_t> slot_index_;
  std::vector<int64_t> buffer_sizes_;
  std::vector<std::unique_ptr<float[], detail::AlignedFree>> buffers_;
  std::map<int, Tensor> weight_scratch_;
};

/// Seeded random feeds matching every graph input.
inline std::map<std::string, Tensor> random_inputs(const Executor& ex, uint64_t seed) {
  std::map<std::string, Tensor> feeds;
  uint64_t s = seed;
  for (const auto& name : ex.input_names()) {
    TensorSpec spec = ex.input_spec(name);
    feeds.emplace(name, random_tensor(spec.shape, spec.layout, s++));
  }
  return feeds;
}

/// Convenience: compile and run once.
inline std::vector<Tensor> execute(const Graph& g, const std::map<std::string, Tensor>& feeds,
                                   ThreadPool& pool) {
  Executor ex(g);
  return ex.run(feeds, pool);
}

struct BenchResult {
  int threads = 1;
  int samples = 0;
  double mean_ns = 0.0;
  double stderr_ns = 0.0;

  std::string csv() const {
    std::ostringstream os;
    os.precision(1);
    os << std::fixed << threads << "," << samples << "," << mean_ns << "," << stderr_ns;
    return os.str();
  }
};

inline constexpr const char* kBenchCsvHeader = "threads,samples,mean_ns,stderr_ns";

/// Sequential single-image inferences after `warmups` untimed runs.
inline BenchResult benchmark(Executor& ex, ThreadPool& pool,
                             const std::map<std::string, Tensor>& feeds, int samples,
                             int warmups = 3) {
  NEOPLAN_CHECK(samples >= 1, ErrorCode::kInvalidArgument, "samples must be >= 1");
  for (int i = 0; i < std::max(warmups, 3); ++i) ex.run(feeds, pool);
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    ex.run(feeds, pool);
    auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
  }
  auto [mean, se] = mean_and_stderr(times);
  return {pool.size(), samples, mean, se};
}

/// Thread counts 1, 2, 4, ... up to `max_threads`, plus `max_threads`.
inline std::vector<int> scaling_thread_counts(int max_threads) {
  std::vector<int> out;
  for (int t = 1; t < max_threads; t *= 2) out.push_back(t);
  out.push_back(std::max(max_threads, 1));
  return out;
}

}  // namespace neoplan
