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

// Model files: a graph JSON document plus a binary weights container.
//
// Graph JSON:
//   {"name": str, "outputs": [id...],
//    "nodes": [{"id": int, "kind": str, "attrs": {...}, "inputs": [[id, slot]...]}]}
//
// Weights container (little-endian):
//   "NPWT" | u32 version | u32 count
//   count x { u16 name_len | name | u8 dtype | u8 rank | u64 dims[rank] | u64 offset }
//   u32 crc32 of every header byte before it
//   f32 payloads, each starting at a 64-byte aligned file offset
// Entries are sorted by name.

#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "neoplan/graph.hpp"
#include "neoplan/tuner.hpp"

namespace neoplan {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Graph JSON

inline json attrs_to_json(const Node& n) {
  const NodeAttrs& a = n.attrs;
  json j = json::object();
  switch (n.kind) {
    case OpKind::kConv2d:
      j["kernel_h"] = a.kernel_h;
      j["kernel_w"] = a.kernel_w;
      j["stride"] = a.stride;
      j["pad"] = a.pad;
      j["has_bias"] = a.has_bias;
      j["has_residual"] = a.has_residual;
      j["relu"] = a.relu;
      if (a.schedule.blocked()) {
        j["schedule"] = {{"ic_bn", a.schedule.ic_bn},
                         {"oc_bn", a.schedule.oc_bn},
                         {"reg_n", a.schedule.reg_n},
                         {"unroll_ker", a.schedule.unroll_ker}};
      }
      break;
    case OpKind::kMaxPool:
    case OpKind::kAvgPool:
      j["kernel_h"] = a.kernel_h;
      j["kernel_w"] = a.kernel_w;
      j["stride"] = a.stride;
      j["pad"] = a.pad;
      break;
    case OpKind::kBatchNorm:
      j["eps"] = a.eps;
      j["scale_shift"] = a.scale_shift;
      break;
    case OpKind::kConcat: j["axis"] = a.axis; break;
    case OpKind::kLayoutTransform:
      j["src_layout"] = a.src_layout.str();
      j["dst_layout"] = a.dst_layout.str();
      break;
    case OpKind::kInput:
    case OpKind::kConstant:
      j["name"] = a.name;
      j["shape"] = a.shape;
      j["layout"] = a.layout.str();
      break;
    default: break;
  }
  return j;
}

inline NodeAttrs attrs_from_json(OpKind kind, const json& j) {
  NodeAttrs a;
  a.kernel_h = j.value("kernel_h", 0);
  a.kernel_w = j.value("kernel_w", 0);
  a.stride = j.value("stride", 1);
  a.pad = j.value("pad", 0);
  a.has_bias = j.value("has_bias", false);
  a.has_residual = j.value("has_residual", false);
  a.relu = j.value("relu", false);
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    a.schedule = {s.at("ic_bn").get<int>(), s.at("oc_bn").get<int>(), s.at("reg_n").get<int>(),
                  s.at("unroll_ker").get<bool>()};
  }
  a.eps = j.value("eps", 1e-5f);
  a.scale_shift = j.value("scale_shift", false);
  a.axis = j.value("axis", 1);
  if (kind == OpKind::kLayoutTransform) {
    a.src_layout = Layout::parse(j.at("src_layout").get<std::string>());
    a.dst_layout = Layout::parse(j.at("dst_layout").get<std::string>());
  }
  if (kind == OpKind::kInput || kind == OpKind::kConstant) {
    a.name = j.at("name").get<std::string>();
    a.shape = j.at("shape").get<Shape>();
    a.layout = Layout::parse(j.at("layout").get<std::string>());
  }
  return a;
}

inline json graph_to_json(const Graph& g) {
  json j;
  j["name"] = g.name;
  j["nodes"] = json::array();
  for (const auto& [id, n] : g.nodes) {
    json ins = json::array();
    for (const auto& in : n.inputs) ins.push_back({in.node, in.slot});
    j["nodes"].push_back({{"id", id},
                          {"kind", std::string(op_kind_name(n.kind))},
                          {"attrs", attrs_to_json(n)},
                          {"inputs", ins}});
  }
  j["outputs"] = g.outputs;
  return j;
}

/// Structure only; constant tensors are attached separately.
inline Graph graph_from_json(const json& j) {
  Graph g;
  try {
    g.name = j.value("name", "");
    for (const auto& jn : j.at("nodes")) {
      Node n;
      n.id = jn.at("id").get<int>();
      n.kind = parse_op_kind(jn.at("kind").get<std::string>());
      n.attrs = attrs_from_json(n.kind, jn.value("attrs", json::object()));
      for (const auto& in : jn.at("inputs")) {
        n.inputs.push_back({in.at(0).get<int>(), in.at(1).get<int>()});
      }
      if (g.nodes.count(n.id)) {
        throw Error(ErrorCode::kCorruptModel, "duplicate node id " + std::to_string(n.id));
      }
      g.nodes[n.id] = std::move(n);
    }
    g.outputs = j.at("outputs").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptModel, std::string("bad graph document: ") + e.what());
  }
  return g;
}

// ---------------------------------------------------------------------------
// Weights container

inline constexpr uint32_t kWeightsVersion = 1;
inline constexpr std::size_t kPayloadAlignment = 64;

struct NamedTensor {
  std::string name;
  std::shared_ptr<const Tensor> tensor;
};

inline std::vector<unsigned char> encode_weights(std::vector<NamedTensor> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  std::size_t header = 12 + 4;
  for (const auto& e : entries) {
    NEOPLAN_CHECK(e.name.size() <= 0xFFFF, ErrorCode::kInvalidArgument, "tensor name too long");
    NEOPLAN_CHECK(e.tensor->shape().size() <= 0xFF, ErrorCode::kInvalidArgument, "rank too large");
    header += 2 + e.name.size() + 1 + 1 + 8 * e.tensor->shape().size() + 8;
  }
  auto align = [](std::size_t v) { return (v + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment; };
  std::vector<uint64_t> offsets;
  std::size_t cursor = align(header);
  for (const auto& e : entries) {
    offsets.push_back(cursor);
    cursor = align(cursor + static_cast<std::size_t>(e.tensor->size()) * sizeof(float));
  }
  detail::ByteWriter w;
  w.bytes.insert(w.bytes.end(), {'N', 'P', 'W', 'T'});
  w.put<uint32_t>(kWeightsVersion);
  w.put<uint32_t>(static_cast<uint32_t>(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    w.put<uint16_t>(static_cast<uint16_t>(e.name.size()));
    w.bytes.insert(w.bytes.end(), e.name.begin(), e.name.end());
    w.put<uint8_t>(static_cast<uint8_t>(DataType::kF32));
    w.put<uint8_t>(static_cast<uint8_t>(e.tensor->shape().size()));
    for (auto d : e.tensor->shape()) w.put<uint64_t>(static_cast<uint64_t>(d));
    w.put<uint64_t>(offsets[i]);
  }
  w.put<uint32_t>(detail::crc32_of(w.bytes.data(), w.bytes.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    w.bytes.resize(offsets[i], 0);
    auto data = entries[i].tensor->data();
    const auto* p = reinterpret_cast<const unsigned char*>(data.data());
    w.bytes.insert(w.bytes.end(), p, p + data.size() * sizeof(float));
  }
  w.bytes.resize(cursor, 0);
  return w.bytes;
}

struct WeightsEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

inline std::vector<WeightsEntry> decode_weights(const std::vector<unsigned char>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size(), ErrorCode::kCorruptModel);
  const unsigned char* magic = r.take(4);
  NEOPLAN_CHECK(std::memcmp(magic, "NPWT", 4) == 0, ErrorCode::kCorruptModel, "bad weights magic");
  const auto version = r.get<uint32_t>();
  NEOPLAN_CHECK(version == kWeightsVersion, ErrorCode::kCorruptModel,
                "unsupported weights version " + std::to_string(version));
  const auto count = r.get<uint32_t>();
  struct Raw {
    std::string name;
    Shape shape;
    uint64_t offset;
  };
  std::vector<Raw> raw;
  for (uint32_t i = 0; i < count; ++i) {
    Raw e;
    const auto len = r.get<uint16_t>();
    const unsigned char* name = r.take(len);
    e.name.assign(reinterpret_cast<const char*>(name), len);
    NEOPLAN_CHECK(r.get<uint8_t>() == static_cast<uint8_t>(DataType::kF32), ErrorCode::kCorruptModel,
                  "unsupported dtype for '" + e.name + "'");
    const auto rank = r.get<uint8_t>();
    for (int d = 0; d < rank; ++d) {
      const auto dim = r.get<uint64_t>();
      NEOPLAN_CHECK(dim >= 1 && dim < (uint64_t{1} << 40), ErrorCode::kCorruptModel,
                    "bad dim in '" + e.name + "'");
      e.shape.push_back(static_cast<int64_t>(dim));
    }
    e.offset = r.get<uint64_t>();
    raw.push_back(std::move(e));
  }
  const std::size_t header_end = r.pos();
  const auto crc = r.get<uint32_t>();
  NEOPLAN_CHECK(crc == detail::crc32_of(bytes.data(), header_end), ErrorCode::kCorruptModel,
                "weights header checksum mismatch");
  std::vector<std::pair<uint64_t, uint64_t>> spans;
  std::vector<WeightsEntry> out;
  for (const auto& e : raw) {
    const uint64_t n = static_cast<uint64_t>(numel(e.shape));
    const uint64_t end = e.offset + n * sizeof(float);
    NEOPLAN_CHECK(e.offset % kPayloadAlignment == 0 && e.offset >= header_end + 4 &&
                      end <= bytes.size() && end > e.offset,
                  ErrorCode::kCorruptModel, "payload of '" + e.name + "' out of bounds");
    spans.emplace_back(e.offset, end);
    WeightsEntry w{e.name, e.shape, std::vector<float>(n)};
    std::memcpy(w.values.data(), bytes.data() + e.offset, n * sizeof(float));
    out.push_back(std::move(w));
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    NEOPLAN_CHECK(spans[i].first >= spans[i - 1].second, ErrorCode::kCorruptModel,
                  "overlapping payloads");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model = graph + weights

inline void save_model(const Graph& g, const std::filesystem::path& graph_path,
                       const std::filesystem::path& weights_path) {
  std::vector<NamedTensor> entries;
  for (const auto& [name, t] : g.constants) entries.push_back({name, t});
  detail::write_file(weights_path, encode_weights(std::move(entries)));
  const std::string text = graph_to_json(g).dump(1);
  detail::write_file(graph_path, std::vector<unsigned char>(text.begin(), text.end()));
}

/// Loads and shape-checks a model. Every Constant must name a tensor in the
/// container with its declared shape.
inline Graph load_model(const std::filesystem::path& graph_path,
                        const std::filesystem::path& weights_path) {
  const auto text = detail::read_file(graph_path);
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptModel, std::string("graph is not valid JSON: ") + e.what());
  }
  Graph g = graph_from_json(j);
  std::map<std::string, WeightsEntry> weights;
  for (auto& e : decode_weights(detail::read_file(weights_path))) weights[e.name] = std::move(e);
  for (const auto& [id, n] : g.nodes) {
    if (n.kind != OpKind::kConstant) continue;
    auto it = weights.find(n.attrs.name);
    NEOPLAN_CHECK(it != weights.end(), ErrorCode::kCorruptModel,
                  "constant '" + n.attrs.name + "' missing from weights container");
    NEOPLAN_CHECK(it->second.shape == n.attrs.shape, ErrorCode::kCorruptModel,
                  "constant '" + n.attrs.name + "' has shape " + shape_str(it->second.shape) +
                      ", graph declares " + shape_str(n.attrs.shape));
    g.constants[n.attrs.name] = std::make_shared<const Tensor>(
        Tensor::from_data(it->second.shape, n.attrs.layout, it->second.values));
  }
  return infer_shapes(g);
}

/// Companion weights path: "model.json" -> "model.npwt".
inline std::filesystem::path default_weights_path(const std::filesystem::path& graph_path) {
  auto p = graph_path;
  return p.replace_extension(".npwt");
}

}  // namespace neoplan
