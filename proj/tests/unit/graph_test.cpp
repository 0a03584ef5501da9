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


#include <gtest/gtest.h>

#include "support/fixtures.hpp"

namespace neoplan {
namespace {

bool has(const std::vector<Violation>& vs, ViolationKind k) {
  return std::any_of(vs.begin(), vs.end(), [&](const Violation& v) { return v.kind == k; });
}

Graph diamond() {
  GraphBuilder b("diamond");
  int in = b.input("x", {1, 4, 6, 6});
  int a = b.relu(in);
  int c = b.relu(in);
  b.output(b.add(a, c));
  return b.build();
}

TEST(OpKind, NamesRoundTrip) {
  for (const auto& [k, name] : kOpKindNames) EXPECT_EQ(parse_op_kind(op_kind_name(k)), k);
  EXPECT_THROW(parse_op_kind("Deconv"), Error);
}

TEST(TopoSort, DiamondOrder) {
  Graph g = diamond();
  auto order = topo_sort(g);
  ASSERT_EQ(order.size(), 4u);
  auto pos = [&](int id) { return std::find(order.begin(), order.end(), id) - order.begin(); };
  EXPECT_EQ(g.node(order.front()).kind, OpKind::kInput);
  EXPECT_EQ(g.node(order.back()).kind, OpKind::kElementwiseAdd);
  for (const auto& [id, n] : g.nodes)
    for (const auto& in : n.inputs) EXPECT_LT(pos(in.node), pos(id));
}

TEST(TopoSort, TiesBreakByAscendingId) {
  Graph g = diamond();
  EXPECT_EQ(topo_sort(g), (std::vector<int>{0, 1, 2, 3}));
}

TEST(Validate, DetectsCycle) {
  Graph g = diamond();
  g.node(1).inputs[0] = {3, 0};
  EXPECT_TRUE(has(validate(g), ViolationKind::kCycle));
  try {
    topo_sort(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCycleDetected);
  }
  try {
    infer_shapes(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCycleDetected);
  }
}

TEST(Validate, ReportsStructuralProblems) {
  Graph g = diamond();
  EXPECT_TRUE(validate(g).empty());

  Graph self = g;
  self.node(1).inputs[0] = {1, 0};
  EXPECT_TRUE(has(validate(self), ViolationKind::kSelfLoop));

  Graph dangling = g;
  dangling.node(2).inputs[0] = {42, 0};
  EXPECT_TRUE(has(validate(dangling), ViolationKind::kDanglingInput));

  Graph arity = g;
  arity.node(3).inputs.pop_back();
  EXPECT_TRUE(has(validate(arity), ViolationKind::kArityMismatch));

  Graph no_out = g;
  no_out.outputs.clear();
  EXPECT_TRUE(has(validate(no_out), ViolationKind::kEmptyOutputs));

  Graph bad_out = g;
  bad_out.outputs = {99};
  EXPECT_TRUE(has(validate(bad_out), ViolationKind::kDanglingOutput));

  Graph orphan = g;
  NodeAttrs a;
  a.name = "ghost";
  a.shape = {4};
  a.layout = Layout::plain();
  orphan.add(OpKind::kConstant, a, {});
  EXPECT_TRUE(has(validate(orphan), ViolationKind::kMissingConstant));
  try {
    require_valid(orphan);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kValidation);
  }
}

TEST(InferShapes, ConvPoolDenseChain) {
  GraphBuilder b("net");
  int x = b.input("x", {2, 3, 32, 30});
  int w = b.constant("w", random_tensor({8, 3, 5, 5}, Layout::kcrs(), 1));
  int c = b.conv(x, w, 2, 2);
  int p = b.max_pool(c, 2, 2);
  int f = b.flatten(p);
  int dw = b.constant("dw", random_tensor({10, 8 * 8 * 7}, Layout::plain(), 2));
  int d = b.dense(f, dw);
  b.output(b.softmax(d));
  Graph g = b.build();
  EXPECT_EQ(g.spec(c).shape, (Shape{2, 8, 16, 15}));
  EXPECT_EQ(g.spec(p).shape, (Shape{2, 8, 8, 7}));
  EXPECT_EQ(g.spec(f).shape, (Shape{2, 8 * 8 * 7}));
  EXPECT_EQ(g.spec(d).shape, (Shape{2, 10}));
  EXPECT_EQ(g.spec(d).layout, Layout::plain());
  ConvWorkload wl = conv_workload(g, g.node(c));
  EXPECT_EQ(wl, (ConvWorkload{3, 8, 32, 30, 5, 5, 2, 2}));
}

TEST(InferShapes, ConcatAndMismatches) {
  GraphBuilder b("cat");
  int x = b.input("x", {1, 4, 5, 5});
  int y = b.input("y", {1, 6, 5, 5});
  int cat = b.concat({x, y});
  b.output(cat);
  EXPECT_EQ(b.build().spec(cat).shape, (Shape{1, 10, 5, 5}));

  GraphBuilder bad("bad");
  int u = bad.input("u", {1, 4, 5, 5});
  int v = bad.input("v", {1, 6, 5, 5});
  bad.output(bad.add(u, v));
  try {
    bad.build();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(InferShapes, NhwcInputBecomesNchw) {
  GraphBuilder b("nhwc");
  int x = b.input("x", {1, 8, 9, 3}, Layout::nhwc());
  b.output(b.relu(x));
  Graph g = b.build();
  EXPECT_EQ(g.spec(x).shape, (Shape{1, 3, 8, 9}));
  EXPECT_EQ(g.spec(x).layout, Layout::nchw());
}

TEST(InferShapes, BlockedConvChecksLayouts) {
  GraphBuilder b("blk");
  int x = b.input("x", {1, 8, 6, 6});
  int w = b.constant("w", random_tensor({16, 8, 3, 3}, Layout::kcrs(), 1));
  int c = b.conv(x, w, 1, 1);
  b.output(c);
  Graph g = b.build();
  g.node(c).attrs.schedule = {4, 8, 2, false};
  try {
    infer_shapes(g);  // data is still NCHW
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  NodeAttrs t;
  t.src_layout = Layout::nchw();
  t.dst_layout = Layout::nchwc(4);
  int lt = g.add(OpKind::kLayoutTransform, t, {{x, 0}});
  g.node(c).inputs[0] = {lt, 0};
  Graph ok = infer_shapes(g);
  EXPECT_EQ(ok.spec(c).layout, Layout::nchwc(8));
  EXPECT_EQ(ok.spec(c).shape, (Shape{1, 2, 6, 6, 8}));

  g.node(lt).attrs.src_layout = Layout::nchwc(2);
  try {
    infer_shapes(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kWrongLayout);
  }
}

TEST(GraphEdit, ReplaceUsesAndDeadNodes) {
  Graph g = diamond();
  g.replace_uses(2, {1, 0});
  EXPECT_EQ(g.use_count(1), 2);
  EXPECT_EQ(g.use_count(2), 0);
  g.remove_dead_nodes();
  EXPECT_FALSE(g.contains(2));
  EXPECT_TRUE(g.contains(0));
  EXPECT_EQ(g.consumers(1), (std::vector<int>{3}));
}

}  // namespace
}  // namespace neoplan
