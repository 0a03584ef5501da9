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

#include <cmath>

#include "support/fixtures.hpp"

namespace neoplan {
namespace {

TEST(Ops, ReluAndAdd) {
  ThreadPool pool(testing::lanes(2));
  Tensor a = random_tensor({1, 4, 3, 3}, Layout::nchw(), 1);
  Tensor b = random_tensor({1, 4, 3, 3}, Layout::nchw(), 2);
  Tensor r(a.shape(), a.layout()), s(a.shape(), a.layout());
  relu_into(a.view(), r.mutable_view(), pool);
  add_into(a.view(), b.view(), s.mutable_view(), pool);
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    EXPECT_EQ(r.data()[i], a.data()[i] > 0 ? a.data()[i] : 0.0f);
    EXPECT_EQ(s.data()[i], a.data()[i] + b.data()[i]);
  }
  Tensor c = random_tensor({1, 4, 3, 4}, Layout::nchw(), 3);
  EXPECT_THROW(add_into(a.view(), c.view(), s.mutable_view(), pool), Error);
}

TEST(Ops, BatchNormCoefficients) {
  std::vector<float> gamma{2.0f}, beta{1.0f}, mean{3.0f}, var{3.0f};
  std::vector<float> scale, shift;
  batch_norm_coefficients(gamma, beta, mean, var, 1.0f, scale, shift);
  // (x - 3) * 2 / sqrt(4) + 1 = x - 2
  EXPECT_FLOAT_EQ(scale[0], 1.0f);
  EXPECT_FLOAT_EQ(shift[0], -2.0f);
}

TEST(Ops, ScaleShiftIsLayoutIndependent) {
  ThreadPool pool(1);
  Tensor x = random_tensor({1, 8, 3, 3}, Layout::nchw(), 4);
  Tensor sc = random_tensor({8}, Layout::plain(), 5);
  Tensor sh = random_tensor({8}, Layout::plain(), 6);
  Tensor plain(x.shape(), x.layout());
  scale_shift_into(x.view(), sc.data(), sh.data(), plain.mutable_view(), pool);
  for (int64_t c = 0; c < 8; ++c)
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 3; ++j)
        EXPECT_FLOAT_EQ(plain.at({0, c, i, j}), x.at({0, c, i, j}) * sc.data()[c] + sh.data()[c]);
  Tensor xp = pack_data(x, 4);
  Tensor blocked(xp.shape(), xp.layout());
  scale_shift_into(xp.view(), sc.data(), sh.data(), blocked.mutable_view(), pool);
  EXPECT_TRUE(unpack_data(blocked).bit_equal(plain));
}

// Pooling oracle over NCHW with padding excluded from both max and mean.
Tensor oracle_pool(PoolKind kind, const Tensor& in, int win, int stride, int pad) {
  const int64_t n = in.shape()[0], c = in.shape()[1], h = in.shape()[2], w = in.shape()[3];
  const int64_t oh = (h + 2 * pad - win) / stride + 1, ow = (w + 2 * pad - win) / stride + 1;
  Tensor out({n, c, oh, ow}, Layout::nchw());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x) {
          double acc = kind == PoolKind::kMax ? -INFINITY : 0.0;
          int taps = 0;
          for (int i = 0; i < win; ++i)
            for (int j = 0; j < win; ++j) {
              const int64_t yy = y * stride + i - pad, xx = x * stride + j - pad;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              const double v = in.at({b, ch, yy, xx});
              acc = kind == PoolKind::kMax ? std::max(acc, v) : acc + v;
              ++taps;
            }
          out.at({b, ch, y, x}) = static_cast<float>(kind == PoolKind::kMax ? acc : acc / taps);
        }
  return out;
}

TEST(Ops, PoolingMatchesOracleInBothLayouts) {
  ThreadPool pool(testing::lanes(2));
  Tensor x = random_tensor({2, 8, 9, 7}, Layout::nchw(), 7);
  for (PoolKind kind : {PoolKind::kMax, PoolKind::kAvg})
    for (auto [win, stride, pad] : std::vector<std::array<int, 3>>{{2, 2, 0}, {3, 2, 1}, {3, 1, 1}}) {
      Tensor want = oracle_pool(kind, x, win, stride, pad);
      Tensor got(want.shape(), Layout::nchw());
      pool_into(kind, x.view(), win, win, stride, pad, got.mutable_view(), pool);
      EXPECT_LT(max_rel_error(got, want), 1e-6);
      Tensor xp = pack_data(x, 4);
      Tensor gp(feature_map_shape(want.shape(), Layout::nchwc(4)), Layout::nchwc(4));
      pool_into(kind, xp.view(), win, win, stride, pad, gp.mutable_view(), pool);
      EXPECT_LT(max_rel_error(unpack_data(gp), want), 1e-6);
    }
}

TEST(Ops, ChannelConcatBlocked) {
  Tensor a = random_tensor({2, 4, 3, 3}, Layout::nchw(), 8);
  Tensor b = random_tensor({2, 8, 3, 3}, Layout::nchw(), 9);
  Tensor want({2, 12, 3, 3}, Layout::nchw());
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 12; ++c)
      for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 3; ++j)
          want.at({n, c, i, j}) = c < 4 ? a.at({n, c, i, j}) : b.at({n, c - 4, i, j});
  Tensor ap = pack_data(a, 4), bp = pack_data(b, 4);
  std::vector<TensorView> ins{ap.view(), bp.view()};
  Tensor out({2, 3, 3, 3, 4}, Layout::nchwc(4));
  concat_into(ins, 1, out.mutable_view());
  EXPECT_TRUE(unpack_data(out).bit_equal(want));
}

TEST(Ops, DenseAndSoftmax) {
  ThreadPool pool(1);
  Tensor x = random_tensor({3, 5}, Layout::plain(), 10);
  Tensor w = random_tensor({4, 5}, Layout::plain(), 11);
  Tensor bias = random_tensor({4}, Layout::plain(), 12);
  Tensor y({3, 4}, Layout::plain());
  dense_into(x.view(), w.view(), bias.data(), y.mutable_view(), pool);
  for (int64_t n = 0; n < 3; ++n)
    for (int64_t u = 0; u < 4; ++u) {
      double acc = bias.data()[u];
      for (int64_t f = 0; f < 5; ++f) acc += double(x.at({n, f})) * w.at({u, f});
      EXPECT_NEAR(y.at({n, u}), acc, 1e-5);
    }
  Tensor s({3, 4}, Layout::plain());
  softmax_into(y.view(), s.mutable_view(), pool);
  for (int64_t n = 0; n < 3; ++n) {
    double denom = 0;
    for (int64_t u = 0; u < 4; ++u) denom += std::exp(double(y.at({n, u})));
    for (int64_t u = 0; u < 4; ++u) EXPECT_NEAR(s.at({n, u}), std::exp(double(y.at({n, u}))) / denom, 1e-6);
  }
}

TEST(Ops, ChannelSoftmaxBlockedMatchesPlain) {
  ThreadPool pool(1);
  Tensor x = random_tensor({1, 8, 2, 3}, Layout::nchw(), 13);
  Tensor plain(x.shape(), x.layout());
  softmax_into(x.view(), plain.mutable_view(), pool);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 3; ++j) {
      double sum = 0;
      for (int64_t c = 0; c < 8; ++c) sum += plain.at({0, c, i, j});
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  Tensor xp = pack_data(x, 4);
  Tensor blocked(xp.shape(), xp.layout());
  softmax_into(xp.view(), blocked.mutable_view(), pool);
  EXPECT_TRUE(unpack_data(blocked).bit_equal(plain));
}

}  // namespace
}  // namespace neoplan
