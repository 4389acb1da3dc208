/*
 * Copyright 2026 The birdclef-baseline Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "birdclef/nn/layers.hpp"
#include "birdclef/nn/ops.hpp"
#include "birdclef/nn/optim.hpp"
#include "grad_suite.hpp"
#include "test_support.hpp"

namespace bc = birdclef;
namespace nn = birdclef::nn;
using T4 = nn::Tensor<float>;

TEST(Tensor, ShapeContract) {
  T4 t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(T4({2, 0}), bc::ShapeError);
  EXPECT_THROW(T4({2, 2}, std::vector<float>(3)), bc::ShapeError);
  EXPECT_TRUE(t.all_finite());
  t[5] = std::nanf("");
  EXPECT_FALSE(t.all_finite());
}

TEST(Conv2d, FirstGroupShape) {
  T4 x({1, 1, 128, 256}, 0.5f);
  T4 w({64, 1, 3, 3}, 0.1f);
  EXPECT_EQ(nn::conv2d(x, w).shape(), (nn::Shape{1, 64, 128, 256}));
}

TEST(Conv2d, CenteredDeltaIsIdentity) {
  std::mt19937_64 rng(1);
  T4 x({1, 1, 7, 9});
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& v : x.values()) v = u(rng);
  T4 w({1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0f;
  EXPECT_TRUE(nn::conv2d(x, w) == x);
}

TEST(Conv2d, DepthwiseOnesSumsWindow) {
  const std::size_t c = 3;
  T4 x({1, c, 6, 6}, 1.0f);
  T4 w({c, 1, 3, 3}, 1.0f);
  const auto y = nn::conv2d(x, w, {1, static_cast<int>(c)});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 1; i < 5; ++i)
      for (std::size_t j = 1; j < 5; ++j) EXPECT_FLOAT_EQ(y.at(0, ch, i, j), 9.0f);
    EXPECT_FLOAT_EQ(y.at(0, ch, 0, 0), 4.0f);
    EXPECT_FLOAT_EQ(y.at(0, ch, 0, 3), 6.0f);
  }
}

TEST(Conv2d, StrideUsesCeil) {
  T4 x({2, 2, 5, 7}, 1.0f);
  T4 w({4, 2, 3, 3}, 1.0f);
  EXPECT_EQ(nn::conv2d(x, w, {2, 1}).shape(), (nn::Shape{2, 4, 3, 4}));
  EXPECT_EQ(nn::conv2d(x, T4({4, 1, 3, 3}, 1.0f), {2, 2}).shape(), (nn::Shape{2, 4, 3, 4}));
  EXPECT_EQ(nn::conv_out_dim(128, 3, 2), 64u);
  EXPECT_EQ(nn::conv_out_dim(7, 1, 2), 4u);
}

TEST(Conv2d, NaiveOracle) {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> d;
  for (int stride : {1, 2}) {
    for (int groups : {1, 2}) {
      T4 x({2, 4, 7, 6});
      T4 w({6, static_cast<std::size_t>(4 / groups), 3, 3});
      for (auto& v : x.values()) v = d(rng);
      for (auto& v : w.values()) v = d(rng);
      const auto y = nn::conv2d(x, w, {stride, groups});
      const std::size_t cg = 4 / groups, fg = 6 / groups;
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t f = 0; f < 6; ++f)
          for (std::size_t i = 0; i < y.dim(2); ++i)
            for (std::size_t j = 0; j < y.dim(3); ++j) {
              double acc = 0.0;
              const std::size_t g = f / fg;
              for (std::size_t c = 0; c < cg; ++c)
                for (int a = 0; a < 3; ++a)
                  for (int b = 0; b < 3; ++b) {
                    const long r = static_cast<long>(i) * stride + a - 1;
                    const long s = static_cast<long>(j) * stride + b - 1;
                    if (r < 0 || s < 0 || r >= 7 || s >= 6) continue;
                    acc += static_cast<double>(x.at(n, g * cg + c, static_cast<std::size_t>(r), static_cast<std::size_t>(s))) *
                           w.at(f, c, static_cast<std::size_t>(a), static_cast<std::size_t>(b));
                  }
              ASSERT_NEAR(y.at(n, f, i, j), acc, 1e-4) << stride << "/" << groups;
            }
    }
  }
}

TEST(Conv2d, RejectsBadShapes) {
  T4 x({1, 3, 4, 4});
  EXPECT_THROW(nn::conv2d(x, T4({4, 3, 3, 3}), {1, 2}), bc::ShapeError);
  EXPECT_THROW(nn::conv2d(x, T4({4, 2, 3, 3})), bc::ShapeError);
  EXPECT_THROW(nn::conv2d(T4({3, 4, 4}), T4({4, 3, 3, 3})), bc::ShapeError);
}

TEST(BatchNorm, NormalizedInputPassesThrough) {
  // Per-channel values +-1 have mean 0 and biased variance 1.
  T4 x({2, 1, 1, 2}, std::vector<float>{1, -1, -1, 1});
  std::vector<float> g{1}, b{0}, rm{0}, rv{1};
  const auto y = nn::batch_norm_train<float>(x, g, b, rm, rv, 1e-5, 0.9, true, nullptr);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
  std::vector<float> g2{2}, b2{3};
  const auto y2 = nn::batch_norm_train<float>(x, g2, b2, rm, rv, 1e-5, 0.9, false, nullptr);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y2[i], 2 * x[i] + 3, 1e-4);
}

TEST(BatchNorm, InferUsesRunningStats) {
  T4 x({1, 2, 2, 2}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
  std::vector<float> g{1, 1}, b{0, 0}, rm{0, 0}, rv{1, 1};
  const auto y = nn::batch_norm_infer<float>(x, g, b, rm, rv, 1e-5);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(y[i], x[i] / std::sqrt(1.0 + 1e-5), 1e-6);
  EXPECT_THROW(nn::batch_norm_infer<float>(x, std::vector<float>{1}, b, rm, rv, 1e-5), bc::ShapeError);
}

TEST(BatchNorm, RunningStatUpdate) {
  T4 x({2, 1, 1, 2}, std::vector<float>{1, 2, 3, 6});
  std::vector<float> g{1}, b{0}, rm{1}, rv{2};
  nn::batch_norm_train<float>(x, g, b, rm, rv, 1e-5, 0.9, true, nullptr);
  // batch mean 3, biased variance (4 + 1 + 0 + 9) / 4 = 3.5
  EXPECT_NEAR(rm[0], 0.9 * 1 + 0.1 * 3, 1e-6);
  EXPECT_NEAR(rv[0], 0.9 * 2 + 0.1 * 3.5, 1e-6);
  std::vector<float> rm2{1}, rv2{2};
  nn::batch_norm_train<float>(x, g, b, rm2, rv2, 1e-5, 0.9, false, nullptr);
  EXPECT_EQ(rm2[0], 1.0f);
  EXPECT_EQ(rv2[0], 2.0f);
}

TEST(Activations, Examples) {
  const auto r = nn::relu(T4({3}, std::vector<float>{-1, 0, 2}));
  EXPECT_EQ(r.storage(), (std::vector<float>{0, 0, 2}));
  const auto gap = nn::global_avg_pool(T4({1, 2, 3, 3}, 4.5f));
  EXPECT_EQ(gap.shape(), (nn::Shape{1, 2}));
  EXPECT_FLOAT_EQ(gap[0], 4.5f);
  const auto s = nn::softmax(T4({1, 2}));
  EXPECT_FLOAT_EQ(s[0], 0.5f);
  EXPECT_FLOAT_EQ(s[1], 0.5f);
}

TEST(MaxPool, WindowMaximaAndOddRejection) {
  T4 x({1, 1, 2, 4}, std::vector<float>{1, 5, 2, 0, 3, 4, 8, 7});
  const auto y = nn::max_pool_2x2(x);
  EXPECT_EQ(y.storage(), (std::vector<float>{5, 8}));
  EXPECT_THROW(nn::max_pool_2x2(T4({1, 1, 3, 4})), bc::ShapeError);
  EXPECT_THROW(nn::max_pool_2x2(T4({1, 1, 4, 5})), bc::ShapeError);
}

TEST(Activations, NanPropagates) {
  const float nan = std::nanf("");
  EXPECT_TRUE(std::isnan(nn::relu(T4({2}, std::vector<float>{nan, -1}))[0]));
  nn::ReluLayer<float> relu;
  EXPECT_TRUE(std::isnan(relu.forward(T4({1}, std::vector<float>{nan}), nn::Mode::kTrain)[0]));
  for (std::size_t at = 0; at < 4; ++at) {
    T4 x({1, 1, 2, 2}, std::vector<float>{1, 9, 2, 3});
    x[at] = nan;
    EXPECT_TRUE(std::isnan(nn::max_pool_2x2(x)[0])) << at;
  }
}

TEST(Dense, Example) {
  T4 x({1, 2}, std::vector<float>{1, 2});
  T4 w({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  T4 b({3}, std::vector<float>{0.5f, 0, -1});
  EXPECT_EQ(nn::dense(x, w, b).storage(), (std::vector<float>{9.5f, 12, 14}));
  EXPECT_THROW(nn::dense(x, T4({3, 3}), b), bc::ShapeError);
}

TEST(SoftmaxProperty, RowsSumToOneForLargeLogits) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-50.0f, 50.0f);
  T4 z({64, 37});
  for (auto& v : z.values()) v = u(rng);
  const auto p = nn::softmax(z);
  ASSERT_TRUE(p.all_finite());
  for (std::size_t i = 0; i < 64; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 37; ++j) s += p[i * 37 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(nn::cross_entropy<float>(T4({2, 2}, std::vector<float>{1, 0, 0, 1}), std::vector<int>{0, 1}), 0.0, 1e-9);
  EXPECT_NEAR(nn::cross_entropy<float>(T4({1, 4}, 0.25f), std::vector<int>{2}), std::log(4.0), 1e-6);
  EXPECT_NEAR(nn::cross_entropy<float>(T4({2, 2}, 0.5f), std::vector<int>{0, 1}), std::log(2.0), 1e-6);
  EXPECT_THROW(nn::cross_entropy<float>(T4({1, 2}, 0.5f), std::vector<int>{2}), bc::ShapeError);
  EXPECT_THROW(nn::cross_entropy<float>(T4({1, 2}, 0.5f), std::vector<int>{-1}), bc::ShapeError);
}

TEST(Backward, MeanGradientIsUniform) {
  nn::GlobalAvgPoolLayer<double> gap;
  gap.forward(nn::Tensor<double>({1, 1, 4, 5}, 3.0), nn::Mode::kTrain);
  const auto dx = gap.backward(nn::Tensor<double>({1, 1}, 1.0));
  for (double v : dx.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 20.0);
}

TEST(Backward, DetachedBranchGetsZeroGradient) {
  std::mt19937_64 rng(3);
  nn::DenseLayer<float> used("used", 3, 2), unused("unused", 3, 2);
  used.init(rng);
  unused.init(rng);
  T4 x({2, 3}, 0.7f);
  used.forward(x, nn::Mode::kTrain);
  unused.forward(x, nn::Mode::kTrain);
  used.weight().zero_grad();
  unused.weight().zero_grad();
  used.backward(T4({2, 2}, 1.0f));
  unused.backward(T4({2, 2}, 0.0f));
  for (float v : unused.weight().grad.values()) EXPECT_EQ(v, 0.0f);
  for (float v : unused.bias().grad.values()) EXPECT_EQ(v, 0.0f);
  bool any = false;
  for (float v : used.weight().grad.values()) any = any || v != 0.0f;
  EXPECT_TRUE(any);
}

TEST(Backward, RequiresTrainModeForward) {
  nn::Conv2dLayer<float> conv("c", 1, 1, 3, {});
  EXPECT_THROW(conv.backward(T4({1, 1, 4, 4})), bc::Error);
  conv.forward(T4({1, 1, 4, 4}), nn::Mode::kInfer);
  EXPECT_THROW(conv.backward(T4({1, 1, 4, 4})), bc::Error);
  nn::BatchNormLayer<float> bn("bn", 1);
  EXPECT_THROW(bn.backward(T4({1, 1, 4, 4})), bc::Error);
  nn::ReluLayer<float> relu;
  EXPECT_THROW(relu.backward(T4({1})), bc::Error);
  nn::MaxPoolLayer<float> pool;
  EXPECT_THROW(pool.backward(T4({1, 1, 1, 1})), bc::Error);
}

TEST(BatchNormLayer, RunningStatsAreNotTrainable) {
  nn::BatchNormLayer<float> bn("bn1", 4);
  const auto params = bn.parameters();
  ASSERT_EQ(params.size(), 4u);
  EXPECT_TRUE(params[0]->trainable);
  EXPECT_TRUE(params[1]->trainable);
  EXPECT_FALSE(params[2]->trainable);
  EXPECT_FALSE(params[3]->trainable);
  std::mt19937_64 rng(1);
  T4 x({2, 4, 2, 2});
  std::normal_distribution<float> d;
  for (auto& v : x.values()) v = d(rng);
  for (auto* p : params) p->zero_grad();
  bn.forward(x, nn::Mode::kTrain);
  bn.backward(T4(x.shape(), 1.0f));
  EXPECT_TRUE(params[0]->has_grad);
  EXPECT_FALSE(params[2]->has_grad);
  EXPECT_FALSE(params[3]->has_grad);
}

TEST(GradientCheck, EveryLayerType) {
  for (const auto& [name, g] : bc::testing::layer_gradient_suite()) {
    EXPECT_LT(g.max_rel_error, bc::testing::kGradTolerance) << name << ": worst " << g.worst;
    EXPECT_GT(g.checked, 0u) << name;
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  nn::Parameter<float> p("p", T4({5}, 0.3f));
  p.zero_grad();
  p.has_grad = true;
  std::vector<nn::Parameter<float>*> ps{&p};
  nn::adam_step<float>(ps, 0.001, 1);
  for (float v : p.value.values()) EXPECT_EQ(v, 0.3f);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (float g : {0.5f, -2.0f, 1e-3f}) {
    nn::Parameter<double> p("p", nn::Tensor<double>({3}, 1.0));
    p.grad.fill(g);
    p.has_grad = true;
    std::vector<nn::Parameter<double>*> ps{&p};
    nn::adam_step<double>(ps, 0.001, 1);
    // m_hat = g, v_hat = g^2 at t = 1, so the step is lr * g / (|g| + eps).
    const double expected = 1.0 - 0.001 * g / (std::abs(g) + 1e-8);
    for (double v : p.value.values()) EXPECT_NEAR(v, expected, 1e-12);
    EXPECT_NEAR(std::abs(1.0 - p.value[0]), 0.001, 1e-7);
  }
}

TEST(Adam, IdenticalInputsIdenticalUpdates) {
  nn::Parameter<float> a("a", T4({4}, 0.5f)), b("b", T4({4}, 0.5f));
  for (auto* p : {&a, &b}) {
    p->grad = T4({4}, std::vector<float>{0.1f, -0.2f, 0.3f, 0.0f});
    p->has_grad = true;
  }
  std::vector<nn::Parameter<float>*> pa{&a}, pb{&b};
  for (int t = 1; t <= 5; ++t) {
    nn::adam_step<float>(pa, 0.01, t);
    nn::adam_step<float>(pb, 0.01, t);
  }
  EXPECT_TRUE(a.value == b.value);
}

TEST(Adam, Preconditions) {
  nn::Parameter<float> p("p", T4({2}));
  nn::Parameter<float> frozen("r", T4({2}, 7.0f), false);
  std::vector<nn::Parameter<float>*> ps{&p, &frozen};
  EXPECT_THROW(nn::adam_step<float>(ps, 0.001, 1), bc::Error);  // no gradient
  p.has_grad = true;
  EXPECT_THROW(nn::adam_step<float>(ps, 0.001, 0), bc::Error);
  p.grad.fill(1.0f);
  nn::adam_step<float>(ps, 0.001, 1);
  EXPECT_EQ(frozen.value[0], 7.0f);
}

TEST(CosineLr, Examples) {
  nn::LrSchedule s;
  EXPECT_EQ(nn::cosine_lr(0, s), 0.001);
  EXPECT_NEAR(nn::cosine_lr(5, s), 0.0005, 1e-12);
  EXPECT_EQ(nn::cosine_lr(10, s), 0.001);
  EXPECT_EQ(nn::cosine_lr(20, s), 0.001);
  EXPECT_THROW(nn::cosine_lr(0, {0.001, 0}), bc::ConfigError);
}

TEST(CosineLrProperty, WithinBoundsAndPeriodic) {
  for (int cycle : {1, 3, 10, 17}) {
    nn::LrSchedule s{0.001, cycle};
    for (int e = 0; e < 100; ++e) {
      const double lr = nn::cosine_lr(e, s);
      EXPECT_GT(lr, 0.0);
      EXPECT_LE(lr, 0.001);
      EXPECT_EQ(lr, nn::cosine_lr(e + cycle, s));
      if (e % cycle != 0) EXPECT_LT(lr, nn::cosine_lr(e - 1, s));
    }
  }
}

BIRDCLEF_TEST_MAIN()
