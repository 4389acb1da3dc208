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

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "birdclef/model.hpp"
#include "birdclef/nn/layers.hpp"
#include "birdclef/nn/ops.hpp"
#include "gradcheck.hpp"

// Finite-difference checks for every layer type of the network, run in the
// double-precision path.
namespace birdclef::testing {

using NamedCheck = std::pair<std::string, GradCheck>;

inline GradCheck check_conv(nn::Shape xs, std::size_t filters, nn::ConvSpec spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto x = random_tensor(xs, rng);
  auto w = random_tensor({filters, xs[1] / static_cast<std::size_t>(spec.groups), 3, 3}, rng, 0.5);
  const auto y0 = nn::conv2d(x, w, spec);
  const auto r = random_tensor(y0.shape(), rng);
  nn::Tensor<double> dx, dw(w.shape());
  nn::conv2d_backward(x, w, r, spec, &dx, dw);
  auto loss = [&] { return weighted_sum(nn::conv2d(x, w, spec), r); };
  GradCheck g = check_entries("x", x.values(), dx.values(), loss);
  g.merge(check_entries("w", w.values(), dw.values(), loss));
  return g;
}

inline GradCheck check_dense(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto x = random_tensor({3, 5}, rng);
  auto w = random_tensor({5, 4}, rng);
  auto b = random_tensor({4}, rng);
  const auto r = random_tensor({3, 4}, rng);
  nn::Tensor<double> dw(w.shape()), db(b.shape());
  const auto dx = nn::dense_backward(x, w, r, dw, db);
  auto loss = [&] { return weighted_sum(nn::dense(x, w, b), r); };
  GradCheck g = check_entries("x", x.values(), dx.values(), loss);
  g.merge(check_entries("W", w.values(), dw.values(), loss));
  g.merge(check_entries("b", b.values(), db.values(), loss));
  return g;
}

inline GradCheck check_relu(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto x = spaced_tensor({2, 3, 4, 4}, rng);
  const auto r = random_tensor(x.shape(), rng);
  nn::ReluLayer<double> layer;
  layer.forward(x, nn::Mode::kTrain);
  const auto dx = layer.backward(r);
  auto loss = [&] { return weighted_sum(nn::relu(x), r); };
  return check_entries("x", x.values(), dx.values(), loss);
}

inline GradCheck check_batch_norm(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto x = random_tensor({3, 2, 3, 4}, rng, 2.0);
  auto gamma = random_tensor({2}, rng);
  auto beta = random_tensor({2}, rng);
  nn::Tensor<double> rm({2}), rv({2}, 1.0);
  const auto r = random_tensor(x.shape(), rng);
  auto forward = [&](nn::BatchNormCache<double>* cache) {
    return nn::batch_norm_train<double>(x, gamma.values(), beta.values(), rm.values(), rv.values(), 1e-5, 0.9, false,
                                        cache);
  };
  nn::BatchNormCache<double> cache;
  forward(&cache);
  nn::Tensor<double> dgamma({2}), dbeta({2});
  const auto dx = nn::batch_norm_backward<double>(r, cache, gamma.values(), dgamma.values(), dbeta.values());
  auto loss = [&] { return weighted_sum(forward(nullptr), r); };
  GradCheck g = check_entries("x", x.values(), dx.values(), loss);
  g.merge(check_entries("gamma", gamma.values(), dgamma.values(), loss));
  g.merge(check_entries("beta", beta.values(), dbeta.values(), loss));
  return g;
}

inline GradCheck check_max_pool(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto x = spaced_tensor({2, 2, 4, 6}, rng);
  const auto r = random_tensor({2, 2, 2, 3}, rng);
  std::vector<std::uint8_t> argmax;
  nn::max_pool_2x2(x, &argmax);
  const auto dx = nn::max_pool_2x2_backward<double>(r, x.shape(), argmax);
  auto loss = [&] { return weighted_sum(nn::max_pool_2x2(x), r); };
  return check_entries("x", x.values(), dx.values(), loss);
}

inline GradCheck check_global_avg_pool(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto x = random_tensor({2, 3, 4, 5}, rng);
  const auto r = random_tensor({2, 3}, rng);
  const auto dx = nn::global_avg_pool_backward<double>(r, x.shape());
  auto loss = [&] { return weighted_sum(nn::global_avg_pool(x), r); };
  return check_entries("x", x.values(), dx.values(), loss);
}

inline GradCheck check_softmax_cross_entropy(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto z = random_tensor({4, 5}, rng, 2.0);
  const std::vector<int> labels{0, 3, 4, 3};
  const auto dz = nn::softmax_cross_entropy_backward<double>(nn::softmax(z), labels);
  auto loss = [&] { return nn::cross_entropy<double>(nn::softmax(z), labels); };
  return check_entries("logits", z.values(), dz.values(), loss);
}

// conv -> relu -> global average pool -> dense -> softmax cross-entropy.
inline GradCheck check_micro_net(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  nn::Conv2dLayer<double> conv("conv", 2, 3, 3, {});
  nn::ReluLayer<double> relu;
  nn::GlobalAvgPoolLayer<double> gap;
  nn::DenseLayer<double> fc("fc", 3, 4);
  fc.init(rng);
  for (auto& v : fc.bias().value.values()) v = std::normal_distribution<double>(0.0, 0.3)(rng);
  // Central differences across a ReLU kink are meaningless, so redraw until every
  // pre-activation sits farther from zero than one probe step can move it.
  nn::Tensor<double> x;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw std::runtime_error("micro-net: no kink-free draw");
    conv.init(rng);
    x = random_tensor({2, 2, 6, 6}, rng);
    double max_x = 0.0, max_w = 0.0, min_z = std::numeric_limits<double>::infinity();
    for (double v : x.values()) max_x = std::max(max_x, std::abs(v));
    for (double v : conv.weight().value.values()) max_w = std::max(max_w, std::abs(v));
    const auto z = conv.forward(x, nn::Mode::kInfer);
    for (double v : z.values()) min_z = std::min(min_z, std::abs(v));
    if (min_z > 2.0 * kGradStep * std::max(max_x, max_w)) break;
  }
  const std::vector<int> labels{1, 3};
  auto logits = [&](nn::Mode mode) {
    return fc.forward(gap.forward(relu.forward(conv.forward(x, mode), mode), mode), mode);
  };
  const auto probs = nn::softmax(logits(nn::Mode::kTrain));
  conv.weight().zero_grad();
  fc.weight().zero_grad();
  fc.bias().zero_grad();
  const auto dx = conv.backward(relu.backward(gap.backward(fc.backward(nn::softmax_cross_entropy_backward(probs, labels)))));
  auto loss = [&] { return nn::cross_entropy<double>(nn::softmax(logits(nn::Mode::kInfer)), labels); };
  GradCheck g = check_entries("x", x.values(), dx.values(), loss);
  g.merge(check_entries("conv.weight", conv.weight().value.values(), conv.weight().grad.values(), loss));
  g.merge(check_entries("fc.weight", fc.weight().value.values(), fc.weight().grad.values(), loss));
  g.merge(check_entries("fc.bias", fc.bias().value.values(), fc.bias().grad.values(), loss));
  return g;
}

inline std::vector<NamedCheck> layer_gradient_suite() {
  return {
      {"conv2d stride 1 groups 1", check_conv({2, 3, 6, 5}, 4, {1, 1}, 1)},
      {"conv2d stride 2 groups 1", check_conv({2, 2, 7, 6}, 3, {2, 1}, 2)},
      {"conv2d stride 1 groups 2", check_conv({2, 4, 5, 5}, 6, {1, 2}, 3)},
      {"conv2d stride 2 groups 2", check_conv({1, 4, 6, 7}, 4, {2, 2}, 4)},
      {"dense", check_dense(5)},
      {"relu", check_relu(6)},
      {"batch_norm train", check_batch_norm(7)},
      {"max_pool_2x2", check_max_pool(8)},
      {"global_avg_pool", check_global_avg_pool(9)},
      {"softmax + cross_entropy", check_softmax_cross_entropy(10)},
      {"conv + dense micro-net", check_micro_net(11)},
  };
}

}  // namespace birdclef::testing
