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

#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include "birdclef/error.hpp"
#include "birdclef/nn/layers.hpp"

namespace birdclef::nn {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam step `t` (1-based) on every trainable parameter.
// Non-trainable parameters are skipped; a trainable parameter without a
// gradient is an error.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, double lr, long long t, const AdamParams& hp = {}) {
  if (t < 1) throw Error("adam_step: step index must be >= 1");
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  for (Parameter<T>* p : params) {
    if (!p->trainable) continue;
    if (!p->has_grad) throw Error("adam_step: parameter " + p->name + " has no gradient");
    auto value = p->value.values();
    auto grad = p->grad.values();
    auto m = p->adam_m.values();
    auto v = p->adam_v.values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      const double mi = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
      const double vi = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      value[i] = static_cast<T>(value[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + hp.epsilon));
    }
  }
}

struct LrSchedule {
  double base_lr = 0.001;
  int cycle_epochs = 10;
};

// Cosine annealing with warm restarts, evaluated per epoch (0-based):
// lr = base/2 * (cos(pi * (epoch mod cycle) / cycle) + 1).
inline double cosine_lr(int epoch, const LrSchedule& sched = {}) {
  if (sched.cycle_epochs < 1) throw ConfigError("cosine_lr: cycle length must be >= 1");
  if (epoch < 0) throw ConfigError("cosine_lr: epoch must be >= 0");
  const double phase = static_cast<double>(epoch % sched.cycle_epochs) / sched.cycle_epochs;
  return sched.base_lr / 2.0 * (std::cos(std::numbers::pi * phase) + 1.0);
}

}  // namespace birdclef::nn
