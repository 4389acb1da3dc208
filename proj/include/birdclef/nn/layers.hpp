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
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "birdclef/error.hpp"
#include "birdclef/nn/ops.hpp"
#include "birdclef/nn/tensor.hpp"

namespace birdclef::nn {

enum class Mode { kTrain, kInfer };

// A stored tensor with its gradient and Adam moments. Batch-norm running
// statistics are parameters with trainable = false; they never receive
// gradients.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> adam_m;
  Tensor<T> adam_v;
  bool trainable = true;
  bool has_grad = false;

  Parameter(std::string n, Tensor<T> v, bool train = true)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.shape()),
        adam_m(value.shape()),
        adam_v(value.shape()),
        trainable(train) {}

  void zero_grad() {
    grad.fill(T{});
    has_grad = false;
  }
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  // Takes ownership of the input so it can be kept for the backward pass.
  virtual Tensor<T> forward(Tensor<T> x, Mode mode) = 0;
  // Consumes the cached forward state; throws if there is none.
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual std::vector<Parameter<T>*> parameters() { return {}; }
  virtual bool weighted() const { return false; }

  // The first layer of a network has no use for its input gradient.
  bool propagate_input_grad = true;

 protected:
  [[noreturn]] void no_forward() const {
    throw Error(kind() + ": backward called without a preceding train-mode forward");
  }
};

template <typename T>
void he_normal(Tensor<T>& t, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
class Conv2dLayer final : public Layer<T> {
 public:
  Conv2dLayer(std::string name, std::size_t in_channels, std::size_t filters, std::size_t kernel,
              ConvSpec spec)
      : spec_(spec), weight_(name + ".weight", Tensor<T>({filters, in_channels / spec.groups, kernel, kernel})) {
    if (spec.groups < 1 || in_channels % spec.groups != 0 || filters % spec.groups != 0) {
      throw ShapeError(name + ": groups must divide input channels and filters");
    }
  }

  std::string kind() const override { return "conv2d"; }
  bool weighted() const override { return true; }
  const ConvSpec& spec() const { return spec_; }
  Parameter<T>& weight() { return weight_; }

  void init(std::mt19937_64& rng) {
    const auto& s = weight_.value.shape();
    he_normal(weight_.value, s[1] * s[2] * s[3], rng);
  }

  Shape output_shape(const Shape& in) const override {
    const std::size_t k = weight_.value.dim(2);
    return {in.at(0), weight_.value.dim(0), conv_out_dim(in.at(2), k, spec_.stride),
            conv_out_dim(in.at(3), k, spec_.stride)};
  }

  Tensor<T> forward(Tensor<T> x, Mode mode) override {
    Tensor<T> y = conv2d(x, weight_.value, spec_);
    if (mode == Mode::kTrain) {
      input_ = std::move(x);
      cached_ = true;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (!cached_) this->no_forward();
    Tensor<T> dx;
    conv2d_backward(input_, weight_.value, dy, spec_, this->propagate_input_grad ? &dx : nullptr, weight_.grad);
    weight_.has_grad = true;
    cached_ = false;
    input_ = {};
    return dx;
  }

  std::vector<Parameter<T>*> parameters() override { return {&weight_}; }

 private:
  ConvSpec spec_;
  Parameter<T> weight_;
  Tensor<T> input_;
  bool cached_ = false;
};

template <typename T>
class BatchNormLayer final : public Layer<T> {
 public:
  BatchNormLayer(const std::string& name, std::size_t channels, double epsilon = 1e-5, double momentum = 0.9)
      : epsilon_(epsilon),
        momentum_(momentum),
        gamma_(name + ".gamma", Tensor<T>({channels}, T{1})),
        beta_(name + ".beta", Tensor<T>({channels})),
        running_mean_(name + ".running_mean", Tensor<T>({channels}), false),
        running_var_(name + ".running_var", Tensor<T>({channels}, T{1}), false) {}

  std::string kind() const override { return "batch_norm"; }
  Shape output_shape(const Shape& in) const override { return in; }

  // Frozen layers normalize with batch statistics but leave running stats alone.
  void set_frozen(bool frozen) { frozen_ = frozen; }

  Tensor<T> forward(Tensor<T> x, Mode mode) override {
    if (mode == Mode::kInfer) {
      return batch_norm_infer<T>(x, gamma_.value.values(), beta_.value.values(), running_mean_.value.values(),
                                 running_var_.value.values(), epsilon_);
    }
    cached_ = true;
    return batch_norm_train<T>(x, gamma_.value.values(), beta_.value.values(), running_mean_.value.values(),
                               running_var_.value.values(), epsilon_, momentum_, !frozen_, &cache_);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (!cached_) this->no_forward();
    Tensor<T> dx = batch_norm_backward<T>(dy, cache_, gamma_.value.values(), gamma_.grad.values(), beta_.grad.values());
    gamma_.has_grad = beta_.has_grad = true;
    cached_ = false;
    cache_ = {};
    return dx;
  }

  std::vector<Parameter<T>*> parameters() override { return {&gamma_, &beta_, &running_mean_, &running_var_}; }

 private:
  double epsilon_;
  double momentum_;
  bool frozen_ = false;
  Parameter<T> gamma_, beta_, running_mean_, running_var_;
  BatchNormCache<T> cache_;
  bool cached_ = false;
};

template <typename T>
class ReluLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(Tensor<T> x, Mode mode) override {
    if (mode == Mode::kTrain) {
      positive_.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) positive_[i] = x[i] > T{};
      cached_ = true;
    }
    for (auto& v : x.values()) v = v < T{} ? T{} : v;
    return x;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (!cached_) this->no_forward();
    cached_ = false;
    return relu_backward<T>(dy, positive_);
  }

 private:
  std::vector<std::uint8_t> positive_;
  bool cached_ = false;
};

template <typename T>
class MaxPoolLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "max_pool_2x2"; }
  Shape output_shape(const Shape& in) const override {
    if (in.at(2) % 2 != 0 || in.at(3) % 2 != 0) throw ShapeError("max_pool_2x2: odd spatial size " + shape_str(in));
    return {in[0], in[1], in[2] / 2, in[3] / 2};
  }

  Tensor<T> forward(Tensor<T> x, Mode mode) override {
    if (mode == Mode::kInfer) return max_pool_2x2(x);
    input_shape_ = x.shape();
    cached_ = true;
    return max_pool_2x2(x, &argmax_);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (!cached_) this->no_forward();
    cached_ = false;
    return max_pool_2x2_backward<T>(dy, input_shape_, argmax_);
  }

 private:
  Shape input_shape_;
  std::vector<std::uint8_t> argmax_;
  bool cached_ = false;
};

template <typename T>
class GlobalAvgPoolLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  Shape output_shape(const Shape& in) const override { return {in.at(0), in.at(1)}; }

  Tensor<T> forward(Tensor<T> x, Mode mode) override {
    if (mode == Mode::kTrain) {
      input_shape_ = x.shape();
      cached_ = true;
    }
    return global_avg_pool(x);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (!cached_) this->no_forward();
    cached_ = false;
    return global_avg_pool_backward<T>(dy, input_shape_);
  }

 private:
  Shape input_shape_;
  bool cached_ = false;
};

template <typename T>
class DenseLayer final : public Layer<T> {
 public:
  DenseLayer(const std::string& name, std::size_t in_features, std::size_t out_features)
      : weight_(name + ".weight", Tensor<T>({in_features, out_features})),
        bias_(name + ".bias", Tensor<T>({out_features})) {}

  std::string kind() const override { return "dense"; }
  bool weighted() const override { return true; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

  void init(std::mt19937_64& rng) {
    he_normal(weight_.value, weight_.value.dim(0), rng);
    bias_.value.fill(T{});
  }

  Shape output_shape(const Shape& in) const override { return {in.at(0), weight_.value.dim(1)}; }

  Tensor<T> forward(Tensor<T> x, Mode mode) override {
    Tensor<T> y = dense(x, weight_.value, bias_.value);
    if (mode == Mode::kTrain) {
      input_ = std::move(x);
      cached_ = true;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (!cached_) this->no_forward();
    Tensor<T> dx = dense_backward(input_, weight_.value, dy, weight_.grad, bias_.grad);
    weight_.has_grad = bias_.has_grad = true;
    cached_ = false;
    input_ = {};
    return dx;
  }

  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }

 private:
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
  bool cached_ = false;
};

}  // namespace birdclef::nn
