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
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "birdclef/binary_io.hpp"
#include "birdclef/error.hpp"
#include "birdclef/nn/layers.hpp"
#include "birdclef/nn/ops.hpp"
#include "birdclef/nn/tensor.hpp"
#include "birdclef/text.hpp"

namespace birdclef {

enum class Downsample { kMaxPool, kStridedConv };

inline std::string to_string(Downsample d) { return d == Downsample::kMaxPool ? "maxpool" : "strided_conv"; }

inline Downsample parse_downsample(const std::string& s) {
  if (s == "maxpool") return Downsample::kMaxPool;
  if (s == "strided_conv") return Downsample::kStridedConv;
  throw ConfigError("downsample must be 'maxpool' or 'strided_conv', got '" + s + "'");
}

struct ModelConfig {
  int n_classes = 1500;
  int base_filters = 64;
  double filter_multiplier = 1.0;
  Downsample downsample = Downsample::kMaxPool;
  // Channel groups of the 3x3 convolutions in conv groups 2-5. The first
  // group sees a single input channel and the 1x1 expansion mixes all
  // channels, so both stay ungrouped.
  int groups = 1;
  bool batch_norm = true;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;
  std::uint64_t init_seed = 42;
  int input_rows = 128;
  int input_cols = 256;

  static constexpr int kConvGroups = 5;

  int filters(int group) const {
    return static_cast<int>(std::lround(base_filters * std::ldexp(1.0, group) * filter_multiplier));
  }
  int expand_filters() const {
    return static_cast<int>(std::lround(base_filters * 32.0 * filter_multiplier));
  }

  void validate() const {
    if (n_classes < 1) throw ConfigError("model.n_classes must be >= 1");
    if (base_filters < 1 || !(filter_multiplier > 0.0)) {
      throw ConfigError("model.base_filters and model.filter_multiplier must be positive");
    }
    if (groups < 1) throw ConfigError("model.groups must be >= 1");
    for (int g = 0; g < kConvGroups; ++g) {
      const int f = filters(g);
      if (f < 1) throw ConfigError("model: conv group " + std::to_string(g + 1) + " has no filters");
      if (g > 0 && (f % groups != 0 || filters(g - 1) % groups != 0)) {
        throw ConfigError("model.groups = " + std::to_string(groups) + " does not divide the " +
                          std::to_string(f) + " filters of conv group " + std::to_string(g + 1));
      }
    }
    if (expand_filters() < 1) throw ConfigError("model: 1x1 expansion has no filters");
    if (input_rows < 32 || input_cols < 32 || input_rows % 32 != 0 || input_cols % 32 != 0) {
      throw ConfigError("model input dimensions must be positive multiples of 32");
    }
    if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0) || !(bn_epsilon > 0.0)) {
      throw ConfigError("model: bn_momentum must lie in [0, 1] and bn_epsilon be positive");
    }
  }

  std::map<std::string, std::string> to_kv() const {
    return {{"n_classes", std::to_string(n_classes)},
            {"base_filters", std::to_string(base_filters)},
            {"filter_multiplier", text::format_double(filter_multiplier)},
            {"downsample", to_string(downsample)},
            {"groups", std::to_string(groups)},
            {"batch_norm", batch_norm ? "true" : "false"},
            {"bn_momentum", text::format_double(bn_momentum)},
            {"bn_epsilon", text::format_double(bn_epsilon)},
            {"init_seed", std::to_string(init_seed)},
            {"input_rows", std::to_string(input_rows)},
            {"input_cols", std::to_string(input_cols)}};
  }

  // Applies one key; returns false for keys this struct does not own.
  bool set(const std::string& key, const std::string& value) {
    if (key == "n_classes") n_classes = static_cast<int>(text::parse_int(key, value));
    else if (key == "base_filters") base_filters = static_cast<int>(text::parse_int(key, value));
    else if (key == "filter_multiplier") filter_multiplier = text::parse_double(key, value);
    else if (key == "downsample") downsample = parse_downsample(value);
    else if (key == "groups") groups = static_cast<int>(text::parse_int(key, value));
    else if (key == "batch_norm") batch_norm = text::parse_bool(key, value);
    else if (key == "bn_momentum") bn_momentum = text::parse_double(key, value);
    else if (key == "bn_epsilon") bn_epsilon = text::parse_double(key, value);
    else if (key == "init_seed") init_seed = text::parse_u64(key, value);
    else if (key == "input_rows") input_rows = static_cast<int>(text::parse_int(key, value));
    else if (key == "input_cols") input_cols = static_cast<int>(text::parse_int(key, value));
    else return false;
    return true;
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
std::size_t count_params(std::span<nn::Parameter<T>* const> params, bool trainable_only = false) {
  std::size_t n = 0;
  for (const auto* p : params) {
    if (!trainable_only || p->trainable) n += p->value.size();
  }
  return n;
}

// The baseline network: five conv groups (3x3 conv, batch norm, ReLU, 2x
// downsample), a 1x1 expansion conv with batch norm and identity activation,
// global average pooling and a dense classifier. Softmax is applied by
// predict_proba and by the loss.
template <typename T>
class Model {
 public:
  struct Block {
    std::string name;
    std::vector<std::unique_ptr<nn::Layer<T>>> layers;
  };

  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
    initialize();
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  const std::vector<Block>& blocks() const { return blocks_; }

  std::vector<std::string> class_names;
  int epoch = 0;

  nn::Shape input_shape(std::size_t batch = 1) const {
    return {batch, 1, static_cast<std::size_t>(cfg_.input_rows), static_cast<std::size_t>(cfg_.input_cols)};
  }

  // Logits, N x n_classes.
  nn::Tensor<T> forward(nn::Tensor<T> x, nn::Mode mode) {
    check_input(x);
    for (auto& b : blocks_) {
      for (auto& l : b.layers) x = l->forward(std::move(x), mode);
    }
    forward_done_ = mode == nn::Mode::kTrain;
    return x;
  }

  nn::Tensor<T> predict_proba(nn::Tensor<T> x) { return nn::softmax(forward(std::move(x), nn::Mode::kInfer)); }

  // Output shape of every block (batch dimension dropped), from an actual
  // inference-mode forward pass.
  std::vector<nn::Shape> forward_trace(nn::Tensor<T> x) {
    check_input(x);
    std::vector<nn::Shape> shapes;
    for (auto& b : blocks_) {
      for (auto& l : b.layers) x = l->forward(std::move(x), nn::Mode::kInfer);
      shapes.emplace_back(x.shape().begin() + 1, x.shape().end());
    }
    return shapes;
  }

  // Same trace from the closed-form shape rules.
  std::vector<nn::Shape> shape_trace(nn::Shape s) const {
    std::vector<nn::Shape> shapes;
    for (const auto& b : blocks_) {
      for (const auto& l : b.layers) s = l->output_shape(s);
      shapes.emplace_back(s.begin() + 1, s.end());
    }
    return shapes;
  }

  void backward(const nn::Tensor<T>& dlogits) {
    if (!forward_done_) throw Error("model: backward called before a train-mode forward");
    nn::Tensor<T> g = dlogits;
    for (auto b = blocks_.rbegin(); b != blocks_.rend(); ++b) {
      for (auto l = b->layers.rbegin(); l != b->layers.rend(); ++l) g = (*l)->backward(g);
    }
    forward_done_ = false;
  }

  std::vector<nn::Parameter<T>*> parameters() {
    std::vector<nn::Parameter<T>*> out;
    for (auto& b : blocks_) {
      for (auto& l : b.layers) {
        for (auto* p : l->parameters()) out.push_back(p);
      }
    }
    return out;
  }

  nn::Parameter<T>* find_parameter(const std::string& name) {
    for (auto* p : parameters()) {
      if (p->name == name) return p;
    }
    return nullptr;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  void set_bn_frozen(bool frozen) {
    for (auto& b : blocks_) {
      for (auto& l : b.layers) {
        if (auto* bn = dynamic_cast<nn::BatchNormLayer<T>*>(l.get())) bn->set_frozen(frozen);
      }
    }
  }

  int weighted_layers() const {
    int n = 0;
    for (const auto& b : blocks_) {
      for (const auto& l : b.layers) n += l->weighted() ? 1 : 0;
    }
    return n;
  }

 private:
  void check_input(const nn::Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != static_cast<std::size_t>(cfg_.input_rows) ||
        x.dim(3) != static_cast<std::size_t>(cfg_.input_cols)) {
      throw ShapeError("model: expected input N x 1 x " + std::to_string(cfg_.input_rows) + " x " +
                       std::to_string(cfg_.input_cols) + ", got " + nn::shape_str(x.shape()));
    }
  }

  void build() {
    const bool strided = cfg_.downsample == Downsample::kStridedConv;
    std::size_t channels = 1;
    for (int g = 0; g < ModelConfig::kConvGroups; ++g) {
      const auto f = static_cast<std::size_t>(cfg_.filters(g));
      const std::string id = std::to_string(g + 1);
      Block b{"conv_group" + id, {}};
      nn::ConvSpec spec{strided ? 2 : 1, g == 0 ? 1 : cfg_.groups};
      b.layers.push_back(std::make_unique<nn::Conv2dLayer<T>>("conv" + id, channels, f, 3, spec));
      if (cfg_.batch_norm) {
        b.layers.push_back(std::make_unique<nn::BatchNormLayer<T>>("bn" + id, f, cfg_.bn_epsilon, cfg_.bn_momentum));
      }
      b.layers.push_back(std::make_unique<nn::ReluLayer<T>>());
      if (!strided) b.layers.push_back(std::make_unique<nn::MaxPoolLayer<T>>());
      blocks_.push_back(std::move(b));
      channels = f;
    }
    const auto expand = static_cast<std::size_t>(cfg_.expand_filters());
    Block e{"expand_1x1", {}};
    e.layers.push_back(std::make_unique<nn::Conv2dLayer<T>>("conv6", channels, expand, 1, nn::ConvSpec{1, 1}));
    if (cfg_.batch_norm) {
      e.layers.push_back(std::make_unique<nn::BatchNormLayer<T>>("bn6", expand, cfg_.bn_epsilon, cfg_.bn_momentum));
    }
    blocks_.push_back(std::move(e));
    Block p{"global_pool", {}};
    p.layers.push_back(std::make_unique<nn::GlobalAvgPoolLayer<T>>());
    blocks_.push_back(std::move(p));
    Block c{"classifier", {}};
    c.layers.push_back(std::make_unique<nn::DenseLayer<T>>("fc", expand, static_cast<std::size_t>(cfg_.n_classes)));
    blocks_.push_back(std::move(c));
    blocks_.front().layers.front()->propagate_input_grad = false;
  }

  void initialize() {
    std::mt19937_64 rng(cfg_.init_seed);
    for (auto& b : blocks_) {
      for (auto& l : b.layers) {
        if (auto* conv = dynamic_cast<nn::Conv2dLayer<T>*>(l.get())) conv->init(rng);
        if (auto* fc = dynamic_cast<nn::DenseLayer<T>*>(l.get())) fc->init(rng);
      }
    }
  }

  ModelConfig cfg_;
  std::vector<Block> blocks_;
  bool forward_done_ = false;
};

template <typename T>
std::size_t count_params(Model<T>& model, bool trainable_only = false) {
  const auto params = model.parameters();
  return count_params<T>(std::span<nn::Parameter<T>* const>(params), trainable_only);
}

template <typename T>
Model<T> build_baseline(const ModelConfig& cfg) {
  return Model<T>(cfg);
}

// Checkpoint file (little-endian):
//   "BCLF", u32 version = 1,
//   u32 length + UTF-8 "key = value" text (model config and epoch),
//   u32 class count, then per class u32 length + name bytes,
//   u32 tensor count, then per tensor u32 length + name, u32 ndim,
//   u32 dims[ndim], float32 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(Model<float>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write checkpoint " + path.string());
  binio::write_bytes(out, "BCLF");
  binio::write_u32(out, kCheckpointVersion);
  std::ostringstream cfg;
  for (const auto& [k, v] : model.config().to_kv()) cfg << k << " = " << v << '\n';
  cfg << "epoch = " << model.epoch << '\n';
  binio::write_string(out, cfg.str());
  binio::write_u32(out, static_cast<std::uint32_t>(model.class_names.size()));
  for (const auto& name : model.class_names) binio::write_string(out, name);
  const auto params = model.parameters();
  binio::write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    binio::write_string(out, p->name);
    binio::write_u32(out, static_cast<std::uint32_t>(p->value.rank()));
    for (auto d : p->value.shape()) binio::write_u32(out, static_cast<std::uint32_t>(d));
    binio::write_f32(out, p->value.values());
  }
  if (!out) throw FormatError(FormatError::Kind::kIo, "write failed for checkpoint " + path.string());
}

namespace detail {

struct CheckpointHeader {
  ModelConfig config;
  int epoch = 0;
  std::vector<std::string> class_names;
};

inline CheckpointHeader read_checkpoint_header(std::istream& in, const std::string& origin) {
  char magic[4];
  binio::read_exact(in, magic, 4, "checkpoint magic");
  if (std::string_view(magic, 4) != "BCLF") {
    throw FormatError(FormatError::Kind::kBadMagic, "not a checkpoint (bad magic): " + origin);
  }
  const auto version = binio::read_u32(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      "checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + "): " + origin);
  }
  CheckpointHeader h;
  const auto kv = text::parse_kv(binio::read_string(in, "checkpoint config"), origin);
  for (const auto& [k, v] : kv) {
    if (k == "epoch") {
      h.epoch = static_cast<int>(text::parse_int(k, v));
    } else if (!h.config.set(k, v)) {
      throw FormatError(FormatError::Kind::kShapeMismatch, "unknown config key '" + k + "' in " + origin);
    }
  }
  const auto n_names = binio::read_u32(in, "class count");
  if (n_names > (1u << 20)) throw FormatError(FormatError::Kind::kTruncated, "implausible class count in " + origin);
  for (std::uint32_t i = 0; i < n_names; ++i) h.class_names.push_back(binio::read_string(in, "class name"));
  return h;
}

inline void read_checkpoint_tensors(std::istream& in, Model<float>& model, const std::string& origin) {
  const auto params = model.parameters();
  const auto count = binio::read_u32(in, "tensor count");
  if (count != params.size()) {
    throw FormatError(FormatError::Kind::kShapeMismatch,
                      "checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(params.size()) + ": " + origin);
  }
  // Staged so a failed load leaves the model untouched.
  std::vector<std::vector<float>> staged;
  staged.reserve(params.size());
  for (auto* p : params) {
    const std::string name = binio::read_string(in, "tensor name");
    if (name != p->name) {
      throw FormatError(FormatError::Kind::kShapeMismatch,
                        "checkpoint tensor '" + name + "' where model expects '" + p->name + "'");
    }
    const auto ndim = binio::read_u32(in, "tensor rank");
    if (ndim > 8) throw FormatError(FormatError::Kind::kTruncated, "implausible rank for tensor " + name);
    nn::Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(binio::read_u32(in, "tensor dims"));
    if (shape != p->value.shape()) {
      throw FormatError(FormatError::Kind::kShapeMismatch, "tensor '" + name + "' has shape " +
                                                               nn::shape_str(shape) + ", model expects " +
                                                               nn::shape_str(p->value.shape()));
    }
    auto& buf = staged.emplace_back(p->value.size());
    binio::read_f32(in, buf, "tensor " + name);
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.storage() = std::move(staged[i]);
}

}  // namespace detail

// Rebuilds the model described by the checkpoint and restores every tensor.
inline Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open checkpoint " + path.string());
  auto header = detail::read_checkpoint_header(in, path.string());
  Model<float> model(header.config);
  model.class_names = std::move(header.class_names);
  model.epoch = header.epoch;
  detail::read_checkpoint_tensors(in, model, path.string());
  return model;
}

// Restores tensors into an existing model; every stored tensor must match
// the model's shapes.
inline void load_checkpoint_into(Model<float>& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open checkpoint " + path.string());
  auto header = detail::read_checkpoint_header(in, path.string());
  detail::read_checkpoint_tensors(in, model, path.string());
  model.class_names = std::move(header.class_names);
  model.epoch = header.epoch;
}

}  // namespace birdclef
