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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "birdclef/error.hpp"
#include "birdclef/nn/tensor.hpp"
#include "birdclef/random.hpp"
#include "birdclef/spectrogram.hpp"

namespace birdclef {

inline constexpr const char* kNoiseDirName = "noise";

struct IndexedSample {
  std::filesystem::path path;
  int class_id = 0;
  bool operator==(const IndexedSample&) const = default;
};

// Spectrogram corpus on disk: <root>/<class_name>/*.bspc plus an optional
// <root>/noise/*.bspc pool of rejected chunks.
struct CorpusIndex {
  std::vector<std::string> classes;  // sorted; position is the class id
  std::vector<IndexedSample> samples;
  std::vector<std::filesystem::path> noise_pool;
  std::vector<std::string> warnings;

  std::size_t n_classes() const { return classes.size(); }
  bool operator==(const CorpusIndex& o) const {
    return classes == o.classes && samples == o.samples && noise_pool == o.noise_pool;
  }
};

struct LabeledSample {
  Spectrogram spectrogram;
  int foreground = 0;
  std::vector<int> background;  // evaluation only
};

namespace detail {

inline std::vector<std::filesystem::path> sorted_files(const std::filesystem::path& dir, const std::string& ext) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

inline CorpusIndex scan_corpus(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("corpus root " + root.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename() != kNoiseDirName) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError("corpus root " + root.string() + " holds no class directories");

  CorpusIndex index;
  for (std::size_t k = 0; k < class_dirs.size(); ++k) {
    index.classes.push_back(class_dirs[k].filename().string());
    const auto files = detail::sorted_files(class_dirs[k], ".bspc");
    if (files.empty()) index.warnings.push_back("class '" + index.classes.back() + "' has no samples");
    for (const auto& f : files) index.samples.push_back({f, static_cast<int>(k)});
  }
  if (fs::is_directory(root / kNoiseDirName)) index.noise_pool = detail::sorted_files(root / kNoiseDirName, ".bspc");
  return index;
}

// Stratified split: each class with n >= 2 samples sends
// clamp(round(n * val_fraction), 1, n - 1) of them to validation. Single-sample
// classes stay in training. The noise pool goes with the training side.
inline std::pair<CorpusIndex, CorpusIndex> split(const CorpusIndex& index, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("split: val_fraction must lie in (0, 1)");
  CorpusIndex train, val;
  train.classes = val.classes = index.classes;
  train.noise_pool = index.noise_pool;
  std::vector<std::vector<std::size_t>> by_class(index.classes.size());
  for (std::size_t i = 0; i < index.samples.size(); ++i) {
    by_class[static_cast<std::size_t>(index.samples[i].class_id)].push_back(i);
  }
  std::vector<bool> is_val(index.samples.size(), false);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& ids = by_class[k];
    const std::size_t n = ids.size();
    if (n == 1) {
      train.warnings.push_back("class '" + index.classes[k] + "' has a single sample; kept in training");
    }
    if (n < 2) continue;
    std::mt19937_64 rng(mix_seed(seed, k));
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction)), 1, n - 1);
    for (std::size_t j = 0; j < n_val; ++j) is_val[ids[j]] = true;
  }
  for (std::size_t i = 0; i < index.samples.size(); ++i) {
    (is_val[i] ? val : train).samples.push_back(index.samples[i]);
  }
  return {std::move(train), std::move(val)};
}

inline std::vector<LabeledSample> load_samples(const CorpusIndex& index) {
  std::vector<LabeledSample> out;
  out.reserve(index.samples.size());
  for (const auto& s : index.samples) out.push_back({load_bspc(s.path), s.class_id, {}});
  return out;
}

inline std::vector<Spectrogram> load_noise_pool(const CorpusIndex& index) {
  std::vector<Spectrogram> out;
  out.reserve(index.noise_pool.size());
  for (const auto& p : index.noise_pool) out.push_back(load_bspc(p));
  return out;
}

struct AugmentConfig {
  bool vertical_shift = true;
  int max_shift_rows = 12;  // ~10% of 128 mel rows
  bool noise = true;
  double p_noise = 0.5;
  double alpha_min = 0.2;
  double alpha_max = 0.6;
};

// Input row r lands on row (r + k) mod rows.
inline Spectrogram roll_rows(const Spectrogram& spec, int k) {
  Spectrogram out(spec.rows, spec.cols);
  if (spec.rows == 0) return out;
  const int shift = ((k % spec.rows) + spec.rows) % spec.rows;
  for (int r = 0; r < spec.rows; ++r) {
    std::copy_n(spec.values.begin() + static_cast<std::ptrdiff_t>(r) * spec.cols, spec.cols,
                out.values.begin() + static_cast<std::ptrdiff_t>((r + shift) % spec.rows) * spec.cols);
  }
  return out;
}

// clamp(spec + alpha * noise, 0, 1)
inline Spectrogram blend_noise(const Spectrogram& spec, const Spectrogram& noise, double alpha) {
  if (noise.rows != spec.rows || noise.cols != spec.cols) throw ShapeError("blend_noise: shape mismatch");
  Spectrogram out = spec;
  const auto a = static_cast<float>(alpha);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = std::clamp(spec.values[i] + a * noise.values[i], 0.0f, 1.0f);
  }
  return out;
}

// Random wrap-around vertical roll, then with probability p_noise an
// additive blend of a random noise-pool spectrogram. An empty pool skips
// the blend.
inline Spectrogram augment(const Spectrogram& spec, std::span<const Spectrogram> noise_pool, std::mt19937_64& rng,
                           const AugmentConfig& cfg) {
  int k = 0;
  if (cfg.vertical_shift && cfg.max_shift_rows > 0) {
    k = std::uniform_int_distribution<int>(-cfg.max_shift_rows, cfg.max_shift_rows)(rng);
  }
  Spectrogram out = roll_rows(spec, k);
  if (cfg.noise && !noise_pool.empty()) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < cfg.p_noise) {
      const auto pick = std::uniform_int_distribution<std::size_t>(0, noise_pool.size() - 1)(rng);
      const double alpha = std::uniform_real_distribution<double>(cfg.alpha_min, cfg.alpha_max)(rng);
      out = blend_noise(out, noise_pool[pick], alpha);
    }
  }
  return out;
}

struct Batch {
  nn::Tensor<float> inputs;  // N x 1 x rows x cols
  std::vector<int> labels;
  std::vector<std::size_t> sample_ids;
};

// One epoch of shuffled mini-batches; the final batch may be partial. The
// order comes from `epoch_seed` and each sample's augmentation draws from a
// generator seeded by (epoch_seed, position), so the stream is reproducible
// however it is consumed.
class BatchStream {
 public:
  BatchStream(std::span<const LabeledSample> samples, int batch_size, std::uint64_t epoch_seed, bool augment_on,
              std::span<const Spectrogram> noise_pool = {}, AugmentConfig cfg = {})
      : samples_(samples), batch_size_(batch_size), seed_(epoch_seed), augment_(augment_on), pool_(noise_pool),
        cfg_(cfg), order_(samples.size()) {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(epoch_seed, 0x5F0FF1E));
    std::shuffle(order_.begin(), order_.end(), rng);
  }

  std::size_t batch_count() const {
    return (order_.size() + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_);
  }
  const std::vector<std::size_t>& order() const { return order_; }

  bool next(Batch& batch) {
    if (pos_ >= order_.size()) return false;
    const std::size_t n = std::min(order_.size() - pos_, static_cast<std::size_t>(batch_size_));
    const auto& first = samples_[order_[pos_]].spectrogram;
    const auto rows = static_cast<std::size_t>(first.rows);
    const auto cols = static_cast<std::size_t>(first.cols);
    batch.inputs = nn::Tensor<float>({n, 1, rows, cols});
    batch.labels.resize(n);
    batch.sample_ids.resize(n);
    for (std::size_t i = 0; i < n; ++i, ++pos_) {
      const LabeledSample& s = samples_[order_[pos_]];
      if (static_cast<std::size_t>(s.spectrogram.rows) != rows || static_cast<std::size_t>(s.spectrogram.cols) != cols) {
        throw ShapeError("batch: spectrogram shapes differ within the corpus");
      }
      const float* src = s.spectrogram.values.data();
      Spectrogram augmented;
      if (augment_) {
        std::mt19937_64 rng(mix_seed(seed_, pos_, 0xA11));
        augmented = augment(s.spectrogram, pool_, rng, cfg_);
        src = augmented.values.data();
      }
      std::copy_n(src, rows * cols, batch.inputs.data() + i * rows * cols);
      batch.labels[i] = s.foreground;
      batch.sample_ids[i] = order_[pos_];
    }
    return true;
  }

 private:
  std::span<const LabeledSample> samples_;
  int batch_size_;
  std::uint64_t seed_;
  bool augment_;
  std::span<const Spectrogram> pool_;
  AugmentConfig cfg_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline BatchStream make_batches(std::span<const LabeledSample> samples, int batch_size, std::uint64_t epoch_seed,
                                bool augment_on, std::span<const Spectrogram> noise_pool = {},
                                AugmentConfig cfg = {}) {
  return BatchStream(samples, batch_size, epoch_seed, augment_on, noise_pool, cfg);
}

// CSV "class_id,class_name".
inline void write_label_map_csv(const std::filesystem::path& path, const std::vector<std::string>& classes) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "class_id,class_name\n";
  for (std::size_t k = 0; k < classes.size(); ++k) out << k << ',' << classes[k] << '\n';
}

struct RecordingLabel {
  std::string recording_id;
  int foreground = 0;
  std::vector<int> background;

  // Foreground plus background ids, the set a recording is scored against.
  std::vector<int> label_set() const {
    std::vector<int> out{foreground};
    for (int b : background) {
      if (b != foreground && std::find(out.begin(), out.end(), b) == out.end()) out.push_back(b);
    }
    return out;
  }
  bool operator==(const RecordingLabel&) const = default;
};

// CSV "recording_id,foreground_id,background_ids" with ';'-separated,
// possibly empty background ids.
inline void write_ground_truth_csv(const std::filesystem::path& path, const std::vector<RecordingLabel>& labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "recording_id,foreground_id,background_ids\n";
  for (const auto& l : labels) {
    out << l.recording_id << ',' << l.foreground << ',';
    for (std::size_t i = 0; i < l.background.size(); ++i) out << (i ? ";" : "") << l.background[i];
    out << '\n';
  }
}

inline std::vector<RecordingLabel> read_ground_truth_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ground truth " + path.string());
  std::vector<RecordingLabel> out;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  auto to_int = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(s, &used);
      if (used != s.size()) fail("bad class id '" + s + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("bad class id '" + s + "'");
    }
    return 0;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("recording_id", 0) == 0)) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) fail("expected 3 comma-separated fields");
    RecordingLabel l;
    l.recording_id = line.substr(0, c1);
    l.foreground = to_int(line.substr(c1 + 1, c2 - c1 - 1));
    std::istringstream bg(line.substr(c2 + 1));
    std::string tok;
    while (std::getline(bg, tok, ';')) {
      if (!tok.empty()) l.background.push_back(to_int(tok));
    }
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace birdclef
