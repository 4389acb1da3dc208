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
#include <filesystem>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "birdclef/audio_io.hpp"
#include "birdclef/error.hpp"
#include "birdclef/model.hpp"
#include "birdclef/signal_filter.hpp"
#include "birdclef/spectrogram.hpp"
#include "birdclef/text.hpp"

namespace birdclef {

using ScoreMatrix = std::vector<std::vector<double>>;  // rows: chunks or recordings

enum class Pooling { kMeanExp, kMean };

inline std::string to_string(Pooling p) { return p == Pooling::kMeanExp ? "mean_exp" : "mean"; }

inline Pooling parse_pooling(const std::string& s) {
  if (s == "mean_exp") return Pooling::kMeanExp;
  if (s == "mean") return Pooling::kMean;
  throw ConfigError("pooling must be 'mean_exp' or 'mean', got '" + s + "'");
}

namespace detail {

inline std::size_t check_rows(const ScoreMatrix& m, const char* op) {
  if (m.empty()) throw Error(std::string(op) + ": need at least one row");
  const std::size_t width = m.front().size();
  for (const auto& r : m) {
    if (r.size() != width) throw ShapeError(std::string(op) + ": rows differ in length");
  }
  return width;
}

}  // namespace detail

// Mean exponential pooling, P_c = 1/n * sum_i (2 * p_ic)^2. Scores lie in
// [0, 4] and are not renormalized.
inline std::vector<double> pool_mean_exp(const ScoreMatrix& chunk_probs) {
  const std::size_t width = detail::check_rows(chunk_probs, "pool_mean_exp");
  std::vector<double> out(width, 0.0);
  for (const auto& row : chunk_probs) {
    for (std::size_t c = 0; c < width; ++c) out[c] += (2.0 * row[c]) * (2.0 * row[c]);
  }
  for (auto& v : out) v /= static_cast<double>(chunk_probs.size());
  return out;
}

// Running mean, so a column of identical values returns that value exactly.
inline std::vector<double> pool_mean(const ScoreMatrix& chunk_probs) {
  const std::size_t width = detail::check_rows(chunk_probs, "pool_mean");
  std::vector<double> out = chunk_probs.front();
  for (std::size_t i = 1; i < chunk_probs.size(); ++i) {
    const double k = static_cast<double>(i + 1);
    for (std::size_t c = 0; c < width; ++c) out[c] += (chunk_probs[i][c] - out[c]) / k;
  }
  return out;
}

inline std::vector<double> pool(const ScoreMatrix& chunk_probs, Pooling mode) {
  return mode == Pooling::kMeanExp ? pool_mean_exp(chunk_probs) : pool_mean(chunk_probs);
}

// Arithmetic mean of k pooled score vectors for the same recording.
inline std::vector<double> ensemble(const ScoreMatrix& pooled) {
  if (!pooled.empty() && std::any_of(pooled.begin(), pooled.end(),
                                     [&](const auto& r) { return r.size() != pooled.front().size(); })) {
    throw ShapeError("ensemble: models disagree on the class count");
  }
  return pool_mean(pooled);
}

// Label ranking average precision of one score vector. rank(y) counts every
// class scoring >= score[y], so ties count against the label.
inline double label_ranking_average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (labels.empty()) throw Error("mlrap: empty label set");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= scores.size()) {
      throw Error("mlrap: label " + std::to_string(y) + " out of range");
    }
  }
  double total = 0.0;
  for (int y : labels) {
    const double sy = scores[static_cast<std::size_t>(y)];
    const auto rank = std::count_if(scores.begin(), scores.end(), [&](double s) { return s >= sy; });
    const auto hits = std::count_if(labels.begin(), labels.end(),
                                    [&](int other) { return scores[static_cast<std::size_t>(other)] >= sy; });
    total += static_cast<double>(hits) / static_cast<double>(rank);
  }
  return total / static_cast<double>(labels.size());
}

// Mean LRAP over recordings; equals mean reciprocal rank for single labels.
inline double mlrap(const ScoreMatrix& scores, const std::vector<std::vector<int>>& labels) {
  if (scores.size() != labels.size()) throw Error("mlrap: score and label counts differ");
  if (scores.empty()) throw Error("mlrap: no recordings");
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) sum += label_ranking_average_precision(scores[i], labels[i]);
  return sum / static_cast<double>(scores.size());
}

// Index of the first maximum.
inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct InferenceOptions {
  bool snr_filter = false;
  SignalFilterParams signal;
  Pooling pooling = Pooling::kMeanExp;
  double chunk_seconds = 1.0;
  double hop_seconds = 1.0;
};

struct PreparedRecording {
  std::string recording_id;
  std::vector<Spectrogram> spectrograms;
  bool fallback_used = false;  // the SNR filter rejected every chunk
};

// decode -> resample to the extractor's rate -> chunk -> spectrograms,
// optionally dropping chunks the signal filter rejects (all of them are kept
// when none pass).
inline PreparedRecording prepare_recording(const std::filesystem::path& path, const SpectrogramExtractor& extractor,
                                           const InferenceOptions& opts) {
  const AudioBuffer audio = resample(decode_wav(path), extractor.params().sample_rate);
  PreparedRecording rec;
  rec.recording_id = path.stem().string();
  std::vector<Spectrogram> all;
  for (const auto& c : chunk(audio, opts.chunk_seconds, opts.hop_seconds)) {
    auto pair = extractor.extract_pair(c);
    if (!opts.snr_filter || classify_chunk(pair.magnitude, opts.signal).accepted) {
      rec.spectrograms.push_back(pair.log_mel);
    }
    all.push_back(std::move(pair.log_mel));
  }
  if (rec.spectrograms.empty()) {
    rec.fallback_used = opts.snr_filter;
    rec.spectrograms = std::move(all);
  }
  return rec;
}

// Inference-mode softmax rows, one per spectrogram.
inline ScoreMatrix predict_chunks(Model<float>& model, std::span<const Spectrogram> specs, std::size_t batch = 16) {
  ScoreMatrix out;
  for (std::size_t start = 0; start < specs.size(); start += batch) {
    const std::size_t n = std::min(batch, specs.size() - start);
    nn::Tensor<float> x(model.input_shape(n));
    const std::size_t plane = x.dim(2) * x.dim(3);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = specs[start + i];
      if (s.values.size() != plane) throw ShapeError("predict: spectrogram shape does not match the model input");
      std::copy(s.values.begin(), s.values.end(), x.data() + i * plane);
    }
    const auto probs = model.predict_proba(std::move(x));
    const std::size_t m = probs.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      out.emplace_back(probs.data() + i * m, probs.data() + (i + 1) * m);
    }
  }
  return out;
}

struct PredictionSet {
  std::string recording_id;
  ScoreMatrix chunk_probs;
  std::vector<double> pooled;
};

inline PredictionSet predict_prepared(Model<float>& model, const PreparedRecording& rec, Pooling mode) {
  PredictionSet p;
  p.recording_id = rec.recording_id;
  p.chunk_probs = predict_chunks(model, rec.spectrograms);
  p.pooled = pool(p.chunk_probs, mode);
  return p;
}

inline PredictionSet predict_recording(Model<float>& model, const std::filesystem::path& path,
                                       const SpectrogramExtractor& extractor, const InferenceOptions& opts = {}) {
  return predict_prepared(model, prepare_recording(path, extractor, opts), opts.pooling);
}

// CSV rows "recording_id,class_name,score", best first, at most top_k per
// recording (0 = all). With normalize, scores are divided by the
// recording's maximum.
inline void write_predictions_csv(std::ostream& out, const std::vector<std::pair<std::string, std::vector<double>>>& rows,
                                  const std::vector<std::string>& class_names, std::size_t top_k, bool normalize) {
  out << "recording_id,class_name,score\n";
  for (const auto& [id, scores] : rows) {
    if (scores.size() != class_names.size()) throw ShapeError("predictions: class count mismatch");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const double peak = scores.empty() ? 0.0 : scores[order.front()];
    const std::size_t n = top_k == 0 ? order.size() : std::min(top_k, order.size());
    for (std::size_t i = 0; i < n; ++i) {
      double v = scores[order[i]];
      if (normalize && peak > 0.0) v /= peak;
      out << id << ',' << class_names[order[i]] << ',' << text::format_double(v) << '\n';
    }
  }
}

}  // namespace birdclef
