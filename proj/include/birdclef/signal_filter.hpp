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
#include <cstdint>
#include <vector>

#include "birdclef/error.hpp"
#include "birdclef/spectrogram.hpp"

// Rule-based bird/no-bird scoring: median clipping, despeckling, and the
// fraction of time columns that keep any signal.
namespace birdclef {

struct Mask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int r, int c) : rows(r), cols(c), bits(static_cast<std::size_t>(r) * c, 0) {}

  std::uint8_t& at(int r, int c) { return bits[static_cast<std::size_t>(r) * cols + c]; }
  std::uint8_t at(int r, int c) const { return bits[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  bool operator==(const Mask&) const = default;
};

struct SignalFilterParams {
  double row_factor = 3.0;
  double col_factor = 3.0;
  double threshold = 0.16;
};

struct SignalDecision {
  double score = 0.0;
  bool accepted = false;
  double threshold = 0.0;
};

namespace detail {

// Lower median for even counts, i.e. element (n-1)/2 of the sorted values.
inline float median_of(std::vector<float>& v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace detail

inline Mask median_clip(const Spectrogram& spec, double row_factor = 3.0, double col_factor = 3.0) {
  Mask mask(spec.rows, spec.cols);
  if (spec.rows == 0 || spec.cols == 0) return mask;
  std::vector<float> row_median(static_cast<std::size_t>(spec.rows));
  std::vector<float> col_median(static_cast<std::size_t>(spec.cols));
  std::vector<float> scratch;
  for (int r = 0; r < spec.rows; ++r) {
    scratch.assign(spec.values.begin() + static_cast<std::ptrdiff_t>(r) * spec.cols,
                   spec.values.begin() + static_cast<std::ptrdiff_t>(r + 1) * spec.cols);
    row_median[r] = detail::median_of(scratch);
  }
  for (int c = 0; c < spec.cols; ++c) {
    scratch.resize(static_cast<std::size_t>(spec.rows));
    for (int r = 0; r < spec.rows; ++r) scratch[r] = spec.at(r, c);
    col_median[c] = detail::median_of(scratch);
  }
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      const double v = spec.at(r, c);
      if (v > row_factor * row_median[r] && v > col_factor * col_median[c]) mask.at(r, c) = 1;
    }
  }
  return mask;
}

// 2x2 erosion (anchored top-left, out-of-grid counts as unset) followed by a
// 3x3 dilation (centered).
inline Mask morphological_filter(const Mask& mask) {
  Mask eroded(mask.rows, mask.cols);
  for (int r = 0; r + 1 < mask.rows; ++r) {
    for (int c = 0; c + 1 < mask.cols; ++c) {
      eroded.at(r, c) = mask.at(r, c) & mask.at(r + 1, c) & mask.at(r, c + 1) & mask.at(r + 1, c + 1);
    }
  }
  Mask dilated(mask.rows, mask.cols);
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      if (!eroded.at(r, c)) continue;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr >= 0 && rr < mask.rows && cc >= 0 && cc < mask.cols) dilated.at(rr, cc) = 1;
        }
      }
    }
  }
  return dilated;
}

// Fraction of time columns containing at least one surviving mask pixel.
inline double signal_score(const Spectrogram& spec, double row_factor = 3.0, double col_factor = 3.0) {
  if (spec.cols == 0) return 0.0;
  const Mask m = morphological_filter(median_clip(spec, row_factor, col_factor));
  int covered = 0;
  for (int c = 0; c < m.cols; ++c) {
    for (int r = 0; r < m.rows; ++r) {
      if (m.at(r, c)) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / m.cols;
}

inline SignalDecision decide(double score, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("signal filter: threshold must lie in [0, 1]");
  }
  return {score, score >= threshold, threshold};
}

inline SignalDecision classify_chunk(const Spectrogram& spec, const SignalFilterParams& p = {}) {
  return decide(signal_score(spec, p.row_factor, p.col_factor), p.threshold);
}

}  // namespace birdclef
