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

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "birdclef/audio_io.hpp"
#include "birdclef/binary_io.hpp"
#include "birdclef/error.hpp"

namespace birdclef {

// Row-major grid of normalized magnitudes, row 0 is the lowest mel band.
struct Spectrogram {
  int rows = 0;
  int cols = 0;
  std::vector<float> values;

  Spectrogram() = default;
  Spectrogram(int r, int c, float fill = 0.0f)
      : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill) {}

  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }

  bool operator==(const Spectrogram&) const = default;
};

struct SpectrogramParams {
  int sample_rate = kPipelineSampleRate;
  int n_fft = 1024;
  int hop = 172;
  int n_mels = 128;
  int n_frames = 256;
  double f_min = 300.0;
  double f_max = 15000.0;
  double log_epsilon = 1e-6;
};

// HTK mel scale.
inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelFilterbank {
  int n_mels = 0;
  int n_bins = 0;  // n_fft / 2 + 1
  double bin_hz = 0.0;
  std::vector<double> weights;  // n_mels x n_bins, row-major
  std::vector<double> centers;  // Hz, one per filter
  std::vector<double> lower;    // Hz, left foot of each triangle
  std::vector<double> upper;    // Hz, right foot of each triangle

  double weight(int mel, int bin) const {
    return weights[static_cast<std::size_t>(mel) * n_bins + bin];
  }
};

// Triangular filters with centers equally spaced in mel between f_min and
// f_max. Bins outside [f_min, f_max] get zero weight in every filter, which
// realizes the band-pass. Triangles narrower than one FFT bin are widened to
// +-1 bin around their center so that no filter is empty.
inline MelFilterbank build_filterbank(int n_mels, double f_min, double f_max, int n_fft,
                                      int sample_rate) {
  if (n_mels < 1 || n_fft < 2 || sample_rate <= 0) {
    throw ConfigError("filterbank: n_mels, n_fft and sample_rate must be positive");
  }
  if (!(f_min >= 0.0 && f_min < f_max)) throw ConfigError("filterbank: need 0 <= f_min < f_max");
  if (f_max > sample_rate / 2.0) {
    throw ConfigError("filterbank: f_max " + std::to_string(f_max) + " Hz exceeds Nyquist");
  }
  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_bins = n_fft / 2 + 1;
  fb.bin_hz = static_cast<double>(sample_rate) / n_fft;

  int bins_in_band = 0;
  for (int k = 0; k < fb.n_bins; ++k) {
    const double f = k * fb.bin_hz;
    if (f >= f_min && f <= f_max) ++bins_in_band;
  }
  if (n_mels > bins_in_band) {
    throw ConfigError("filterbank: " + std::to_string(n_mels) + " mel bands but only " +
                      std::to_string(bins_in_band) + " FFT bins in band");
  }

  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  std::vector<double> points(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    points[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (n_mels + 1));
  }

  fb.weights.assign(static_cast<std::size_t>(n_mels) * fb.n_bins, 0.0);
  for (int m = 0; m < n_mels; ++m) {
    const double center = points[m + 1];
    const double lo = std::min(points[m], center - fb.bin_hz);
    const double hi = std::max(points[m + 2], center + fb.bin_hz);
    fb.centers.push_back(center);
    fb.lower.push_back(lo);
    fb.upper.push_back(hi);
    bool any = false;
    for (int k = 0; k < fb.n_bins; ++k) {
      const double f = k * fb.bin_hz;
      if (f < f_min || f > f_max || f <= lo || f >= hi) continue;
      const double w = f <= center ? (f - lo) / (center - lo) : (hi - f) / (hi - center);
      if (w > 0.0) {
        fb.weights[static_cast<std::size_t>(m) * fb.n_bins + k] = w;
        any = true;
      }
    }
    if (!any) throw ConfigError("filterbank: mel band " + std::to_string(m) + " is empty");
  }
  return fb;
}

// Both views of one chunk: the normalized log-mel image fed to the network and
// the max-normalized linear mel magnitude used by the signal filter.
struct SpectrogramPair {
  Spectrogram log_mel;
  Spectrogram magnitude;
};

// Owns the filterbank, window and FFT plan. Not thread-safe; use one per
// worker. Construction and destruction serialize on the FFTW planner.
class SpectrogramExtractor {
 public:
  explicit SpectrogramExtractor(SpectrogramParams params = {})
      : params_(params),
        filterbank_(build_filterbank(params.n_mels, params.f_min, params.f_max, params.n_fft,
                                     params.sample_rate)),
        window_(static_cast<std::size_t>(params.n_fft)) {
    if (params_.hop < 1 || params_.n_frames < 1) throw ConfigError("spectrogram: hop and frames must be positive");
    for (int i = 0; i < params_.n_fft; ++i) {
      window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / params_.n_fft);
    }
    std::lock_guard lock(planner_mutex());
    in_ = fftw_alloc_real(static_cast<std::size_t>(params_.n_fft));
    out_ = fftw_alloc_complex(static_cast<std::size_t>(filterbank_.n_bins));
    plan_ = fftw_plan_dft_r2c_1d(params_.n_fft, in_, out_, FFTW_ESTIMATE);
  }
  ~SpectrogramExtractor() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  SpectrogramExtractor(const SpectrogramExtractor&) = delete;
  SpectrogramExtractor& operator=(const SpectrogramExtractor&) = delete;

  const SpectrogramParams& params() const { return params_; }
  const MelFilterbank& filterbank() const { return filterbank_; }

  // Mel power, n_mels x n_frames row-major. Frames are centered with reflect
  // padding; surplus frames are cropped and missing ones stay at zero power.
  std::vector<double> mel_power(std::span<const float> samples) const {
    const int n_fft = params_.n_fft;
    const int half = n_fft / 2;
    const auto n = static_cast<std::ptrdiff_t>(samples.size());
    auto sample_at = [&](std::ptrdiff_t i) -> double {
      if (n == 0) return 0.0;
      if (n == 1) return samples[0];
      const std::ptrdiff_t period = 2 * (n - 1);
      i %= period;
      if (i < 0) i += period;
      if (i >= n) i = period - i;
      return samples[static_cast<std::size_t>(i)];
    };
    const std::ptrdiff_t available = n > 0 ? 1 + n / params_.hop : 0;
    const int frames = static_cast<int>(std::min<std::ptrdiff_t>(available, params_.n_frames));

    const int rows = params_.n_mels;
    const int cols = params_.n_frames;
    std::vector<double> mel(static_cast<std::size_t>(rows) * cols, 0.0);
    std::vector<double> power(static_cast<std::size_t>(filterbank_.n_bins));
    for (int t = 0; t < frames; ++t) {
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t) * params_.hop - half;
      for (int i = 0; i < n_fft; ++i) in_[i] = sample_at(start + i) * window_[i];
      fftw_execute(plan_);
      for (int k = 0; k < filterbank_.n_bins; ++k) {
        power[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
      }
      for (int m = 0; m < rows; ++m) {
        const double* w = filterbank_.weights.data() + static_cast<std::size_t>(m) * filterbank_.n_bins;
        double acc = 0.0;
        for (int k = 0; k < filterbank_.n_bins; ++k) acc += w[k] * power[k];
        mel[static_cast<std::size_t>(m) * cols + t] = acc;
      }
    }
    return mel;
  }

  // ln(eps + power), then min-max scaled to [0, 1]; a constant grid maps to zeros.
  Spectrogram log_normalized(std::span<const double> mel) const {
    std::vector<double> v(mel.size());
    for (std::size_t i = 0; i < mel.size(); ++i) v[i] = std::log(params_.log_epsilon + mel[i]);
    return min_max(v);
  }

  // sqrt(power) divided by its maximum; silence maps to zeros.
  Spectrogram magnitude_normalized(std::span<const double> mel) const {
    std::vector<double> v(mel.size());
    double peak = 0.0;
    for (std::size_t i = 0; i < mel.size(); ++i) {
      v[i] = std::sqrt(std::max(0.0, mel[i]));
      peak = std::max(peak, v[i]);
    }
    Spectrogram s(params_.n_mels, params_.n_frames);
    if (peak <= 0.0) return s;
    for (std::size_t i = 0; i < v.size(); ++i) s.values[i] = static_cast<float>(v[i] / peak);
    return s;
  }

  Spectrogram extract(const AudioChunk& chunk) const {
    check_rate(chunk);
    return log_normalized(mel_power(chunk.samples));
  }

  SpectrogramPair extract_pair(const AudioChunk& chunk) const {
    check_rate(chunk);
    const auto mel = mel_power(chunk.samples);
    return {log_normalized(mel), magnitude_normalized(mel)};
  }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  void check_rate(const AudioChunk& chunk) const {
    if (chunk.sample_rate != params_.sample_rate) {
      throw DataError("spectrogram: chunk rate " + std::to_string(chunk.sample_rate) +
                      " Hz, expected " + std::to_string(params_.sample_rate) + " Hz");
    }
  }

  Spectrogram min_max(const std::vector<double>& v) const {
    Spectrogram s(params_.n_mels, params_.n_frames);
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    const double lo = *lo_it;
    const double range = *hi_it - lo;
    if (!(range > 1e-12)) return s;
    for (std::size_t i = 0; i < v.size(); ++i) s.values[i] = static_cast<float>((v[i] - lo) / range);
    return s;
  }

  SpectrogramParams params_;
  MelFilterbank filterbank_;
  std::vector<double> window_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

// .bspc: "BSPC", u32 version (1), u32 rows, u32 cols, rows*cols float32, all
// little-endian.
inline constexpr std::uint32_t kBspcVersion = 1;

inline void save_bspc(const std::filesystem::path& path, const Spectrogram& spec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string());
  binio::write_bytes(out, "BSPC");
  binio::write_u32(out, kBspcVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(spec.rows));
  binio::write_u32(out, static_cast<std::uint32_t>(spec.cols));
  binio::write_f32(out, spec.values);
  if (!out) throw FormatError(FormatError::Kind::kIo, "write failed for " + path.string());
}

inline Spectrogram load_bspc(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open " + path.string());
  char magic[4];
  binio::read_exact(in, magic, 4, "magic");
  if (std::string_view(magic, 4) != "BSPC") {
    throw FormatError(FormatError::Kind::kBadMagic, "not a .bspc file: " + path.string());
  }
  const auto version = binio::read_u32(in, "version");
  if (version != kBspcVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      "unsupported .bspc version " + std::to_string(version));
  }
  const auto rows = binio::read_u32(in, "rows");
  const auto cols = binio::read_u32(in, "cols");
  if (rows == 0 || cols == 0 || rows > 65536 || cols > 65536) {
    throw FormatError(FormatError::Kind::kShapeMismatch, "bad .bspc shape in " + path.string());
  }
  Spectrogram s(static_cast<int>(rows), static_cast<int>(cols));
  binio::read_f32(in, s.values, "values");
  return s;
}

// 8-bit binary PGM, highest mel band on the top line.
inline void write_pgm(const std::filesystem::path& path, const Spectrogram& spec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string());
  out << "P5\n" << spec.cols << ' ' << spec.rows << "\n255\n";
  for (int r = spec.rows - 1; r >= 0; --r) {
    for (int c = 0; c < spec.cols; ++c) {
      const float v = std::clamp(spec.at(r, c), 0.0f, 1.0f);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
  }
}

}  // namespace birdclef
