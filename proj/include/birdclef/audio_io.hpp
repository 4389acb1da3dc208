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
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "birdclef/error.hpp"

namespace birdclef {

inline constexpr int kPipelineSampleRate = 44100;

// Mono recording. Samples are nominally in [-1, 1].
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = kPipelineSampleRate;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Fixed-length window cut from a recording; always exactly the nominal
// chunk length, zero-padded at the tail when needed.
struct AudioChunk {
  std::vector<float> samples;
  int sample_rate = kPipelineSampleRate;
  double source_offset = 0.0;  // seconds from recording start
};

namespace detail {

inline std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

// Decodes a RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float data with
// one or two channels. Stereo is mixed down by averaging.
inline AudioBuffer decode_wav(const std::filesystem::path& path) {
  using Kind = AudioError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError(Kind::kUnreadable, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw AudioError(Kind::kUnreadable, "not a RIFF/WAVE file: " + path.string());
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t size = detail::le32(hdr + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (avail < 16) throw AudioError(Kind::kUnreadable, "short fmt chunk in " + path.string());
      const unsigned char* f = bytes.data() + body;
      format = detail::le16(f);
      channels = detail::le16(f + 2);
      rate = detail::le32(f + 4);
      bits = detail::le16(f + 14);
      if (format == 0xFFFE && avail >= 26) format = detail::le16(f + 24);  // extensible
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
      have_data = true;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt || !have_data) {
    throw AudioError(Kind::kUnreadable, "missing fmt or data chunk in " + path.string());
  }
  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!(pcm16 || float32) || channels < 1 || channels > 2 || rate == 0) {
    throw AudioError(Kind::kUnsupportedFormat,
                     "unsupported WAV encoding (format " + std::to_string(format) + ", " +
                         std::to_string(bits) + " bits, " + std::to_string(channels) +
                         " channels) in " + path.string());
  }
  const std::size_t frame_bytes = static_cast<std::size_t>(bits / 8) * channels;
  const std::size_t frames = data_size / frame_bytes;
  if (frames == 0) throw AudioError(Kind::kEmptyData, "empty data chunk in " + path.string());

  AudioBuffer buf;
  buf.sample_rate = static_cast<int>(rate);
  buf.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const unsigned char* frame = data + i * frame_bytes;
    float acc = 0.0f;
    for (std::uint16_t ch = 0; ch < channels; ++ch) {
      if (pcm16) {
        const auto s = static_cast<std::int16_t>(detail::le16(frame + 2 * ch));
        acc += static_cast<float>(s) / 32768.0f;
      } else {
        float f;
        std::memcpy(&f, frame + 4 * ch, 4);
        if (!std::isfinite(f)) {
          throw AudioError(Kind::kUnsupportedFormat, "non-finite sample in " + path.string());
        }
        acc += f;
      }
    }
    buf.samples[i] = acc / static_cast<float>(channels);
  }
  return buf;
}

// Writes mono 16-bit PCM. Values are clipped to [-1, 1].
inline void write_wav_pcm16(const std::filesystem::path& path, std::span<const float> samples,
                            int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  u32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  u32(16);
  u16(1);
  u16(1);
  u32(static_cast<std::uint32_t>(sample_rate));
  u32(static_cast<std::uint32_t>(sample_rate) * 2);
  u16(2);
  u16(16);
  out.write("data", 4);
  u32(data_bytes);
  std::vector<std::int16_t> pcm(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const float x = std::clamp(samples[i], -1.0f, 1.0f);
    pcm[i] = static_cast<std::int16_t>(std::lround(x * 32767.0f));
  }
  out.write(reinterpret_cast<const char*>(pcm.data()),
            static_cast<std::streamsize>(pcm.size() * 2));
  if (!out) throw DataError("write failed for " + path.string());
}

// Band-limited resampling with a Hann-windowed sinc kernel. Equal rates
// return the input unchanged.
inline AudioBuffer resample(const AudioBuffer& buf, int target_rate, int half_taps = 16) {
  if (target_rate <= 0) throw ConfigError("resample: target rate must be positive");
  if (buf.sample_rate == target_rate) return buf;

  const double ratio = static_cast<double>(target_rate) / buf.sample_rate;
  const auto n_in = static_cast<std::ptrdiff_t>(buf.samples.size());
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * ratio));
  const double cutoff = std::min(1.0, ratio);  // normalized to the input Nyquist
  const double support = half_taps / cutoff;    // kernel half width in input samples

  AudioBuffer out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  for (std::size_t n = 0; n < n_out; ++n) {
    const double t = static_cast<double>(n) / ratio;
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(t - support)));
    const auto hi = std::min<std::ptrdiff_t>(n_in - 1, static_cast<std::ptrdiff_t>(std::floor(t + support)));
    double acc = 0.0;
    for (std::ptrdiff_t k = lo; k <= hi; ++k) {
      const double d = t - static_cast<double>(k);
      const double x = cutoff * d;
      const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double w = 0.5 + 0.5 * std::cos(std::numbers::pi * d / support);
      acc += buf.samples[static_cast<std::size_t>(k)] * cutoff * sinc * w;
    }
    out.samples[n] = static_cast<float>(acc);
  }
  return out;
}

// Splits a recording into fixed windows. A tail of at least half a window is
// zero-padded into a final chunk; a recording shorter than one window yields a
// single padded chunk.
inline std::vector<AudioChunk> chunk(const AudioBuffer& buf, double chunk_seconds = 1.0,
                                     double hop_seconds = 1.0) {
  if (chunk_seconds <= 0.0 || hop_seconds <= 0.0) {
    throw ConfigError("chunk: window and hop must be positive");
  }
  std::vector<AudioChunk> out;
  const std::size_t n = buf.samples.size();
  if (n == 0) return out;
  const auto len = static_cast<std::size_t>(std::llround(chunk_seconds * buf.sample_rate));
  const auto hop = static_cast<std::size_t>(std::llround(hop_seconds * buf.sample_rate));
  if (len == 0 || hop == 0) throw ConfigError("chunk: window and hop must span at least one sample");

  auto emit = [&](std::size_t start) {
    AudioChunk c;
    c.sample_rate = buf.sample_rate;
    c.source_offset = static_cast<double>(start) / buf.sample_rate;
    c.samples.assign(len, 0.0f);
    const std::size_t avail = std::min(len, n - start);
    std::copy_n(buf.samples.begin() + static_cast<std::ptrdiff_t>(start), avail, c.samples.begin());
    out.push_back(std::move(c));
  };

  if (n < len) {
    emit(0);
    return out;
  }
  std::size_t start = 0;
  for (; start + len <= n; start += hop) emit(start);
  // Only audio past the end of the last full window counts as remainder.
  const std::size_t uncovered = std::max(start, start - hop + len);
  if (uncovered < n && 2 * (n - uncovered) >= len) emit(start);
  return out;
}

}  // namespace birdclef
