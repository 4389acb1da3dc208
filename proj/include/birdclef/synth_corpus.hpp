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
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "birdclef/audio_io.hpp"
#include "birdclef/dataset.hpp"
#include "birdclef/error.hpp"
#include "birdclef/random.hpp"
#include "birdclef/spectrogram.hpp"

// Deterministic synthetic "bird" corpus: each class is a repeating linear
// chirp with a few harmonics, recorded over pink-like noise.
namespace birdclef::synth {

struct SynthClassSpec {
  int class_id = 0;
  double f_start = 1000.0;  // Hz
  double f_end = 2000.0;    // Hz
  int harmonics = 1;
  double chirp_seconds = 0.25;
  double period_seconds = 0.5;

  // Fundamental frequency at normalized chirp time u in [0, 1].
  double frequency_at(double u) const { return f_start + (f_end - f_start) * u; }
};

struct SynthConfig {
  int n_classes = 10;
  int files_per_class = 50;
  double duration_s = 2.0;
  double snr_db = 10.0;  // -inf renders noise only
  std::uint64_t seed = 7;
  double holdout_fraction = 0.2;
  int noise_files = 50;
  double background_rate = 0.2;
  int sample_rate = kPipelineSampleRate;
};

inline constexpr double kSweepLowHz = 500.0;
inline constexpr double kSweepHighHz = 12000.0;
inline constexpr double kHarmonicCeilingHz = 14000.0;

inline std::string class_name(int id, int n_classes) {
  const int width = std::max(2, static_cast<int>(std::to_string(std::max(0, n_classes - 1)).size()));
  std::ostringstream os;
  os << "species_" << std::setw(width) << std::setfill('0') << id;
  return os.str();
}

// Largest mel distance between two classes' fundamental trajectories over
// the chirp, sampled at `samples` points; trajectories that differ this much
// somewhere are told apart.
inline double max_mel_separation(const SynthClassSpec& a, const SynthClassSpec& b, int samples = 64) {
  double best = 0.0;
  for (int i = 0; i <= samples; ++i) {
    const double u = static_cast<double>(i) / samples;
    best = std::max(best, std::abs(hz_to_mel(a.frequency_at(u)) - hz_to_mel(b.frequency_at(u))));
  }
  return best;
}

// Sweep centers are spread evenly on the mel axis across [500, 12000] Hz;
// span, direction, harmonic count and timing are drawn from the seed.
inline std::vector<SynthClassSpec> make_class_specs(int n_classes, std::uint64_t seed,
                                                    double min_separation_mel = 60.0) {
  if (n_classes < 2) throw ConfigError("synth: need at least two classes");
  const double mel_lo = hz_to_mel(kSweepLowHz);
  const double mel_hi = hz_to_mel(kSweepHighHz);
  std::mt19937_64 rng(mix_seed(seed, 0xC1A55));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<SynthClassSpec> specs;
  for (int k = 0; k < n_classes; ++k) {
    const double center = mel_lo + (mel_hi - mel_lo) * (k + 0.5) / n_classes;
    SynthClassSpec s;
    s.class_id = k;
    for (int attempt = 0;; ++attempt) {
      const double span = 80.0 + 220.0 * unit(rng);
      const bool upward = unit(rng) < 0.5;
      const double m0 = std::clamp(center - (upward ? span / 2 : -span / 2), mel_lo, mel_hi);
      const double m1 = std::clamp(center + (upward ? span / 2 : -span / 2), mel_lo, mel_hi);
      s.f_start = mel_to_hz(m0);
      s.f_end = mel_to_hz(m1);
      s.harmonics = 1 + static_cast<int>(unit(rng) * 3.0);
      s.chirp_seconds = 0.2 + 0.15 * unit(rng);
      s.period_seconds = s.chirp_seconds + 0.1 + 0.15 * unit(rng);
      const bool distinct = std::all_of(specs.begin(), specs.end(), [&](const SynthClassSpec& o) {
        return max_mel_separation(s, o) >= min_separation_mel;
      });
      if (distinct || attempt > 1000) break;
    }
    specs.push_back(s);
  }
  return specs;
}

// Repeating chirp train. `start_phase` shifts the pattern in seconds;
// `freq_scale` jitters the whole sweep.
inline std::vector<float> render_chirps(const SynthClassSpec& spec, std::size_t n_samples,
                                        int sample_rate, double start_phase = 0.0,
                                        double freq_scale = 1.0, double amplitude = 1.0) {
  std::vector<float> out(n_samples, 0.0f);
  const double dt = 1.0 / sample_rate;
  const double total = static_cast<double>(n_samples) * dt;
  const double f0 = spec.f_start * freq_scale;
  const double f1 = spec.f_end * freq_scale;
  const double d = spec.chirp_seconds;
  for (double t0 = -start_phase; t0 < total; t0 += spec.period_seconds) {
    const auto first = static_cast<std::ptrdiff_t>(std::ceil(std::max(0.0, t0) * sample_rate));
    const auto last = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n_samples),
                                               static_cast<std::ptrdiff_t>(std::ceil((t0 + d) * sample_rate)));
    for (std::ptrdiff_t i = first; i < last; ++i) {
      const double tau = static_cast<double>(i) * dt - t0;
      if (tau < 0.0 || tau > d) continue;
      const double env = std::pow(std::sin(std::numbers::pi * tau / d), 2);
      // Integral of the linear sweep.
      const double phase = 2.0 * std::numbers::pi * (f0 * tau + 0.5 * (f1 - f0) / d * tau * tau);
      double v = 0.0;
      for (int h = 1; h <= spec.harmonics; ++h) {
        if (h * std::max(f0, f1) > kHarmonicCeilingHz) break;
        v += std::sin(h * phase) / h;
      }
      out[static_cast<std::size_t>(i)] += static_cast<float>(amplitude * env * v);
    }
  }
  return out;
}

// Gaussian white noise through Paul Kellet's economy pink filter, scaled to
// unit mean power.
inline std::vector<float> render_pink_noise(std::size_t n_samples, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(n_samples);
  double b0 = 0, b1 = 0, b2 = 0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double w = gauss(rng);
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    v[i] = b0 + b1 + b2 + w * 0.1848;
  }
  double power = 0.0;
  for (double x : v) power += x * x;
  power = n_samples ? power / static_cast<double>(n_samples) : 1.0;
  const double scale = power > 0.0 ? 1.0 / std::sqrt(power) : 0.0;
  std::vector<float> out(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) out[i] = static_cast<float>(v[i] * scale);
  return out;
}

inline double mean_power(const std::vector<float>& v) {
  double p = 0.0;
  for (float x : v) p += static_cast<double>(x) * x;
  return v.empty() ? 0.0 : p / static_cast<double>(v.size());
}

// signal + noise scaled so 10*log10(P_signal / P_noise) = snr_db, then
// normalized to a peak of 0.9. snr_db = -inf yields the noise alone.
inline std::vector<float> mix_at_snr(const std::vector<float>& signal, const std::vector<float>& noise,
                                     double snr_db) {
  std::vector<float> out(noise.size());
  const double ps = mean_power(signal);
  const bool noise_only = std::isinf(snr_db) && snr_db < 0.0;
  const double noise_gain = (noise_only || ps <= 0.0) ? 1.0 : std::sqrt(ps / std::pow(10.0, snr_db / 10.0));
  double peak = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = noise_only || i >= signal.size() ? 0.0 : signal[i];
    const double x = s + noise_gain * noise[i];
    out[i] = static_cast<float>(x);
    peak = std::max(peak, std::abs(x));
  }
  if (peak > 0.0) {
    const double g = 0.9 / peak;
    for (float& x : out) x = static_cast<float>(x * g);
  }
  return out;
}

// One synthesized recording of class `spec`, optionally with a quieter
// second class in the background.
inline std::vector<float> render_recording(const SynthClassSpec& spec,
                                           const SynthClassSpec* background, double duration_s,
                                           double snr_db, int sample_rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  auto signal = render_chirps(spec, n, sample_rate, unit(rng) * spec.period_seconds,
                              0.97 + 0.06 * unit(rng), 0.8 + 0.4 * unit(rng));
  if (background != nullptr) {
    const auto bg = render_chirps(*background, n, sample_rate, unit(rng) * background->period_seconds,
                                  0.97 + 0.06 * unit(rng), 0.5);
    for (std::size_t i = 0; i < n; ++i) signal[i] += bg[i];
  }
  const auto noise = render_pink_noise(n, rng);
  return mix_at_snr(signal, noise, snr_db);
}

struct SynthSummary {
  std::vector<SynthClassSpec> specs;
  std::vector<std::string> class_names;
  std::vector<RecordingLabel> labels;  // every labeled recording, train and test
  std::vector<std::string> test_ids;
};

// Writes
//   out/train/<class>/<class>_<i>.wav   training recordings
//   out/train/noise/noise_<i>.wav       noise-only recordings
//   out/test/<class>_<i>.wav            held-out recordings
//   out/ground_truth.csv                labels of every class recording
//   out/labels.csv                      class_id,class_name
// The last round(holdout_fraction * files_per_class) files of each class are
// held out.
inline SynthSummary generate_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (cfg.n_classes < 2) throw ConfigError("synth: need at least two classes");
  if (cfg.files_per_class < 1 || cfg.duration_s <= 0.0 || cfg.noise_files < 0 || cfg.sample_rate <= 0) {
    throw ConfigError("synth: counts and duration must be positive");
  }
  if (!(cfg.holdout_fraction >= 0.0 && cfg.holdout_fraction < 1.0)) {
    throw ConfigError("synth: holdout fraction must lie in [0, 1)");
  }
  std::error_code ec;
  fs::create_directories(out_dir / "train" / "noise", ec);
  fs::create_directories(out_dir / "test", ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());

  SynthSummary summary;
  summary.specs = make_class_specs(cfg.n_classes, cfg.seed);
  const int n_test = static_cast<int>(std::lround(cfg.holdout_fraction * cfg.files_per_class));

  for (int k = 0; k < cfg.n_classes; ++k) {
    const std::string name = class_name(k, cfg.n_classes);
    summary.class_names.push_back(name);
    fs::create_directories(out_dir / "train" / name, ec);
    if (ec) throw DataError("cannot create class directory " + name + ": " + ec.message());
    for (int i = 0; i < cfg.files_per_class; ++i) {
      const std::uint64_t file_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(k) + 1, static_cast<std::uint64_t>(i));
      std::mt19937_64 pick(mix_seed(file_seed, 0xB6));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      RecordingLabel label;
      std::ostringstream id;
      id << name << '_' << std::setw(4) << std::setfill('0') << i;
      label.recording_id = id.str();
      label.foreground = k;
      const SynthClassSpec* bg = nullptr;
      if (unit(pick) < cfg.background_rate) {
        const int other = (k + 1 + static_cast<int>(unit(pick) * (cfg.n_classes - 1))) % cfg.n_classes;
        bg = &summary.specs[static_cast<std::size_t>(other)];
        label.background.push_back(other);
      }
      const auto samples = render_recording(summary.specs[static_cast<std::size_t>(k)], bg, cfg.duration_s,
                                            cfg.snr_db, cfg.sample_rate, file_seed);
      const bool held_out = i >= cfg.files_per_class - n_test;
      const fs::path path = held_out ? out_dir / "test" / (label.recording_id + ".wav")
                                     : out_dir / "train" / name / (label.recording_id + ".wav");
      write_wav_pcm16(path, samples, cfg.sample_rate);
      if (held_out) summary.test_ids.push_back(label.recording_id);
      summary.labels.push_back(std::move(label));
    }
  }
  for (int i = 0; i < cfg.noise_files; ++i) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0, 0x4E015E + static_cast<std::uint64_t>(i)));
    const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.sample_rate));
    const auto noise = mix_at_snr({}, render_pink_noise(n, rng), -std::numeric_limits<double>::infinity());
    std::ostringstream name;
    name << "noise_" << std::setw(4) << std::setfill('0') << i << ".wav";
    write_wav_pcm16(out_dir / "train" / "noise" / name.str(), noise, cfg.sample_rate);
  }
  write_ground_truth_csv(out_dir / "ground_truth.csv", summary.labels);
  write_label_map_csv(out_dir / "labels.csv", summary.class_names);
  return summary;
}

}  // namespace birdclef::synth
