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

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "birdclef/dataset.hpp"
#include "birdclef/error.hpp"
#include "birdclef/inference.hpp"
#include "birdclef/model.hpp"
#include "birdclef/signal_filter.hpp"
#include "birdclef/spectrogram.hpp"
#include "birdclef/synth_corpus.hpp"
#include "birdclef/text.hpp"
#include "birdclef/training.hpp"

namespace birdclef {

// Every tunable of the pipeline under a dotted "section.name" key.
// model.n_classes is replaced by the corpus class count when training.
struct PipelineConfig {
  SpectrogramParams spectrogram;
  double chunk_seconds = 1.0;
  double chunk_hop_seconds = 1.0;
  SignalFilterParams signal;
  ModelConfig model;
  TrainConfig train;
  Pooling pooling = Pooling::kMeanExp;
  bool snr_filter_at_inference = false;
  int inference_batch = 16;
  synth::SynthConfig synth;

  PipelineConfig() { model.n_classes = synth.n_classes; }

  void set(const std::string& key, const std::string& value) {
    auto& table = fields();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(*this, key, value);
  }

  std::string get(const std::string& key) const {
    auto& table = fields();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second.get(*this);
  }

  static std::vector<std::string> keys() {
    std::vector<std::string> out;
    for (const auto& [k, f] : fields()) out.push_back(k);
    return out;
  }

  void apply(const std::map<std::string, std::string>& kv) {
    for (const auto& [k, v] : kv) set(k, v);
  }

  // "key=value" override as given on the command line.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    set(text::trim(assignment.substr(0, eq)), text::trim(assignment.substr(eq + 1)));
  }

  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream body;
    body << in.rdbuf();
    apply(text::parse_kv(body.str(), path.string()));
  }

  void validate() const {
    if (spectrogram.hop < 1 || spectrogram.n_frames < 1) throw ConfigError("spectrogram: hop and n_frames must be positive");
    if (!(spectrogram.log_epsilon > 0.0)) throw ConfigError("spectrogram.log_epsilon must be positive");
    build_filterbank(spectrogram.n_mels, spectrogram.f_min, spectrogram.f_max, spectrogram.n_fft,
                     spectrogram.sample_rate);
    if (!(chunk_seconds > 0.0) || !(chunk_hop_seconds > 0.0)) throw ConfigError("audio chunk and hop must be positive");
    if (!(signal.row_factor >= 0.0) || !(signal.col_factor >= 0.0)) throw ConfigError("signal factors must be >= 0");
    if (!(signal.threshold >= 0.0 && signal.threshold <= 1.0)) throw ConfigError("signal.threshold must lie in [0, 1]");
    const auto& a = train.augment_cfg;
    if (a.max_shift_rows < 0) throw ConfigError("augment.max_shift_rows must be >= 0");
    if (!(a.p_noise >= 0.0 && a.p_noise <= 1.0)) throw ConfigError("augment.p_noise must lie in [0, 1]");
    if (!(a.alpha_min >= 0.0 && a.alpha_min <= a.alpha_max)) {
      throw ConfigError("augment: need 0 <= alpha_min <= alpha_max");
    }
    model.validate();
    if (model.input_rows != spectrogram.n_mels || model.input_cols != spectrogram.n_frames) {
      throw ConfigError("model input shape must equal spectrogram n_mels x n_frames");
    }
    train.validate();
    if (inference_batch < 1) throw ConfigError("inference.batch_size must be >= 1");
    if (synth.n_classes < 2) throw ConfigError("synth.n_classes must be >= 2");
    if (synth.files_per_class < 1 || synth.noise_files < 0 || !(synth.duration_s > 0.0)) {
      throw ConfigError("synth: counts and duration must be positive");
    }
    if (!(synth.holdout_fraction >= 0.0 && synth.holdout_fraction < 1.0)) {
      throw ConfigError("synth.holdout_fraction must lie in [0, 1)");
    }
    if (!(synth.background_rate >= 0.0 && synth.background_rate <= 1.0)) {
      throw ConfigError("synth.background_rate must lie in [0, 1]");
    }
  }

  // One "key = value" line per key, sorted; loading it back reproduces this
  // configuration exactly.
  void print(std::ostream& out) const {
    for (const auto& [k, f] : fields()) out << k << " = " << f.get(*this) << '\n';
  }

  InferenceOptions inference_options() const {
    InferenceOptions o;
    o.snr_filter = snr_filter_at_inference;
    o.signal = signal;
    o.pooling = pooling;
    o.chunk_seconds = chunk_seconds;
    o.hop_seconds = chunk_hop_seconds;
    return o;
  }

 private:
  struct Field {
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
  };
  using Table = std::map<std::string, Field>;

  template <typename M>
  static Field int_field(M m) {
    return {[m](const PipelineConfig& c) { return std::to_string(m(const_cast<PipelineConfig&>(c))); },
            [m](PipelineConfig& c, const std::string& k, const std::string& v) {
              m(c) = static_cast<std::remove_reference_t<decltype(m(c))>>(text::parse_int(k, v));
            }};
  }
  template <typename M>
  static Field u64_field(M m) {
    return {[m](const PipelineConfig& c) { return std::to_string(m(const_cast<PipelineConfig&>(c))); },
            [m](PipelineConfig& c, const std::string& k, const std::string& v) { m(c) = text::parse_u64(k, v); }};
  }
  template <typename M>
  static Field double_field(M m) {
    return {[m](const PipelineConfig& c) { return text::format_double(m(const_cast<PipelineConfig&>(c))); },
            [m](PipelineConfig& c, const std::string& k, const std::string& v) { m(c) = text::parse_double(k, v); }};
  }
  template <typename M>
  static Field bool_field(M m) {
    return {[m](const PipelineConfig& c) { return std::string(m(const_cast<PipelineConfig&>(c)) ? "true" : "false"); },
            [m](PipelineConfig& c, const std::string& k, const std::string& v) { m(c) = text::parse_bool(k, v); }};
  }

  static const Table& fields() {
    static const Table table = [] {
      Table t;
#define BIRDCLEF_REF(expr) [](PipelineConfig& c) -> auto& { return c.expr; }
      t["spectrogram.sample_rate"] = int_field(BIRDCLEF_REF(spectrogram.sample_rate));
      t["spectrogram.n_fft"] = int_field(BIRDCLEF_REF(spectrogram.n_fft));
      t["spectrogram.hop"] = int_field(BIRDCLEF_REF(spectrogram.hop));
      t["spectrogram.n_mels"] = int_field(BIRDCLEF_REF(spectrogram.n_mels));
      t["spectrogram.n_frames"] = int_field(BIRDCLEF_REF(spectrogram.n_frames));
      t["spectrogram.f_min"] = double_field(BIRDCLEF_REF(spectrogram.f_min));
      t["spectrogram.f_max"] = double_field(BIRDCLEF_REF(spectrogram.f_max));
      t["spectrogram.log_epsilon"] = double_field(BIRDCLEF_REF(spectrogram.log_epsilon));
      t["audio.chunk_seconds"] = double_field(BIRDCLEF_REF(chunk_seconds));
      t["audio.hop_seconds"] = double_field(BIRDCLEF_REF(chunk_hop_seconds));

      t["signal.row_factor"] = double_field(BIRDCLEF_REF(signal.row_factor));
      t["signal.col_factor"] = double_field(BIRDCLEF_REF(signal.col_factor));
      t["signal.threshold"] = double_field(BIRDCLEF_REF(signal.threshold));

      t["augment.vertical_shift"] = bool_field(BIRDCLEF_REF(train.augment_cfg.vertical_shift));
      t["augment.max_shift_rows"] = int_field(BIRDCLEF_REF(train.augment_cfg.max_shift_rows));
      t["augment.noise"] = bool_field(BIRDCLEF_REF(train.augment_cfg.noise));
      t["augment.p_noise"] = double_field(BIRDCLEF_REF(train.augment_cfg.p_noise));
      t["augment.alpha_min"] = double_field(BIRDCLEF_REF(train.augment_cfg.alpha_min));
      t["augment.alpha_max"] = double_field(BIRDCLEF_REF(train.augment_cfg.alpha_max));

      for (const auto& [k, v] : ModelConfig{}.to_kv()) {
        const std::string name = k;
        t["model." + name] = {[name](const PipelineConfig& c) { return c.model.to_kv().at(name); },
                              [name](PipelineConfig& c, const std::string&, const std::string& v) {
                                c.model.set(name, v);
                              }};
      }

      t["train.max_epochs"] = int_field(BIRDCLEF_REF(train.max_epochs));
      t["train.batch_size"] = int_field(BIRDCLEF_REF(train.batch_size));
      t["train.seed"] = u64_field(BIRDCLEF_REF(train.seed));
      t["train.early_stop_patience"] = int_field(BIRDCLEF_REF(train.early_stop_patience));
      t["train.snapshot_every"] = int_field(BIRDCLEF_REF(train.snapshot_every));
      t["train.val_fraction"] = double_field(BIRDCLEF_REF(train.val_fraction));
      t["train.augment"] = bool_field(BIRDCLEF_REF(train.augment));
      t["train.base_lr"] = double_field(BIRDCLEF_REF(train.schedule.base_lr));
      t["train.cycle_epochs"] = int_field(BIRDCLEF_REF(train.schedule.cycle_epochs));
      t["train.adam_beta1"] = double_field(BIRDCLEF_REF(train.adam.beta1));
      t["train.adam_beta2"] = double_field(BIRDCLEF_REF(train.adam.beta2));
      t["train.adam_epsilon"] = double_field(BIRDCLEF_REF(train.adam.epsilon));
      t["train.restore_best"] = bool_field(BIRDCLEF_REF(train.restore_best));

      t["inference.pooling"] = {[](const PipelineConfig& c) { return to_string(c.pooling); },
                                [](PipelineConfig& c, const std::string&, const std::string& v) {
                                  c.pooling = parse_pooling(v);
                                }};
      t["inference.snr_filter"] = bool_field(BIRDCLEF_REF(snr_filter_at_inference));
      t["inference.batch_size"] = int_field(BIRDCLEF_REF(inference_batch));

      t["synth.n_classes"] = int_field(BIRDCLEF_REF(synth.n_classes));
      t["synth.files_per_class"] = int_field(BIRDCLEF_REF(synth.files_per_class));
      t["synth.duration_s"] = double_field(BIRDCLEF_REF(synth.duration_s));
      t["synth.snr_db"] = double_field(BIRDCLEF_REF(synth.snr_db));
      t["synth.seed"] = u64_field(BIRDCLEF_REF(synth.seed));
      t["synth.holdout_fraction"] = double_field(BIRDCLEF_REF(synth.holdout_fraction));
      t["synth.noise_files"] = int_field(BIRDCLEF_REF(synth.noise_files));
      t["synth.background_rate"] = double_field(BIRDCLEF_REF(synth.background_rate));
#undef BIRDCLEF_REF
      return t;
    }();
    return table;
  }
};

}  // namespace birdclef
