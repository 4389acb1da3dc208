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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "birdclef/dataset.hpp"
#include "birdclef/error.hpp"
#include "birdclef/inference.hpp"
#include "birdclef/model.hpp"
#include "birdclef/nn/ops.hpp"
#include "birdclef/nn/optim.hpp"
#include "birdclef/random.hpp"
#include "birdclef/text.hpp"

namespace birdclef {

struct TrainConfig {
  int max_epochs = 70;
  int batch_size = 16;
  std::uint64_t seed = 1;
  int early_stop_patience = 5;
  int snapshot_every = 10;  // must be a multiple of the cosine cycle
  double val_fraction = 0.05;
  bool augment = true;
  AugmentConfig augment_cfg;
  nn::LrSchedule schedule;
  nn::AdamParams adam;
  std::filesystem::path output_dir;
  bool restore_best = true;  // reload the best checkpoint when training ends
  // Replaces the cosine schedule; receives the 0-based epoch. An epoch whose
  // rate is exactly 0 is frozen: no Adam step and no running-stat updates.
  std::function<double(int)> lr_override;
  std::ostream* log = nullptr;

  void validate() const {
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (early_stop_patience < 1) throw ConfigError("train.early_stop_patience must be >= 1");
    if (schedule.cycle_epochs < 1 || !(schedule.base_lr > 0.0)) {
      throw ConfigError("train: cycle_epochs must be >= 1 and base_lr positive");
    }
    if (snapshot_every < 1 || snapshot_every % schedule.cycle_epochs != 0) {
      throw ConfigError("train.snapshot_every must be a positive multiple of train.cycle_epochs");
    }
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction must lie in (0, 1)");
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_acc = std::numeric_limits<double>::quiet_NaN();
  double val_mlrap = std::numeric_limits<double>::quiet_NaN();
  std::string snapshot_path;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  std::filesystem::path best_checkpoint;
  std::vector<std::filesystem::path> snapshots;
  bool stopped_early = false;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  double mlrap = 0.0;
};

// Inference-mode loss, top-1 accuracy (first maximum wins ties) and MLRAP
// against foreground plus background labels.
inline EvalResult evaluate(Model<float>& model, std::span<const LabeledSample> samples, std::size_t batch = 16) {
  if (samples.empty()) throw DataError("evaluate: empty sample set");
  ScoreMatrix probs;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t n = std::min(batch, samples.size() - start);
    std::vector<Spectrogram> specs;
    specs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) specs.push_back(samples[start + i].spectrogram);
    for (auto& row : predict_chunks(model, specs, batch)) probs.push_back(std::move(row));
  }
  EvalResult r;
  std::vector<std::vector<int>> label_sets;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int y = samples[i].foreground;
    if (y < 0 || static_cast<std::size_t>(y) >= probs[i].size()) throw DataError("evaluate: label out of range");
    r.loss += -std::log(probs[i][static_cast<std::size_t>(y)] + nn::kCrossEntropyEpsilon);
    r.accuracy += argmax(probs[i]) == y ? 1.0 : 0.0;
    RecordingLabel l{"", y, samples[i].background};
    label_sets.push_back(l.label_set());
  }
  r.loss /= static_cast<double>(samples.size());
  r.accuracy /= static_cast<double>(samples.size());
  r.mlrap = mlrap(probs, label_sets);
  return r;
}

inline std::filesystem::path snapshot_path(const std::filesystem::path& dir, int epoch) {
  std::ostringstream name;
  name << "snapshot_epoch_" << std::setw(3) << std::setfill('0') << epoch << ".bclf";
  return dir / name.str();
}

// Epoch loop: shuffled (optionally augmented) mini-batches, Adam at the
// epoch's cosine rate, validation, snapshots at multiples of snapshot_every,
// early stopping after `patience` epochs without a lower validation loss.
// The best-validation-loss model is always on disk as best.bclf; without a
// validation set the latest epoch counts as best and early stopping is off.
inline TrainReport train(Model<float>& model, std::span<const LabeledSample> train_set,
                         std::span<const LabeledSample> val_set, std::span<const Spectrogram> noise_pool,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  if (cfg.output_dir.empty()) throw ConfigError("train: output directory required");
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) throw DataError("cannot create " + cfg.output_dir.string() + ": " + ec.message());

  TrainReport report;
  report.best_checkpoint = cfg.output_dir / "best.bclf";
  auto params = model.parameters();
  long long step = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cfg.lr_override ? cfg.lr_override(epoch - 1) : nn::cosine_lr(epoch - 1, cfg.schedule);
    const bool frozen = rec.lr == 0.0;
    model.set_bn_frozen(frozen);

    auto stream = make_batches(train_set, cfg.batch_size, mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)),
                               cfg.augment, noise_pool, cfg.augment_cfg);
    Batch batch;
    double loss_sum = 0.0;
    std::size_t seen = 0;
    while (stream.next(batch)) {
      model.zero_grad();
      const auto probs = nn::softmax(model.forward(std::move(batch.inputs), nn::Mode::kTrain));
      const double loss = nn::cross_entropy<float>(probs, batch.labels);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      }
      model.backward(nn::softmax_cross_entropy_backward<float>(probs, batch.labels));
      if (!frozen) nn::adam_step<float>(params, rec.lr, ++step, cfg.adam);
      loss_sum += loss * static_cast<double>(batch.labels.size());
      seen += batch.labels.size();
    }
    model.set_bn_frozen(false);
    rec.train_loss = loss_sum / static_cast<double>(seen);
    model.epoch = epoch;

    if (!val_set.empty()) {
      const EvalResult v = evaluate(model, val_set);
      rec.val_loss = v.loss;
      rec.val_acc = v.accuracy;
      rec.val_mlrap = v.mlrap;
    }
    if (epoch % cfg.snapshot_every == 0) {
      const auto path = snapshot_path(cfg.output_dir, epoch);
      save_checkpoint(model, path);
      rec.snapshot_path = path.string();
      report.snapshots.push_back(path);
    }
    const bool improved = val_set.empty() || rec.val_loss < best_val;
    if (improved) {
      best_val = val_set.empty() ? best_val : rec.val_loss;
      report.best_epoch = epoch;
      since_best = 0;
      save_checkpoint(model, report.best_checkpoint);
    } else {
      ++since_best;
    }
    report.epochs.push_back(rec);

    if (cfg.log != nullptr) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *cfg.log << "epoch " << epoch << "/" << cfg.max_epochs << " lr=" << rec.lr << " train_loss=" << rec.train_loss
               << " val_loss=" << rec.val_loss << " val_acc=" << rec.val_acc << " val_mlrap=" << rec.val_mlrap
               << (improved ? " *" : "") << " (" << std::fixed << std::setprecision(1) << secs << "s)"
               << std::defaultfloat << std::setprecision(6) << std::endl;
    }
    if (!val_set.empty() && since_best >= cfg.early_stop_patience) {
      report.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  if (cfg.restore_best) load_checkpoint_into(model, report.best_checkpoint);
  return report;
}

// CSV "epoch,lr,train_loss,val_loss,val_acc,val_mlrap,snapshot_path".
inline void write_report_csv(const std::filesystem::path& path, const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,lr,train_loss,val_loss,val_acc,val_mlrap,snapshot_path\n";
  for (const auto& r : report.epochs) {
    out << r.epoch << ',' << text::format_double(r.lr) << ',' << text::format_double(r.train_loss) << ','
        << text::format_double(r.val_loss) << ',' << text::format_double(r.val_acc) << ','
        << text::format_double(r.val_mlrap) << ',' << r.snapshot_path << '\n';
  }
}

}  // namespace birdclef
