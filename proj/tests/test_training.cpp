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

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "birdclef/training.hpp"
#include "test_support.hpp"

namespace bc = birdclef;
namespace nn = birdclef::nn;
using bc::testing::TempDir;

namespace {

// Class c carries a bright horizontal band at a class-specific row on top of
// uniform noise.
std::vector<bc::LabeledSample> banded_set(int classes, int per_class, int rows, int cols, std::uint64_t seed) {
  std::vector<bc::LabeledSample> out;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      bc::LabeledSample s;
      s.spectrogram = bc::testing::random_spec(rows, cols, seed + static_cast<std::uint64_t>(c * 1000 + i));
      for (auto& v : s.spectrogram.values) v *= 0.5f;
      const int band = (c + 1) * rows / (classes + 1);
      for (int r = band - 2; r <= band + 2; ++r) {
        for (int k = 0; k < cols; ++k) s.spectrogram.at(r, k) = 1.0f;
      }
      s.foreground = c;
      out.push_back(std::move(s));
    }
  }
  return out;
}

bc::ModelConfig tiny_model(int classes, int rows = 32, int cols = 64) {
  bc::ModelConfig cfg;
  cfg.n_classes = classes;
  cfg.filter_multiplier = 0.25;
  cfg.input_rows = rows;
  cfg.input_cols = cols;
  return cfg;
}

bc::TrainConfig quick_train(const std::filesystem::path& out) {
  bc::TrainConfig cfg;
  cfg.output_dir = out;
  cfg.batch_size = 4;
  cfg.augment = false;
  return cfg;
}

std::vector<double> losses(const bc::TrainReport& r) {
  std::vector<double> v;
  for (const auto& e : r.epochs) v.push_back(e.train_loss);
  return v;
}

// Zero classifier weights leave the logits equal to the bias for any input.
void set_constant_output(bc::Model<float>& m, const std::vector<float>& bias) {
  m.find_parameter("fc.weight")->value.fill(0.0f);
  m.find_parameter("fc.bias")->value.storage() = bias;
}

}  // namespace

TEST(Train, OverfitsTinySet) {
  TempDir dir("train");
  const auto data = banded_set(2, 8, 128, 256, 1);
  auto model = bc::build_baseline<float>(tiny_model(2, 128, 256));
  auto cfg = quick_train(dir.path());
  cfg.max_epochs = 50;  // 4 steps per epoch: 200 optimizer steps
  cfg.snapshot_every = 10;
  const auto report = bc::train(model, data, {}, {}, cfg);
  EXPECT_EQ(report.epochs.size(), 50u);
  const auto r = bc::evaluate(model, data);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_LT(report.epochs.back().train_loss, report.epochs.front().train_loss);
}

TEST(Train, PlateauStopsAfterPatience) {
  TempDir dir("train");
  const auto data = banded_set(2, 4, 32, 64, 2);
  auto model = bc::build_baseline<float>(tiny_model(2));
  auto cfg = quick_train(dir.path());
  cfg.max_epochs = 20;
  cfg.early_stop_patience = 3;
  cfg.lr_override = [](int e) { return e < 2 ? 0.001 : 0.0; };
  const auto report = bc::train(model, data, data, {}, cfg);
  ASSERT_EQ(report.epochs.size(), 5u);
  EXPECT_TRUE(report.stopped_early);
  EXPECT_EQ(report.best_epoch, 2);
  // Frozen epochs change nothing, so validation loss repeats bit for bit.
  EXPECT_EQ(report.epochs[2].val_loss, report.epochs[1].val_loss);
  EXPECT_EQ(report.epochs[4].val_loss, report.epochs[1].val_loss);
  EXPECT_TRUE(std::filesystem::exists(report.best_checkpoint));
}

TEST(Train, FrozenEpochLeavesEveryTensorUntouched) {
  TempDir dir("train");
  const auto data = banded_set(2, 4, 32, 64, 3);
  auto model = bc::build_baseline<float>(tiny_model(2));
  std::vector<nn::Tensor<float>> before;
  for (auto* p : model.parameters()) before.push_back(p->value);
  auto cfg = quick_train(dir.path());
  cfg.max_epochs = 2;
  cfg.lr_override = [](int) { return 0.0; };
  bc::train(model, data, {}, {}, cfg);
  const auto after = model.parameters();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(after[i]->value == before[i]) << after[i]->name;
}

TEST(Train, DeterministicLossTraces) {
  TempDir a("train"), b("train");
  const auto data = banded_set(3, 4, 32, 64, 4);
  const auto val = banded_set(3, 1, 32, 64, 99);
  std::vector<bc::Spectrogram> noise{bc::testing::random_spec(32, 64, 7), bc::testing::random_spec(32, 64, 8)};
  auto run = [&](const std::filesystem::path& out) {
    auto model = bc::build_baseline<float>(tiny_model(3));
    auto cfg = quick_train(out);
    cfg.max_epochs = 3;
    cfg.augment = true;
    cfg.augment_cfg.max_shift_rows = 3;
    return bc::train(model, data, val, noise, cfg);
  };
  const auto ra = run(a.path());
  const auto rb = run(b.path());
  EXPECT_EQ(losses(ra), losses(rb));
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) EXPECT_EQ(ra.epochs[i].val_loss, rb.epochs[i].val_loss);
  EXPECT_EQ(bc::testing::read_bytes(a / "best.bclf"), bc::testing::read_bytes(b / "best.bclf"));
}

TEST(Train, SeedChangesTrace) {
  TempDir a("train"), b("train");
  const auto data = banded_set(2, 4, 32, 64, 5);
  auto run = [&](const std::filesystem::path& out, std::uint64_t seed) {
    auto model = bc::build_baseline<float>(tiny_model(2));
    auto cfg = quick_train(out);
    cfg.max_epochs = 2;
    cfg.seed = seed;
    return bc::train(model, data, {}, {}, cfg);
  };
  EXPECT_NE(losses(run(a.path(), 1)), losses(run(b.path(), 2)));
}

TEST(TrainProperty, LrTraceAndSnapshotsFollowSchedule) {
  TempDir dir("train");
  const auto data = banded_set(2, 2, 32, 64, 6);
  auto model = bc::build_baseline<float>(tiny_model(2));
  auto cfg = quick_train(dir.path());
  cfg.max_epochs = 7;
  cfg.schedule.cycle_epochs = 3;
  cfg.snapshot_every = 3;
  const auto report = bc::train(model, data, {}, {}, cfg);
  ASSERT_EQ(report.epochs.size(), 7u);
  for (const auto& e : report.epochs) {
    EXPECT_EQ(e.lr, nn::cosine_lr(e.epoch - 1, cfg.schedule)) << e.epoch;
    EXPECT_EQ(!e.snapshot_path.empty(), e.epoch % 3 == 0) << e.epoch;
  }
  ASSERT_EQ(report.snapshots.size(), 2u);
  EXPECT_EQ(report.snapshots[0], bc::snapshot_path(dir.path(), 3));
  EXPECT_EQ(report.snapshots[1], bc::snapshot_path(dir.path(), 6));
  for (const auto& s : report.snapshots) EXPECT_TRUE(std::filesystem::exists(s));
  EXPECT_EQ(bc::load_checkpoint(report.snapshots[1]).epoch, 6);
  EXPECT_EQ(bc::snapshot_path("d", 10).filename(), "snapshot_epoch_010.bclf");
}

TEST(TrainProperty, EarlyStopKeepsBestCheckpoint) {
  TempDir dir("train");
  const auto data = banded_set(2, 4, 32, 64, 8);
  const auto val = banded_set(2, 2, 32, 64, 80);
  auto model = bc::build_baseline<float>(tiny_model(2));
  auto cfg = quick_train(dir.path());
  cfg.max_epochs = 8;
  cfg.early_stop_patience = 2;
  cfg.schedule.base_lr = 0.01;
  const auto report = bc::train(model, data, val, {}, cfg);
  ASSERT_FALSE(report.epochs.empty());
  EXPECT_LE(report.best_epoch, report.epochs.back().epoch);
  ASSERT_TRUE(std::filesystem::exists(report.best_checkpoint));
  double best = INFINITY;
  for (const auto& e : report.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(report.epochs[static_cast<std::size_t>(report.best_epoch - 1)].val_loss, best);
  // The restored model is the best one.
  auto saved = bc::load_checkpoint(report.best_checkpoint);
  EXPECT_EQ(saved.epoch, report.best_epoch);
  EXPECT_NEAR(bc::evaluate(model, val).loss, best, 1e-12);
  EXPECT_NEAR(bc::evaluate(saved, val).loss, best, 1e-12);
}

TEST(TrainProperty, FirstBatchLossNearLogClasses) {
  for (int classes : {2, 10, 1500}) {
    auto model = bc::build_baseline<float>(tiny_model(classes, 128, 256));
    nn::Tensor<float> x(model.input_shape(16));
    std::vector<int> labels(16);
    for (std::size_t i = 0; i < 16; ++i) {
      const auto s = bc::testing::random_spec(128, 256, 100 + i);
      std::copy(s.values.begin(), s.values.end(), x.data() + i * s.values.size());
      labels[i] = static_cast<int>(i) % classes;
    }
    const double loss = nn::cross_entropy<float>(nn::softmax(model.forward(x, nn::Mode::kTrain)), labels);
    EXPECT_NEAR(loss, std::log(classes), 0.15 * std::log(classes)) << classes;
  }
}

TEST(Train, NonFiniteLossIsDivergence) {
  TempDir dir("train");
  auto data = banded_set(2, 2, 32, 64, 9);
  data[1].spectrogram.values[5] = std::nanf("");
  auto model = bc::build_baseline<float>(tiny_model(2));
  auto cfg = quick_train(dir.path());
  cfg.max_epochs = 1;
  EXPECT_THROW(bc::train(model, data, {}, {}, cfg), bc::DivergenceError);
}

TEST(Train, Preconditions) {
  TempDir dir("train");
  const auto data = banded_set(2, 1, 32, 64, 10);
  auto model = bc::build_baseline<float>(tiny_model(2));
  auto cfg = quick_train(dir.path());
  EXPECT_THROW(bc::train(model, {}, {}, {}, cfg), bc::DataError);
  cfg.snapshot_every = 5;  // not a multiple of the 10-epoch cycle
  EXPECT_THROW(bc::train(model, data, {}, {}, cfg), bc::ConfigError);
  cfg = quick_train("");
  EXPECT_THROW(bc::train(model, data, {}, {}, cfg), bc::ConfigError);
}

TEST(Train, ReportCsvLayout) {
  TempDir dir("train");
  const auto data = banded_set(2, 2, 32, 64, 11);
  auto model = bc::build_baseline<float>(tiny_model(2));
  auto cfg = quick_train(dir.path());
  cfg.max_epochs = 2;
  std::ostringstream log;
  cfg.log = &log;
  const auto report = bc::train(model, data, data, {}, cfg);
  bc::write_report_csv(dir / "report.csv", report);
  std::ifstream in(dir / "report.csv");
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,lr,train_loss,val_loss,val_acc,val_mlrap,snapshot_path");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2);
  EXPECT_NE(log.str().find("epoch 2/2 lr="), std::string::npos);
}

TEST(Evaluate, OneHotModelIsPerfect) {
  auto model = bc::build_baseline<float>(tiny_model(3));
  set_constant_output(model, {0.0f, 60.0f, 0.0f});
  auto data = banded_set(3, 2, 32, 64, 12);
  for (auto& s : data) s.foreground = 1;
  const auto r = bc::evaluate(model, data);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.mlrap, 1.0);
  EXPECT_NEAR(r.loss, 0.0, 1e-6);
}

TEST(Evaluate, UniformModelTieRule) {
  auto model = bc::build_baseline<float>(tiny_model(4));
  set_constant_output(model, {0.0f, 0.0f, 0.0f, 0.0f});
  auto data = banded_set(4, 1, 32, 64, 13);  // labels 0, 1, 2, 3
  const auto r = bc::evaluate(model, data);
  // The first maximum wins, so only the label-0 sample counts as correct;
  // ties rank every label last.
  EXPECT_DOUBLE_EQ(r.accuracy, 0.25);
  EXPECT_DOUBLE_EQ(r.mlrap, 0.25);
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-6);
}

TEST(Evaluate, SingleLabelsGiveMeanReciprocalRank) {
  auto model = bc::build_baseline<float>(tiny_model(4));
  set_constant_output(model, {3.0f, 2.0f, 1.0f, 0.0f});
  auto data = banded_set(4, 1, 32, 64, 14);
  const auto r = bc::evaluate(model, data);
  EXPECT_NEAR(r.mlrap, (1.0 + 1.0 / 2 + 1.0 / 3 + 1.0 / 4) / 4.0, 1e-12);
  // Background labels join the label set.
  data[3].background = {0};
  EXPECT_NEAR(bc::evaluate(model, data).mlrap, (1.0 + 1.0 / 2 + 1.0 / 3 + (1.0 + 2.0 / 4) / 2) / 4.0, 1e-12);
  EXPECT_THROW(bc::evaluate(model, {}), bc::DataError);
}

BIRDCLEF_TEST_MAIN()
