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

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "birdclef/audio_io.hpp"
#include "birdclef/config.hpp"
#include "birdclef/dataset.hpp"
#include "birdclef/error.hpp"
#include "birdclef/inference.hpp"
#include "birdclef/model.hpp"
#include "birdclef/signal_filter.hpp"
#include "birdclef/spectrogram.hpp"
#include "birdclef/synth_corpus.hpp"
#include "birdclef/training.hpp"

#ifndef BIRDCLEF_VERSION
#define BIRDCLEF_VERSION "1.0.0"
#endif

namespace birdclef::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kDivergence = 3 };

// Runs fn(i, worker) for i in [0, n) on up to `workers` threads, worker
// being the thread's index. The first exception is rethrown after all
// threads finish.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t w = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, std::size_t{0});
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i, t);
      } catch (...) {
        errors[t] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct ManifestLine {
  std::string source;
  double offset = 0.0;
  double score = 0.0;
  bool accepted = false;
  std::string output;
};

inline std::string chunk_stem(const std::filesystem::path& src, std::size_t i) {
  std::ostringstream s;
  s << src.stem().string() << "_c" << std::setw(3) << std::setfill('0') << i;
  return s.str();
}

// Turns <input>/<class>/*.wav into <output>/<class>/*.bspc. Chunks the
// signal filter rejects, and every chunk of <input>/noise, go to
// <output>/noise. Returns manifest lines in input order whatever the worker
// count.
inline std::vector<ManifestLine> extract_corpus(const std::filesystem::path& input, const std::filesystem::path& output,
                                                const PipelineConfig& cfg, int workers, bool pgm) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(input)) throw DataError("extract: input " + input.string() + " is not a directory");
  struct Job {
    fs::path src;
    std::string cls;
    bool noise_source;
  };
  std::vector<Job> jobs;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(input)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::error_code ec;
  fs::create_directories(output / kNoiseDirName, ec);
  if (ec) throw DataError("cannot create " + output.string() + ": " + ec.message());
  for (const auto& d : dirs) {
    const std::string cls = d.filename().string();
    const bool noise = cls == kNoiseDirName;
    if (!noise) fs::create_directories(output / cls, ec);
    if (ec) throw DataError("cannot create " + (output / cls).string() + ": " + ec.message());
    for (const auto& f : detail::sorted_files(d, ".wav")) jobs.push_back({f, cls, noise});
  }
  if (jobs.empty()) throw DataError("extract: no .wav files under " + input.string());

  std::vector<std::vector<ManifestLine>> per_file(jobs.size());
  std::vector<std::unique_ptr<SpectrogramExtractor>> extractors;
  const std::size_t n_workers = std::min<std::size_t>(jobs.size(), static_cast<std::size_t>(std::max(1, workers)));
  for (std::size_t i = 0; i < n_workers; ++i) extractors.push_back(std::make_unique<SpectrogramExtractor>(cfg.spectrogram));
  parallel_for(jobs.size(), workers, [&](std::size_t j, std::size_t w) {
    const SpectrogramExtractor& ex = *extractors[w];
    const Job& job = jobs[j];
    const AudioBuffer audio = resample(decode_wav(job.src), cfg.spectrogram.sample_rate);
    const auto chunks = chunk(audio, cfg.chunk_seconds, cfg.chunk_hop_seconds);
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const auto pair = ex.extract_pair(chunks[i]);
      const SignalDecision d = classify_chunk(pair.magnitude, cfg.signal);
      const bool to_class = d.accepted && !job.noise_source;
      const std::string stem = job.noise_source || to_class ? chunk_stem(job.src, i) : job.cls + "-" + chunk_stem(job.src, i);
      const fs::path dst = output / (to_class ? job.cls : std::string(kNoiseDirName)) / (stem + ".bspc");
      save_bspc(dst, pair.log_mel);
      if (pgm) write_pgm(fs::path(dst).replace_extension(".pgm"), pair.log_mel);
      per_file[j].push_back({job.src.string(), chunks[i].source_offset, d.score, d.accepted, dst.string()});
    }
  });

  std::vector<ManifestLine> manifest;
  for (auto& v : per_file) {
    for (auto& l : v) manifest.push_back(std::move(l));
  }
  return manifest;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestLine>& lines) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[64];
  for (const auto& l : lines) {
    std::snprintf(buf, sizeof buf, "%.6f", l.score);
    out << l.source << '\t' << text::format_double(l.offset) << '\t' << buf << '\t'
        << (l.accepted ? "accept" : "reject") << '\t' << l.output << '\n';
  }
}

struct EvaluationResult {
  std::vector<std::string> recording_ids;
  std::vector<std::vector<int>> label_sets;
  std::vector<ScoreMatrix> per_model;  // [model][recording] pooled scores
  ScoreMatrix ensembled;               // [recording] mean over models
  double mlrap = 0.0;
};

inline std::vector<Model<float>> load_models(const std::vector<std::filesystem::path>& checkpoints) {
  if (checkpoints.empty()) throw ConfigError("at least one --checkpoint is required");
  std::vector<Model<float>> models;
  for (const auto& c : checkpoints) {
    models.push_back(load_checkpoint(c));
    if (models.back().class_names != models.front().class_names) {
      throw DataError("checkpoint " + c.string() + " has a different class list than " + checkpoints.front().string());
    }
  }
  return models;
}

inline std::vector<PreparedRecording> prepare_all(const std::vector<std::filesystem::path>& files,
                                                  const PipelineConfig& cfg, int workers) {
  std::vector<PreparedRecording> out(files.size());
  std::vector<std::unique_ptr<SpectrogramExtractor>> extractors;
  const std::size_t n = std::min<std::size_t>(files.size(), static_cast<std::size_t>(std::max(1, workers)));
  for (std::size_t i = 0; i < n; ++i) extractors.push_back(std::make_unique<SpectrogramExtractor>(cfg.spectrogram));
  parallel_for(files.size(), workers, [&](std::size_t i, std::size_t w) {
    out[i] = prepare_recording(files[i], *extractors[w], cfg.inference_options());
  });
  return out;
}

// Scores every ground-truth recording found as <audio_dir>/<id>.wav with each
// checkpoint, averages the pooled vectors over checkpoints and computes MLRAP
// against foreground plus background labels.
inline EvaluationResult evaluate_recordings(const std::vector<std::filesystem::path>& checkpoints,
                                            const std::filesystem::path& audio_dir,
                                            const std::filesystem::path& ground_truth, const PipelineConfig& cfg,
                                            int workers = 1) {
  auto models = load_models(checkpoints);
  const auto n_classes = models.front().class_names.size();
  EvaluationResult r;
  std::vector<std::filesystem::path> files;
  for (const auto& l : read_ground_truth_csv(ground_truth)) {
    const auto path = audio_dir / (l.recording_id + ".wav");
    if (!std::filesystem::exists(path)) continue;
    for (int y : l.label_set()) {
      if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
        throw DataError("ground truth " + l.recording_id + ": class id " + std::to_string(y) + " outside the model's " +
                        std::to_string(n_classes) + " classes");
      }
    }
    r.recording_ids.push_back(l.recording_id);
    r.label_sets.push_back(l.label_set());
    files.push_back(path);
  }
  if (files.empty()) throw DataError("evaluate: no ground-truth recording found under " + audio_dir.string());
  const auto prepared = prepare_all(files, cfg, workers);
  for (auto& m : models) {
    ScoreMatrix pooled;
    for (const auto& rec : prepared) {
      pooled.push_back(pool(predict_chunks(m, rec.spectrograms, static_cast<std::size_t>(cfg.inference_batch)),
                            cfg.pooling));
    }
    r.per_model.push_back(std::move(pooled));
  }
  for (std::size_t i = 0; i < files.size(); ++i) {
    ScoreMatrix k;
    for (const auto& pm : r.per_model) k.push_back(pm[i]);
    r.ensembled.push_back(ensemble(k));
  }
  r.mlrap = mlrap(r.ensembled, r.label_sets);
  return r;
}

inline void write_scores_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                             const ScoreMatrix& scores, const std::vector<std::string>& class_names) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "recording_id";
  for (const auto& c : class_names) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i];
    for (double v : scores[i]) out << ',' << text::format_double(v);
    out << '\n';
  }
}

inline std::vector<std::filesystem::path> audio_inputs(const std::filesystem::path& p) {
  if (std::filesystem::is_directory(p)) {
    auto files = detail::sorted_files(p, ".wav");
    if (files.empty()) throw DataError("no .wav files in " + p.string());
    return files;
  }
  if (!std::filesystem::exists(p)) throw DataError("audio input " + p.string() + " does not exist");
  return {p};
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bird sound classification baseline: synthesize, extract, train, evaluate, predict"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool print_config = false;
  bool version = false;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--set", overrides, "key=value override, applied after --config (repeatable)");
  app.add_flag("--print-config", print_config, "print the effective configuration and exit");
  app.add_flag("--version", version, "print version and build information");

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic labeled corpus");
  std::string synth_out;
  synth_cmd->add_option("--output", synth_out, "output directory")->required();

  auto* extract_cmd = app.add_subcommand("extract", "audio tree -> spectrogram tree + manifest.tsv");
  std::string ex_in, ex_out;
  int ex_workers = 1;
  bool ex_pgm = false;
  extract_cmd->add_option("--input", ex_in, "directory of <class>/*.wav (and noise/*.wav)")->required();
  extract_cmd->add_option("--output", ex_out, "spectrogram corpus directory")->required();
  extract_cmd->add_option("--workers", ex_workers, "parallel files")->check(CLI::PositiveNumber);
  extract_cmd->add_flag("--pgm", ex_pgm, "also write 8-bit PGM images");

  auto* train_cmd = app.add_subcommand("train", "train a model on a spectrogram corpus");
  std::string tr_data, tr_out;
  train_cmd->add_option("--data", tr_data, "spectrogram corpus directory")->required();
  train_cmd->add_option("--output", tr_out, "run directory for checkpoints and report.csv")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "MLRAP of one checkpoint or a snapshot ensemble");
  std::vector<std::string> ev_ckpts;
  std::string ev_audio, ev_gt, ev_scores;
  int ev_workers = 1;
  eval_cmd->add_option("--checkpoint", ev_ckpts, "checkpoint path (repeatable; several are ensembled)")->required();
  eval_cmd->add_option("--audio", ev_audio, "directory holding <recording_id>.wav")->required();
  eval_cmd->add_option("--ground-truth", ev_gt, "recording_id,foreground_id,background_ids CSV")->required();
  eval_cmd->add_option("--scores", ev_scores, "write pooled (ensembled) scores as CSV");
  eval_cmd->add_option("--workers", ev_workers, "parallel files for extraction")->check(CLI::PositiveNumber);

  auto* pred_cmd = app.add_subcommand("predict", "per-recording class scores as CSV");
  std::vector<std::string> pr_ckpts;
  std::string pr_audio, pr_out, pr_pooling;
  std::size_t pr_top_k = 10;
  bool pr_normalize = false;
  int pr_workers = 1;
  pred_cmd->add_option("--checkpoint", pr_ckpts, "checkpoint path (repeatable; several are ensembled)")->required();
  pred_cmd->add_option("--audio", pr_audio, "a .wav file or a directory of them")->required();
  pred_cmd->add_option("--output", pr_out, "CSV path (default: stdout)");
  pred_cmd->add_option("--top-k", pr_top_k, "rows per recording, 0 = all");
  pred_cmd->add_flag("--normalize", pr_normalize, "divide scores by each recording's maximum");
  pred_cmd->add_option("--pooling", pr_pooling, "mean_exp or mean (overrides inference.pooling)");
  pred_cmd->add_option("--workers", pr_workers, "parallel files for extraction")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (version) {
      out << "birdclef " << BIRDCLEF_VERSION << " (C++" << __cplusplus / 100 % 100 << ", " <<
#if defined(__clang__)
          "clang " << __clang_major__ << "." << __clang_minor__
#elif defined(__GNUC__)
          "gcc " << __GNUC__ << "." << __GNUC_MINOR__
#else
          "unknown compiler"
#endif
          << ", Eigen " << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION << ")\n";
      return kOk;
    }
    PipelineConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
    cfg.validate();
    if (print_config) {
      cfg.print(out);
      return kOk;
    }

    if (*synth_cmd) {
      auto sc = cfg.synth;
      sc.sample_rate = cfg.spectrogram.sample_rate;
      const auto summary = synth::generate_corpus(sc, synth_out);
      err << "synth: " << summary.class_names.size() << " classes, " << summary.labels.size() << " recordings ("
          << summary.test_ids.size() << " held out), " << sc.noise_files << " noise files -> " << synth_out << '\n';
    } else if (*extract_cmd) {
      const auto lines = extract_corpus(ex_in, ex_out, cfg, ex_workers, ex_pgm);
      write_manifest(std::filesystem::path(ex_out) / "manifest.tsv", lines);
      std::size_t accepted = 0;
      for (const auto& l : lines) accepted += l.accepted ? 1 : 0;
      err << "extract: " << lines.size() << " chunks, " << accepted << " accepted\n";
    } else if (*train_cmd) {
      const auto index = scan_corpus(tr_data);
      for (const auto& w : index.warnings) err << "warning: " << w << '\n';
      auto [train_idx, val_idx] = split(index, cfg.train.val_fraction, cfg.train.seed);
      for (const auto& w : train_idx.warnings) err << "warning: " << w << '\n';
      const auto train_set = load_samples(train_idx);
      const auto val_set = load_samples(val_idx);
      const auto pool = load_noise_pool(index);
      ModelConfig mc = cfg.model;
      mc.n_classes = static_cast<int>(index.n_classes());
      auto model = build_baseline<float>(mc);
      model.class_names = index.classes;
      TrainConfig tc = cfg.train;
      tc.output_dir = tr_out;
      tc.log = &out;
      err << "train: " << train_set.size() << " train / " << val_set.size() << " val samples, " << pool.size()
          << " noise, " << mc.n_classes << " classes, " << count_params(model) << " parameters\n";
      const auto report = train(model, train_set, val_set, pool, tc);
      write_report_csv(std::filesystem::path(tr_out) / "report.csv", report);
      write_label_map_csv(std::filesystem::path(tr_out) / "label_map.csv", index.classes);
      PipelineConfig used = cfg;
      used.model.n_classes = mc.n_classes;
      std::ofstream conf(std::filesystem::path(tr_out) / "config.conf");
      used.print(conf);
      out << "best epoch " << report.best_epoch << ": " << report.best_checkpoint.string() << '\n';
    } else if (*eval_cmd) {
      std::vector<std::filesystem::path> ckpts(ev_ckpts.begin(), ev_ckpts.end());
      const auto r = evaluate_recordings(ckpts, ev_audio, ev_gt, cfg, ev_workers);
      if (!ev_scores.empty()) {
        write_scores_csv(ev_scores, r.recording_ids, r.ensembled, load_checkpoint(ckpts.front()).class_names);
      }
      err << "evaluate: " << r.recording_ids.size() << " recordings, " << ckpts.size() << " checkpoint(s)\n";
      char buf[32];
      std::snprintf(buf, sizeof buf, "MLRAP=%.4f", r.mlrap);
      out << buf << '\n';
    } else if (*pred_cmd) {
      if (!pr_pooling.empty()) cfg.pooling = parse_pooling(pr_pooling);
      std::vector<std::filesystem::path> ckpts(pr_ckpts.begin(), pr_ckpts.end());
      auto models = load_models(ckpts);
      const auto files = audio_inputs(pr_audio);
      const auto prepared = prepare_all(files, cfg, pr_workers);
      std::vector<std::pair<std::string, std::vector<double>>> rows;
      for (const auto& rec : prepared) {
        ScoreMatrix k;
        for (auto& m : models) {
          k.push_back(pool(predict_chunks(m, rec.spectrograms, static_cast<std::size_t>(cfg.inference_batch)),
                           cfg.pooling));
        }
        rows.emplace_back(rec.recording_id, ensemble(k));
      }
      if (pr_out.empty()) {
        write_predictions_csv(out, rows, models.front().class_names, pr_top_k, pr_normalize);
      } else {
        std::ofstream f(pr_out);
        if (!f) throw DataError("cannot write " + pr_out);
        write_predictions_csv(f, rows, models.front().class_names, pr_top_k, pr_normalize);
      }
    } else {
      err << app.help();
      return kUsage;
    }
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace birdclef::cli
