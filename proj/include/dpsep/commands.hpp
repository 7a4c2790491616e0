// Copyright 2026 The dpsep Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command implementations behind the `dpsep` executable. Each returns a
// process exit code: 0 success, 2 usage/config/input error, 3 numeric abort,
// 1 anything else (including failed gradient checks).

#pragma once

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "dpsep/config.hpp"
#include "dpsep/gradcheck.hpp"
#include "dpsep/wav.hpp"

namespace dpsep {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

struct CommandOptions {
  bool deterministic = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  double segment_seconds = 4.0;  // evaluate only
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

namespace detail {

// Maps library exceptions onto the exit-code contract.
template <typename F>
int run_guarded(const CommandOptions& opt, F&& body) {
  std::ostream& err = *opt.err;
  try {
    return body();
  } catch (const TrainingAborted& e) {
    err << "dpsep: training aborted: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NumericError& e) {
    err << "dpsep: numeric error in " << e.op() << ": " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "dpsep: config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "dpsep: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ArgumentError& e) {
    err << "dpsep: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "dpsep: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "dpsep: " << e.what() << "\n";
    return kExitFailure;
  }
}

inline std::string run_dir_override(const std::string& configured) {
  if (const char* env = std::getenv("DPSEP_RUN_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return configured;
}

}  // namespace detail

// Reads the config, builds train/valid sets from the manifest's split tags,
// trains, and leaves metrics.tsv, best.ckpt and last.ckpt in the run dir.
inline int cmd_train(const std::string& config_path, const CommandOptions& opt) {
  return detail::run_guarded(opt, [&] {
    auto cfg = load_config(config_path);
    if (opt.seed) cfg.train.seed = *opt.seed;
    if (opt.threads) cfg.threads = *opt.threads;
    if (opt.deterministic) cfg.train.deterministic = true;
    if (cfg.train.deterministic) cfg.threads = 1;
    cfg.run_dir = detail::run_dir_override(cfg.run_dir);
    if (cfg.manifest.empty()) throw ConfigError("config does not set 'manifest'");
    set_check_finite(cfg.check_finite);

    const auto manifest = load_manifest(cfg.manifest);
    const auto rate = cfg.model.sample_rate;
    const auto train = make_dataset(manifest.only(Split::train), cfg.train.segment_seconds,
                                    rate, cfg.train.seed, cfg.threads);
    const auto valid = make_dataset(manifest.only(Split::valid), cfg.train.segment_seconds,
                                    rate, cfg.train.seed, cfg.threads);
    if (train.empty() || valid.empty()) {
      throw FormatError("manifest " + cfg.manifest +
                        " needs at least one 'train' and one 'valid' record");
    }
    auto model = SeparatorModel<float>::init(cfg.model, cfg.train.seed);
    *opt.out << "model parameters: " << parameter_count(model) << "\n"
             << "train segments: " << train.size() << ", valid segments: " << valid.size()
             << "\n"
             << "epoch\tlr\ttrain_loss\tval_si_snri\twall_s\n";
    const auto result = train_loop(model, train, valid, cfg.train, cfg.run_dir, opt.out);
    *opt.out << "best epoch " << result.best_epoch << ", val SI-SNRi "
             << result.best_val_si_snri << " dB; checkpoints in " << cfg.run_dir << "\n";
    return kExitOk;
  });
}

// Writes source1.wav .. sourceC.wav, each as long as the input.
inline int cmd_separate(const std::string& ckpt_path, const std::string& wav_path,
                        const std::string& out_dir, const CommandOptions& opt) {
  return detail::run_guarded(opt, [&] {
    const auto model = load_model<float>(ckpt_path);
    const auto wav = read_wav(wav_path);
    if (wav.sample_rate != model.config.sample_rate) {
      throw FormatError(detail::concat(wav_path, ": sample rate ", wav.sample_rate,
                                       " does not match the checkpoint's ",
                                       model.config.sample_rate));
    }
    Tensor<float> est;
    {
      NoGradScope no_grad;
      est = separate(wav.samples, model);
    }
    std::filesystem::create_directories(out_dir);
    const std::size_t len = est.dim(1);
    for (std::size_t c = 0; c < est.dim(0); ++c) {
      const auto path =
          (std::filesystem::path(out_dir) / ("source" + std::to_string(c + 1) + ".wav"))
              .string();
      write_wav(path, est.data().subspan(c * len, len), wav.sample_rate);
      *opt.out << path << "\n";
    }
    return kExitOk;
  });
}

// Per-example and mean SI-SNRi / SNRi over the manifest's test records (all
// records when none is tagged test).
inline int cmd_evaluate(const std::string& ckpt_path, const std::string& manifest_path,
                        const CommandOptions& opt) {
  return detail::run_guarded(opt, [&] {
    const auto model = load_model<float>(ckpt_path);
    const auto manifest = load_manifest(manifest_path);
    auto selected = manifest.only(Split::test);
    if (selected.empty()) selected = manifest;
    const auto set = make_dataset(selected, opt.segment_seconds, model.config.sample_rate,
                                  opt.seed.value_or(0),
                                  opt.deterministic ? 1 : opt.threads.value_or(1));
    if (set.empty()) throw FormatError("manifest " + manifest_path + " has no records");
    auto& out = *opt.out;
    out << "example\tseed\tsi_snri_db\tsnri_db\n";
    double si = 0, snr = 0;
    char buf[128];
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto s = evaluate_example(model, set[i]);
      si += s.si_snri;
      snr += s.snri;
      std::snprintf(buf, sizeof buf, "%zu\t%llu\t%.4f\t%.4f\n", i + 1,
                    static_cast<unsigned long long>(set[i].seed), s.si_snri, s.snri);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "mean\t-\t%.4f\t%.4f\n", si / double(set.size()),
                  snr / double(set.size()));
    out << buf;
    return kExitOk;
  });
}

// Gradient suite; exit 1 when any check fails.
inline int cmd_gradcheck(const CommandOptions& opt) {
  return detail::run_guarded(opt, [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const auto reports = run_gradcheck_suite(opt.seed.value_or(7));
    std::size_t failed = 0;
    for (const auto& r : reports) {
      *opt.out << format_report(r) << "\n";
      failed += r.passed ? 0 : 1;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    *opt.out << reports.size() - failed << "/" << reports.size() << " checks passed";
    if (!opt.deterministic) *opt.out << " in " << secs << " s";
    *opt.out << "\n";
    return failed == 0 ? kExitOk : kExitFailure;
  });
}

}  // namespace dpsep
