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

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dpsep/dpsep.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dpsep: dual-path recurrent speech separation"};
  app.require_subcommand(1);

  dpsep::CommandOptions opt;
  opt.out = &std::cout;
  opt.err = &std::cerr;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  app.add_flag("--deterministic", opt.deterministic,
               "single-threaded, reproducible output (wall time logged as 0)");
  auto* seed_opt = app.add_option("--seed", seed, "random seed (overrides the config)");
  auto* threads_opt =
      app.add_option("--threads", threads, "worker threads for data generation")
          ->check(CLI::PositiveNumber);

  std::string config, ckpt, wav, out_dir, manifest;
  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("config", config, "key = value config file")->required();

  auto* sep = app.add_subcommand("separate", "separate a mono PCM16 WAV file");
  sep->add_option("ckpt", ckpt, "checkpoint")->required();
  sep->add_option("wav", wav, "input mixture")->required();
  sep->add_option("outdir", out_dir, "directory for source1.wav .. sourceC.wav")->required();

  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on a manifest");
  eval->add_option("ckpt", ckpt, "checkpoint")->required();
  eval->add_option("manifest", manifest, "manifest file")->required();
  eval->add_option("--segment-seconds", opt.segment_seconds, "segment length")
      ->check(CLI::PositiveNumber);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : dpsep::kExitUsage;
  }
  if (*seed_opt) opt.seed = seed;
  if (*threads_opt) opt.threads = threads;

  if (*train) return dpsep::cmd_train(config, opt);
  if (*sep) return dpsep::cmd_separate(ckpt, wav, out_dir, opt);
  if (*eval) return dpsep::cmd_evaluate(ckpt, manifest, opt);
  if (*grad) return dpsep::cmd_gradcheck(opt);
  return dpsep::kExitUsage;
}
