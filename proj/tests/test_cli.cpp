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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "dpsep/dpsep.hpp"

namespace dpsep {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

// A scratch dir holding a tiny config and a synthetic manifest.
class CliFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dpsep_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    spit(dir_ / "data.tsv",
         "train\tsynth:harmonic:1\tsynth:chirp:2\t1\n"
         "train\tsynth:chirp:3\tsynth:modulated-noise:4\t-2\n"
         "valid\tsynth:harmonic:5\tsynth:modulated-noise:6\t0\n"
         "test\tsynth:modulated-noise:7\tsynth:chirp:8\t3\n");
    spit(dir_ / "run.cfg",
         "# tiny model\n"
         "N = 8\nW = 8\nB = 1\nH = 4\n"
         "epochs = 2\nsegment_seconds = 0.125\nbatch_size = 2\n"
         "manifest = data.tsv\nrun_dir = out\n");
    opt_.out = &out_;
    opt_.err = &err_;
  }
  void TearDown() override {
    unsetenv("DPSEP_RUN_DIR");
    fs::remove_all(dir_);
  }

  fs::path dir_;
  std::ostringstream out_, err_;
  CommandOptions opt_;
};

TEST(Config, DefaultsMatchTheReferenceRecipe) {
  const auto c = parse_config("");
  EXPECT_EQ(c.model.num_filters, 64u);
  EXPECT_EQ(c.model.window, 2u);
  EXPECT_EQ(c.model.num_sources, 2u);
  EXPECT_EQ(c.model.num_blocks, 6u);
  EXPECT_EQ(c.model.hidden, 128u);
  EXPECT_EQ(c.model.sample_rate, 8000u);
  EXPECT_EQ(c.train.lr_init, 1e-3);
  EXPECT_EQ(c.train.lr_decay, 0.98);
  EXPECT_EQ(c.train.lr_decay_every, 2u);
  EXPECT_EQ(c.train.clip_norm, 5.0);
  EXPECT_EQ(c.train.patience, 10u);
  EXPECT_EQ(c.train.segment_seconds, 4.0);
}

TEST(Config, ParsesValuesAndResolvesPaths) {
  const auto c = parse_config("N = 32 # filters\nlr=2e-3\ndeterministic = true\nmanifest = a/b.tsv\n",
                              "/base");
  EXPECT_EQ(c.model.num_filters, 32u);
  EXPECT_EQ(c.train.lr_init, 2e-3);
  EXPECT_TRUE(c.train.deterministic);
  EXPECT_EQ(c.manifest, "/base/a/b.tsv");
}

TEST(Config, RejectsUnknownDuplicateAndMalformedKeys) {
  for (const char* bad : {"frobnicate = 1\n", "N = 4\nN = 8\n", "N = four\n", "N\n", "lr = -1\n",
                          "W = 0\n"}) {
    EXPECT_THROW(parse_config(bad), ConfigError) << bad;
  }
  try {
    parse_config("N = 4\nfrobnicate = 1\n");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("frobnicate"), std::string::npos) << e.what();
  }
}

TEST_F(CliFixture, MissingConfigExitsTwoNamingThePath) {
  const auto missing = (dir_ / "nope.cfg").string();
  EXPECT_EQ(cmd_train(missing, opt_), kExitUsage);
  EXPECT_NE(err_.str().find(missing), std::string::npos) << err_.str();
}

TEST_F(CliFixture, TrainWritesCheckpointsAndLog) {
  ASSERT_EQ(cmd_train((dir_ / "run.cfg").string(), opt_), kExitOk) << err_.str();
  EXPECT_TRUE(fs::exists(dir_ / "out" / "best.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "last.ckpt"));
  const auto log = slurp(dir_ / "out" / "metrics.tsv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);
}

TEST_F(CliFixture, DeterministicRerunIsByteIdentical) {
  opt_.deterministic = true;
  setenv("DPSEP_RUN_DIR", (dir_ / "r1").c_str(), 1);
  ASSERT_EQ(cmd_train((dir_ / "run.cfg").string(), opt_), kExitOk) << err_.str();
  setenv("DPSEP_RUN_DIR", (dir_ / "r2").c_str(), 1);
  ASSERT_EQ(cmd_train((dir_ / "run.cfg").string(), opt_), kExitOk) << err_.str();
  EXPECT_FALSE(fs::exists(dir_ / "out"));
  EXPECT_EQ(slurp(dir_ / "r1" / "metrics.tsv"), slurp(dir_ / "r2" / "metrics.tsv"));
  EXPECT_EQ(slurp(dir_ / "r1" / "best.ckpt"), slurp(dir_ / "r2" / "best.ckpt"));
}

TEST_F(CliFixture, ManifestWithoutValidationIsRejected) {
  spit(dir_ / "data.tsv", "train\tsynth:harmonic:1\tsynth:chirp:2\t1\n");
  EXPECT_EQ(cmd_train((dir_ / "run.cfg").string(), opt_), kExitUsage);
  EXPECT_NE(err_.str().find("valid"), std::string::npos);
}

TEST_F(CliFixture, SeparateAndEvaluateUseTheCheckpoint) {
  ASSERT_EQ(cmd_train((dir_ / "run.cfg").string(), opt_), kExitOk) << err_.str();
  const auto ckpt = (dir_ / "out" / "best.ckpt").string();
  const auto mix = synth_source(SourceKind::harmonic, 0.3, 8000, 9);
  write_wav((dir_ / "mix.wav").string(), mix.data(), 8000);
  ASSERT_EQ(cmd_separate(ckpt, (dir_ / "mix.wav").string(), (dir_ / "sep").string(), opt_), kExitOk)
      << err_.str();
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "sep")) {
    ++files;
    const auto wav = read_wav(e.path().string());
    EXPECT_EQ(wav.samples.numel(), mix.numel());
    EXPECT_EQ(wav.sample_rate, 8000u);
  }
  EXPECT_EQ(files, 2u);
  EXPECT_TRUE(fs::exists(dir_ / "sep" / "source1.wav"));

  write_wav((dir_ / "mix16k.wav").string(), mix.data(), 16000);
  EXPECT_EQ(cmd_separate(ckpt, (dir_ / "mix16k.wav").string(), (dir_ / "sep2").string(), opt_),
            kExitUsage);
  EXPECT_FALSE(fs::exists(dir_ / "sep2"));

  std::ostringstream eval_out;
  opt_.out = &eval_out;
  opt_.segment_seconds = 0.125;
  ASSERT_EQ(cmd_evaluate(ckpt, (dir_ / "data.tsv").string(), opt_), kExitOk) << err_.str();
  const auto text = eval_out.str();
  EXPECT_EQ(text.rfind("example\tseed\tsi_snri_db\tsnri_db\n", 0), 0u) << text;
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);  // header, one test record, mean
  EXPECT_NE(text.find("\nmean\t"), std::string::npos);
}

TEST_F(CliFixture, GradcheckExitsZero) {
  EXPECT_EQ(cmd_gradcheck(opt_), kExitOk);
  EXPECT_NE(out_.str().find("checks passed"), std::string::npos);
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(DPSEP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(CliFixture, BinaryExitCodes) {
  EXPECT_EQ(run_binary("--help"), 0);
  EXPECT_EQ(run_binary(""), kExitUsage);
  EXPECT_EQ(run_binary("frobnicate"), kExitUsage);
  EXPECT_EQ(run_binary("train " + (dir_ / "missing.cfg").string()), kExitUsage);
  EXPECT_EQ(run_binary("--deterministic gradcheck"), kExitOk);
  EXPECT_EQ(run_binary("separate " + (dir_ / "none.ckpt").string() + " a.wav out"), kExitUsage);
}

}  // namespace
}  // namespace dpsep
