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

#include <cstring>
#include <filesystem>
#include <set>

#include "dpsep/dpsep.hpp"

namespace dpsep {
namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.num_filters = 8;
  cfg.window = 4;
  cfg.num_sources = 2;
  cfg.num_blocks = 1;
  cfg.hidden = 4;
  return cfg;
}

TEST(Model, DefaultParameterCount) {
  const auto model = SeparatorModel<float>::init(ModelConfig{}, 0);
  EXPECT_EQ(parameter_count(model), 2579072u);
  EXPECT_NEAR(double(parameter_count(model)) / 2.6e6, 1.0, 0.05);
}

TEST(Model, NamedParametersAreUniqueAndOrdered) {
  const auto model = SeparatorModel<float>::init(tiny_config(), 0);
  const auto named = model.named_parameters();
  EXPECT_EQ(named.front().name, "encoder.kernels");
  std::set<std::string> names;
  for (const auto& nt : named) EXPECT_TRUE(names.insert(nt.name).second) << nt.name;
  EXPECT_TRUE(names.count("block0.intra.lstm_fwd.w_ih"));
  EXPECT_TRUE(names.count("block0.inter.ln.scale"));
}

TEST(Model, InitIsDeterministic) {
  const auto a = SeparatorModel<float>::init(tiny_config(), 5);
  const auto b = SeparatorModel<float>::init(tiny_config(), 5);
  const auto c = SeparatorModel<float>::init(tiny_config(), 6);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin()));
    differs = differs || !std::equal(pa[i].data().begin(), pa[i].data().end(), pc[i].data().begin());
  }
  EXPECT_TRUE(differs);
}

TEST(Pipeline, ShapesThroughEveryStage) {
  const auto cfg = tiny_config();
  const auto model = SeparatorModel<float>::init(cfg, 1);
  Rng rng(mix_seed(40));
  auto mix = uniform<float>({1, 101}, 1.0f, rng);
  const auto rep = encode(mix, model);
  EXPECT_EQ(rep.shape(), (Shape{8, cfg.frames_for(101)}));
  for (float v : rep.data()) EXPECT_GE(v, 0.0f);
  const auto masks = estimate_masks(rep, model);
  EXPECT_EQ(masks.masks.shape(), (Shape{2, 8, rep.dim(1)}));
  for (float v : masks.masks.data()) EXPECT_GE(v, 0.0f);
  const auto out = separate(mix, model);
  EXPECT_EQ(out.shape(), (Shape{2, 101}));
}

TEST(Pipeline, OutputLengthAlwaysMatchesInput) {
  const auto model = SeparatorModel<float>::init(tiny_config(), 2);
  Rng rng(mix_seed(41));
  for (std::size_t t : {4, 5, 6, 7, 33, 200}) {
    auto mix = uniform<float>({1, t}, 1.0f, rng);
    EXPECT_EQ(separate(mix, model).shape(), (Shape{2, t})) << t;
  }
}

TEST(Pipeline, MasksAtOneReconstructDecoderOfEncoder) {
  const auto model = SeparatorModel<float>::init(tiny_config(), 3);
  Rng rng(mix_seed(42));
  auto mix = uniform<float>({1, 40}, 1.0f, rng);
  const auto rep = encode(mix, model);
  MaskSet<float> ones{Tensor<float>(Shape{2, 8, rep.dim(1)}, 1.0f)};
  const auto applied = apply_masks(rep, ones);
  const auto decoded = decode(applied, model);
  const auto single = transposed_conv1d(rep, model.decoder, model.config.stride());
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < single.numel(); ++i)
      EXPECT_FLOAT_EQ(decoded[c * single.numel() + i], single[i]);
}

TEST(Pipeline, RejectsMismatchedShapes) {
  const auto model = SeparatorModel<float>::init(tiny_config(), 4);
  EXPECT_THROW((void)estimate_masks(Tensor<float>(Shape{7, 10}), model), ShapeError);
  MaskSet<float> masks{Tensor<float>(Shape{2, 8, 9}, 1.0f)};
  EXPECT_THROW((void)apply_masks(Tensor<float>(Shape{8, 10}), masks), ShapeError);
}

TEST(Pipeline, ChunkOverrideAndShortInputCap) {
  auto cfg = tiny_config();
  EXPECT_EQ(effective_chunk_len(cfg, 31999), 252u);
  EXPECT_EQ(effective_chunk_len(cfg, 3), 2u);
  cfg.chunk_len = 250;
  EXPECT_EQ(effective_chunk_len(cfg, 31999), 250u);
  EXPECT_EQ(effective_chunk_len(cfg, 10), 20u);
  cfg.chunk_len = 7;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  auto cfg = tiny_config();
  cfg.chunk_len = 6;
  cfg.sample_rate = 16000;
  const auto model = SeparatorModel<float>::init(cfg, 9);
  const auto path = (std::filesystem::temp_directory_path() / "dpsep_tasnet_rt.ckpt").string();
  save_model(path, model);
  const auto loaded = load_model<float>(path);
  EXPECT_EQ(loaded.config.num_filters, 8u);
  EXPECT_EQ(loaded.config.chunk_len, 6u);
  EXPECT_EQ(loaded.config.sample_rate, 16000u);
  const auto a = model.named_parameters(), b = loaded.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_TRUE(std::equal(a[i].tensor.data().begin(), a[i].tensor.data().end(),
                           b[i].tensor.data().begin()));
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, LayoutIsHeaderThenData) {
  Tensor<double> a(Shape{2}, {1.5, -2.0});
  const auto bytes = encode_checkpoint<double>({{"a", a}}, {{"k", "v"}});
  EXPECT_EQ(bytes.substr(0, 4), "DPSC");
  const auto ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.meta("k"), "v");
  EXPECT_EQ(ck.entry("a").dtype, DType::float64);
  EXPECT_EQ(ck.entry("a").values, (std::vector<double>{1.5, -2.0}));
  // Last 16 bytes are the two raw doubles.
  double tail[2];
  std::memcpy(tail, bytes.data() + bytes.size() - 16, 16);
  EXPECT_EQ(tail[0], 1.5);
  EXPECT_EQ(tail[1], -2.0);
}

TEST(Checkpoint, RejectsCorruption) {
  Tensor<float> a(Shape{3}, 1.0f);
  auto bytes = encode_checkpoint<float>({{"a", a}}, {});
  EXPECT_THROW(decode_checkpoint("XXXX" + bytes.substr(4)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), FormatError);
  auto wrong_version = bytes;
  wrong_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(wrong_version), FormatError);
}

TEST(Checkpoint, ShapeMismatchIsReported) {
  auto cfg = tiny_config();
  const auto model = SeparatorModel<float>::init(cfg, 1);
  auto named = model.named_parameters();
  named[0].tensor = Tensor<float>(Shape{3, 3});
  const auto ck = decode_checkpoint(encode_checkpoint(named, cfg.to_metadata()));
  EXPECT_THROW((void)model_from_checkpoint<float>(ck), FormatError);
}

}  // namespace
}  // namespace dpsep
