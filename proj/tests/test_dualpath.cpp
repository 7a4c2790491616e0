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

#include <cmath>

#include "dpsep/dpsep.hpp"

namespace dpsep {
namespace {

template <typename T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

TEST(ChunkSize, RuleExamples) {
  EXPECT_EQ(choose_chunk_size(8).chunk_len, 4u);
  EXPECT_EQ(choose_chunk_size(8).hop, 2u);
  EXPECT_EQ(choose_chunk_size(3999).chunk_len, 90u);
  EXPECT_EQ(choose_chunk_size(31999).chunk_len, 252u);
  EXPECT_THROW(choose_chunk_size(3), ArgumentError);
}

TEST(ChunkSize, SublinearLengths) {
  for (std::size_t l = 16; l <= 1000000; l = l * 3 / 2 + 1) {
    const auto cs = choose_chunk_size(l);
    EXPECT_EQ(cs.chunk_len % 2, 0u);
    EXPECT_LE(double(std::max(cs.chunk_len, num_chunks_for(l, cs.chunk_len))), 3.0 * std::sqrt(double(l))) << l;
  }
}

TEST(Segment, HandEnumeration) {
  Tensor<float> w(Shape{1, 4}, {1, 2, 3, 4});
  const auto t = segment(w, 4, 2);
  ASSERT_EQ(t.data.shape(), (Shape{1, 4, 3}));
  // data is [N, K, S]; chunk s is column s.
  const std::vector<std::vector<float>> expected{{0, 0, 1, 2}, {1, 2, 3, 4}, {3, 4, 0, 0}};
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(t.data[k * 3 + s], expected[s][k]);
}

TEST(Segment, CountsAndErrors) {
  EXPECT_EQ(num_chunks_for(31999, 250), 257u);
  Tensor<float> w(Shape{2, 5});
  EXPECT_THROW((void)segment(w, 4, 1), ArgumentError);   // hop must be K/2
  EXPECT_THROW((void)segment(w, 5, 2), ArgumentError);   // odd K
  EXPECT_THROW((void)segment(w, 12, 6), ArgumentError);  // K > 2L
  for (std::size_t l : {2, 5, 17, 100}) {
    for (std::size_t k = 2; k <= 2 * l; k += 2) {
      const auto t = segment(Tensor<float>(Shape{1, l}), k, k / 2);
      EXPECT_EQ(t.num_chunks, (2 * l + k - 1) / k + 1);
    }
  }
}

TEST(Segment, EverySampleInExactlyTwoChunks) {
  const std::size_t l = 13, k = 6;
  std::vector<float> idx(l);
  for (std::size_t i = 0; i < l; ++i) idx[i] = float(i + 1);
  const auto t = segment(Tensor<float>(Shape{1, l}, idx), k, k / 2);
  std::vector<int> hits(l + 1, 0);
  for (float v : t.data.data()) hits[std::size_t(v)]++;
  for (std::size_t i = 1; i <= l; ++i) EXPECT_EQ(hits[i], 2) << i;
}

TEST(OverlapAdd, OnesAndZeros) {
  Tensor<float> w(Shape{1, 4});
  auto t = segment(w, 4, 2);
  for (float v : t.data.data()) EXPECT_EQ(v, 0.0f);
  t.data = Tensor<float>(t.data.shape(), 1.0f);
  EXPECT_EQ(values(overlap_add(t)), (std::vector<float>{1, 1, 1, 1}));
  t.data = Tensor<float>(t.data.shape(), 0.0f);
  EXPECT_EQ(values(overlap_add(t)), (std::vector<float>{0, 0, 0, 0}));
}

TEST(OverlapAdd, RoundTripRandom) {
  Rng rng(mix_seed(30));
  std::uniform_int_distribution<std::size_t> n_d(1, 5), l_d(2, 200), k_d(1, 30);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = n_d(rng), l = l_d(rng), k = 2 * std::min(k_d(rng), l);
    auto w = uniform<float>({n, l}, 1.0f, rng);
    const auto back = overlap_add(segment(w, k, k / 2));
    ASSERT_EQ(back.shape(), w.shape());
    for (std::size_t i = 0; i < w.numel(); ++i) EXPECT_NEAR(back[i], w[i], 1e-6);
  }
}

TEST(OverlapAdd, RejectsBadMetadata) {
  auto t = segment(Tensor<float>(Shape{1, 10}), 4, 2);
  t.num_chunks += 1;
  EXPECT_THROW((void)overlap_add(t), ShapeError);
}

TEST(LayerNorm, ConstantInputGivesBias) {
  Tensor<double> x(Shape{2, 3, 2}, 4.0);
  Tensor<double> z(Shape{2}, {2.0, 3.0});
  Tensor<double> r(Shape{2}, {0.5, -1.0});
  const auto y = global_layer_norm(x, z, r);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(y[i], i < 6 ? 0.5 : -1.0, 1e-12);
}

TEST(LayerNorm, MatchesFormula) {
  Rng rng(mix_seed(31));
  auto x = uniform<double>({2, 2, 2}, 3.0, rng);
  auto z = uniform<double>({2}, 1.0, rng);
  auto r = uniform<double>({2}, 1.0, rng);
  double mu = 0, var = 0;
  for (double v : x.data()) mu += v;
  mu /= 8;
  for (double v : x.data()) var += (v - mu) * (v - mu);
  var /= 8;
  const auto y = global_layer_norm(x, z, r, 1e-8);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_NEAR(y[i], (x[i] - mu) / std::sqrt(var + 1e-8) * z[i / 4] + r[i / 4], 1e-12);
  }
}

TEST(LayerNorm, NormalizesGlobally) {
  Rng rng(mix_seed(32));
  auto x = uniform<float>({4, 10, 7}, 50.0f, rng);
  const auto y = global_layer_norm(x, Tensor<float>(Shape{4}, 1.0f), Tensor<float>(Shape{4}));
  const auto st = layer_norm_stats(y.data(), 1e-8);
  EXPECT_LT(std::abs(st.mean), 1e-5);
  EXPECT_NEAR(st.variance, 1.0, 1e-3);
}

TEST(Passes, ZeroParamsGiveResidualPlusBias) {
  Rng rng(mix_seed(33));
  auto p = PathParams<float>::zeros(3, 2);
  p.ln_bias = Tensor<float>(Shape{3}, {0.1f, 0.2f, 0.3f});
  auto t = uniform<float>({3, 4, 5}, 1.0f, rng);
  for (auto pass : {intra_chunk_pass<float>, inter_chunk_pass<float>}) {
    const auto y = pass(t, p, 1e-8);
    for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_FLOAT_EQ(y[i], t[i] + 0.1f * float(1 + i / 20));
  }
}

// bilstm per chunk -> FC -> global LN -> residual, written out by hand.
Tensor<double> intra_oracle(const Tensor<double>& t, const PathParams<double>& p) {
  const std::size_t n = t.dim(0), k = t.dim(1), s = t.dim(2);
  const std::size_t h2 = p.fc_weight.dim(1);
  Tensor<double> proj(Shape{n, k, s});
  for (std::size_t c = 0; c < s; ++c) {
    Tensor<double> seq(Shape{n, k});
    for (std::size_t f = 0; f < n; ++f)
      for (std::size_t i = 0; i < k; ++i) seq.mutable_data()[f * k + i] = t[(f * k + i) * s + c];
    const auto y = bilstm(seq, p.lstm_fwd, p.lstm_bwd);  // [2H, K]
    for (std::size_t f = 0; f < n; ++f) {
      for (std::size_t i = 0; i < k; ++i) {
        double acc = p.fc_bias[f];
        for (std::size_t j = 0; j < h2; ++j) acc += p.fc_weight[f * h2 + j] * y[j * k + i];
        proj.mutable_data()[(f * k + i) * s + c] = acc;
      }
    }
  }
  return add(t, global_layer_norm(proj, p.ln_scale, p.ln_bias, 1e-8));
}

Tensor<double> swap_ks(const Tensor<double>& t) { return permute(t, {0, 2, 1}); }

TEST(Passes, IntraMatchesCompositionOracle) {
  Rng rng(mix_seed(34));
  auto p = PathParams<double>::init(3, 2, rng);
  for (std::size_t s : {1, 3}) {
    auto t = uniform<double>({3, 4, s}, 1.0, rng);
    const auto got = intra_chunk_pass(t, p);
    const auto want = intra_oracle(t, p);
    for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Passes, InterIsIntraOnSwappedAxes) {
  Rng rng(mix_seed(35));
  auto p = PathParams<double>::init(3, 2, rng);
  for (std::size_t s : {1, 2, 5}) {
    auto t = uniform<double>({3, 4, s}, 1.0, rng);
    const auto got = inter_chunk_pass(t, p);
    const auto want = swap_ks(intra_oracle(swap_ks(t), p));
    for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Passes, IntraIsEquivariantToChunkOrder) {
  Rng rng(mix_seed(36));
  auto p = PathParams<double>::init(2, 3, rng);
  auto t = uniform<double>({2, 5, 4}, 1.0, rng);
  const std::vector<std::size_t> order{2, 0, 3, 1};
  auto reorder = [&](const Tensor<double>& x) {
    Tensor<double> out(x.shape());
    for (std::size_t f = 0; f < 2; ++f)
      for (std::size_t k = 0; k < 5; ++k)
        for (std::size_t s = 0; s < 4; ++s)
          out.mutable_data()[(f * 5 + k) * 4 + s] = x[(f * 5 + k) * 4 + order[s]];
    return out;
  };
  const auto a = intra_chunk_pass(reorder(t), p);
  const auto b = reorder(intra_chunk_pass(t, p));
  // Equal up to the summation order of the global statistics.
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Stack, ComposesPassesAndKeepsShape) {
  Rng rng(mix_seed(37));
  std::vector<DprnnBlockParams<double>> blocks{DprnnBlockParams<double>::init(3, 2, rng),
                                               DprnnBlockParams<double>::init(3, 2, rng)};
  auto w = uniform<double>({3, 11}, 1.0, rng);
  const auto chunks = segment(w, 4, 2);
  const auto out = dprnn_stack(chunks, blocks);
  EXPECT_EQ(out.data.shape(), chunks.data.shape());
  auto manual = chunks.data;
  for (const auto& b : blocks) manual = inter_chunk_pass(intra_chunk_pass(manual, b.intra), b.inter);
  EXPECT_EQ(values(out.data), values(manual));
  EXPECT_THROW((void)dprnn_stack(chunks, {}), ArgumentError);
}

TEST(Stack, DefaultSizeShapePreserved) {
  Rng rng(mix_seed(38));
  std::vector<DprnnBlockParams<float>> blocks;
  for (int b = 0; b < 6; ++b) blocks.push_back(DprnnBlockParams<float>::init(64, 8, rng));
  auto w = uniform<float>({64, 30}, 1.0f, rng);
  const auto chunks = segment(w, 8, 4);
  EXPECT_EQ(dprnn_stack(chunks, blocks).data.shape(), chunks.data.shape());
}

TEST(Stack, GradCheckSpecShape) {
  Rng rng(mix_seed(39));
  std::vector<DprnnBlockParams<double>> blocks{DprnnBlockParams<double>::init(4, 3, rng)};
  auto t = uniform<double>({4, 6, 5}, 1.0, rng);
  auto w = uniform<double>({4, 6, 5}, 1.0, rng);
  std::vector<Tensor<double>> inputs{t};
  for (const auto& b : blocks) {
    std::vector<NamedTensor<double>> named;
    b.append_named("b", named);
    for (auto& nt : named) inputs.push_back(nt.tensor);
  }
  const auto r = check_gradients(
      "stack", [&] { return sum(mul(dprnn_stack(ChunkTensor<double>{t, 6, 3, 5, 12}, blocks).data, w)); },
      inputs);
  EXPECT_TRUE(r.passed) << format_report(r);
}

}  // namespace
}  // namespace dpsep
