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
#include <complex>
#include <fstream>
#include <functional>
#include <filesystem>
#include <numbers>

#include "dpsep/dpsep.hpp"

namespace dpsep {
namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

TEST(Wav, RoundTripsEveryPcmValue) {
  std::vector<float> all;
  for (int v = -32768; v <= 32767; ++v) all.push_back(float(v) / 32768.0f);
  const auto bytes = encode_wav(all, 8000);
  const auto wav = decode_wav(bytes);
  EXPECT_EQ(wav.sample_rate, 8000u);
  ASSERT_EQ(wav.samples.numel(), all.size());
  for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(wav.samples[i], all[i]) << i;
}

TEST(Wav, HeaderFieldsAtFixedOffsets) {
  std::vector<float> x(10, 0.0f);
  const auto b = encode_wav(x, 8000);
  EXPECT_EQ(b.size(), 44u + 20u);
  EXPECT_EQ(b.substr(0, 4), "RIFF");
  EXPECT_EQ(b.substr(8, 8), "WAVEfmt ");
  EXPECT_EQ(detail::read_u32(b, 24), 8000u);
  EXPECT_EQ(detail::read_u16(b, 34), 16u);
  EXPECT_EQ(b.substr(36, 4), "data");
  EXPECT_EQ(detail::read_u32(b, 40), 20u);
}

TEST(Wav, FileRoundTripAndClipping) {
  const auto path = (std::filesystem::temp_directory_path() / "dpsep_wav_rt.wav").string();
  std::vector<float> x{0.5f, -0.25f, 2.0f, -2.0f};
  write_wav(path, x, 16000);
  const auto wav = read_wav(path);
  EXPECT_EQ(wav.sample_rate, 16000u);
  EXPECT_EQ(wav.samples[0], 0.5f);
  EXPECT_EQ(wav.samples[1], -0.25f);
  EXPECT_EQ(wav.samples[2], 32767.0f / 32768.0f);
  EXPECT_EQ(wav.samples[3], -1.0f);
  std::filesystem::remove(path);
}

TEST(Wav, ErrorsNameTheProblem) {
  std::vector<float> x(4, 0.0f);
  const auto good = encode_wav(x, 8000);
  EXPECT_NE(error_of([&] { decode_wav("RIFX" + good.substr(4)); }).find("magic"),
            std::string::npos);
  auto stereo = good;
  stereo[22] = 2;
  EXPECT_NE(error_of([&] { decode_wav(stereo); }).find("channels"), std::string::npos);
  auto bits = good;
  bits[34] = 8;
  EXPECT_NE(error_of([&] { decode_wav(bits); }).find("bits_per_sample"), std::string::npos);
  auto fmt = good;
  fmt[20] = 3;
  EXPECT_NE(error_of([&] { decode_wav(fmt); }).find("audio_format"), std::string::npos);
  EXPECT_THROW(decode_wav(good.substr(0, good.size() - 2)), FormatError);
  EXPECT_THROW(read_wav("/nonexistent/dir/x.wav"), FormatError);
}

TEST(Synth, DeterministicAndUnitRms) {
  for (auto kind : {SourceKind::harmonic, SourceKind::chirp, SourceKind::modulated_noise}) {
    const auto a = synth_source(kind, 0.5, 8000, 11);
    const auto b = synth_source(kind, 0.5, 8000, 11);
    const auto c = synth_source(kind, 0.5, 8000, 12);
    EXPECT_EQ(a.shape(), (Shape{1, 4000}));
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
    EXPECT_NEAR(std::sqrt(energy(a.data()) / 4000.0), 1.0, 1e-4) << source_kind_name(kind);
  }
}

double band_fraction(const Tensor<float>& x, double lo_hz, double hi_hz, double fs) {
  const std::size_t n = x.numel();
  double inside = 0, total = 0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    std::complex<double> acc = 0;
    const double w = -2 * std::numbers::pi * double(k) / double(n);
    for (std::size_t i = 0; i < n; ++i) acc += double(x[i]) * std::polar(1.0, w * double(i));
    const double p = std::norm(acc), f = double(k) * fs / double(n);
    total += p;
    if (f >= lo_hz && f <= hi_hz) inside += p;
  }
  return inside / total;
}

TEST(Synth, HarmonicEnergyStaysLow) {
  const auto x = synth_harmonic(220.0, 0.25, 8000, 3);
  EXPECT_GE(band_fraction(x, 0.0, 2000.0, 8000.0), 0.95);
}

TEST(Synth, SourceFamiliesOccupyTheirBands) {
  const auto chirp = synth_source(SourceKind::chirp, 0.25, 8000, 4);
  EXPECT_GE(band_fraction(chirp, 2400.0, 4000.0, 8000.0), 0.9);
  const auto noise = synth_source(SourceKind::modulated_noise, 0.25, 8000, 5);
  EXPECT_GE(band_fraction(noise, 1200.0, 3000.0, 8000.0), 0.7);
}

TEST(Synth, RejectsBadDuration) {
  EXPECT_THROW(synth_source(SourceKind::chirp, 0.0, 8000, 1), ArgumentError);
  EXPECT_THROW(synth_source(SourceKind::chirp, -1.0, 8000, 1), ArgumentError);
}

TEST(Mix, ZeroDbWithEqualEnergyKeepsScale) {
  const auto a = synth_source(SourceKind::harmonic, 0.1, 8000, 1);
  const auto b = synth_source(SourceKind::chirp, 0.1, 8000, 2);
  const auto ex = mix_at_snr(a, b, 0.0);
  EXPECT_NEAR(ex.source2_gain, 1.0, 1e-4);
}

TEST(Mix, PlusFiveDbScalesSecondSource) {
  Tensor<float> a(Shape{1, 4}, {1, 1, 1, 1});
  Tensor<float> b(Shape{1, 4}, {1, -1, 1, -1});
  const auto ex = mix_at_snr(a, b, 5.0);
  EXPECT_NEAR(ex.source2_gain, std::pow(10.0, -0.25), 1e-12);
  EXPECT_NEAR(energy(a.data()) / energy(ex.sources.data().subspan(4)), std::pow(10.0, 0.5), 1e-5);
}

TEST(Mix, MixtureIsExactSumAndSnrIsMeasured) {
  for (double snr : {-5.0, -2.5, 0.0, 3.0, 5.0}) {
    const auto a = synth_source(SourceKind::modulated_noise, 0.2, 8000, 7);
    const auto b = synth_source(SourceKind::harmonic, 0.2, 8000, 8);
    const auto ex = mix_at_snr(a, b, snr);
    const std::size_t n = ex.num_samples();
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_EQ(ex.mixture[i], ex.sources[i] + ex.sources[n + i]);
    }
    const double measured = 10 * std::log10(energy(ex.sources.data().first(n)) /
                                            energy(ex.sources.data().subspan(n)));
    EXPECT_NEAR(measured, snr, 1e-4);
  }
}

TEST(Mix, SilentOrMismatchedInputsRejected) {
  Tensor<float> a(Shape{1, 4}, 1.0f), z(Shape{1, 4}), shorter(Shape{1, 3}, 1.0f);
  EXPECT_THROW(mix_at_snr(a, z, 0.0), ArgumentError);
  EXPECT_THROW(mix_at_snr(z, a, 0.0), ArgumentError);
  EXPECT_THROW(mix_at_snr(a, shorter, 0.0), ShapeError);
}

TEST(Manifest, ParsesRecordsAndSkipsComments) {
  const auto m = parse_manifest(
      "# comment\n"
      "\n"
      "train\tsynth:harmonic:1\tsynth:chirp:2\t0\n"
      "valid\tsynth:modulated-noise:3:1.5\twav:a.wav\t-2.5\n",
      "/data");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.records[0].split, Split::train);
  EXPECT_EQ(m.records[0].second.kind, SourceKind::chirp);
  EXPECT_EQ(m.records[1].first.seconds, 1.5);
  EXPECT_TRUE(m.records[1].second.is_wav);
  EXPECT_EQ(m.records[1].second.path, "/data/a.wav");
  EXPECT_EQ(m.records[1].line, 4u);
  EXPECT_EQ(m.only(Split::valid).size(), 1u);
}

TEST(Manifest, ErrorsCarryLineNumbers) {
  const char* bad[] = {
      "train\tsynth:harmonic:1\t0\n",
      "dev\tsynth:harmonic:1\tsynth:chirp:2\t0\n",
      "train\tsynth:whistle:1\tsynth:chirp:2\t0\n",
      "train\tsynth:harmonic:x\tsynth:chirp:2\t0\n",
      "train\tsynth:harmonic:1\tsynth:chirp:2\t9\n",
      "train\tmp3:a\tsynth:chirp:2\t0\n",
  };
  for (const char* text : bad) {
    const auto msg = error_of([&] { parse_manifest(std::string("# x\n") + text); });
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  }
}

TEST(Dataset, LongSourcesAreSegmentedWithPadding) {
  const auto m = parse_manifest("train\tsynth:harmonic:1:10\tsynth:chirp:2:10\t0\n");
  const auto set = make_dataset(m, 4.0, 8000, 0);
  ASSERT_EQ(set.size(), 3u);
  EXPECT_EQ(set[0].valid_samples, 32000u);
  EXPECT_EQ(set[2].valid_samples, 16000u);
  for (std::size_t i = 16000; i < 32000; ++i) ASSERT_EQ(set[2].mixture[i], 0.0f);
  for (const auto& ex : set) EXPECT_EQ(ex.num_samples(), 32000u);
}

TEST(Dataset, EmptyManifestGivesEmptySet) {
  EXPECT_TRUE(make_dataset(Manifest{}, 4.0, 8000, 0).empty());
}

TEST(Dataset, PureFunctionOfManifestAndSeed) {
  const auto m = parse_manifest(
      "train\tsynth:harmonic:1\tsynth:chirp:2\t1\n"
      "train\tsynth:chirp:3\tsynth:modulated-noise:4\t-1\n"
      "valid\tsynth:harmonic:5\tsynth:harmonic:6\t4\n");
  const auto a = make_dataset(m, 0.25, 8000, 9);
  const auto b = make_dataset(m, 0.25, 8000, 9, 3);
  const auto c = make_dataset(m, 0.25, 8000, 10);
  ASSERT_EQ(a.size(), 3u);
  ASSERT_EQ(b.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(std::equal(a[i].mixture.data().begin(), a[i].mixture.data().end(),
                           b[i].mixture.data().begin()));
    EXPECT_EQ(a[i].seed, b[i].seed);
  }
  EXPECT_FALSE(std::equal(a[0].mixture.data().begin(), a[0].mixture.data().end(),
                          c[0].mixture.data().begin()));
}

TEST(Dataset, WavSourcesResolveAndRateIsChecked) {
  const auto dir = std::filesystem::temp_directory_path() / "dpsep_ds_wav";
  std::filesystem::create_directories(dir);
  const auto s = synth_source(SourceKind::harmonic, 0.1, 8000, 1);
  write_wav((dir / "a.wav").string(), s.data(), 8000);
  write_wav((dir / "b.wav").string(), s.data(), 16000);
  {
    std::ofstream f(dir / "ok.tsv");
    f << "test\twav:a.wav\tsynth:chirp:1:0.1\t0\n";
  }
  {
    std::ofstream f(dir / "bad.tsv");
    f << "test\twav:b.wav\tsynth:chirp:1:0.1\t0\n";
  }
  EXPECT_EQ(make_dataset(load_manifest((dir / "ok.tsv").string()), 0.1, 8000, 0).size(), 1u);
  const auto msg = error_of([&] { make_dataset(load_manifest((dir / "bad.tsv").string()), 0.1, 8000, 0); });
  EXPECT_NE(msg.find("line 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("b.wav"), std::string::npos) << msg;
  std::filesystem::remove_all(dir);
}

TEST(Dataset, ReverberationIsReportedUnsupported) {
  const auto m = parse_manifest("train\tsynth:harmonic:1\tsynth:chirp:2\t0\trir:room1\n");
  EXPECT_THROW(make_dataset(m, 0.1, 8000, 0), FormatError);
}

}  // namespace
}  // namespace dpsep
