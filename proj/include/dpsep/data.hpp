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

// Synthetic sources, SNR-controlled two-source mixing, manifests and
// fixed-length dataset segmentation.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dpsep/init.hpp"
#include "dpsep/wav.hpp"

namespace dpsep {

enum class SourceKind { harmonic, chirp, modulated_noise };

inline const char* source_kind_name(SourceKind k) {
  switch (k) {
    case SourceKind::harmonic: return "harmonic";
    case SourceKind::chirp: return "chirp";
    case SourceKind::modulated_noise: return "modulated-noise";
  }
  return "?";
}

inline SourceKind parse_source_kind(const std::string& s) {
  if (s == "harmonic") return SourceKind::harmonic;
  if (s == "chirp") return SourceKind::chirp;
  if (s == "modulated-noise") return SourceKind::modulated_noise;
  throw FormatError("unknown synthetic source kind '" + s + "'");
}

namespace detail {

inline std::size_t seconds_to_samples(double seconds, std::size_t sample_rate) {
  return std::size_t(std::llround(seconds * double(sample_rate)));
}

inline void normalize_rms(std::vector<double>& x) {
  double e = 0;
  for (double v : x) e += v * v;
  const double rms = std::sqrt(e / double(x.size()));
  if (rms > 0) {
    for (double& v : x) v /= rms;
  }
}

inline Tensor<float> to_tensor(const std::vector<double>& x) {
  std::vector<float> f(x.begin(), x.end());
  const std::size_t n = f.size();
  return Tensor<float>(Shape{1, n}, std::move(f));
}

inline std::size_t check_duration(double duration_s, std::size_t sample_rate) {
  if (!(duration_s > 0) || sample_rate == 0) {
    throw ArgumentError("synthetic source needs positive duration and sample rate");
  }
  const std::size_t n = seconds_to_samples(duration_s, sample_rate);
  if (n == 0) throw ArgumentError("synthetic source shorter than one sample");
  return n;
}

}  // namespace detail

// Voiced-speech stand-in: harmonics of f0 (amplitude 1/k) below 1.8 kHz with
// slight vibrato and a syllabic envelope. Unit RMS.
inline Tensor<float> synth_harmonic(double f0, double duration_s, std::size_t sample_rate,
                                    std::uint64_t seed) {
  const std::size_t n = detail::check_duration(duration_s, sample_rate);
  Rng rng(mix_seed(seed, 1));
  std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
  const double fs = double(sample_rate);
  const double ceiling = std::min(1800.0, 0.45 * fs);
  std::vector<double> phases;
  for (std::size_t k = 1; double(k) * f0 * 1.02 < ceiling; ++k) phases.push_back(phase(rng));
  if (phases.empty()) phases.push_back(phase(rng));
  const double vib_phase = phase(rng), env_phase = phase(rng);
  std::vector<double> x(n);
  double theta = 0;  // running phase of the fundamental
  for (std::size_t i = 0; i < n; ++i) {
    const double t = double(i) / fs;
    const double f = f0 * (1.0 + 0.01 * std::sin(2 * std::numbers::pi * 5.0 * t + vib_phase));
    theta += 2 * std::numbers::pi * f / fs;
    double v = 0;
    for (std::size_t k = 0; k < phases.size(); ++k) {
      v += std::sin(double(k + 1) * theta + phases[k]) / double(k + 1);
    }
    const double env = 0.65 + 0.35 * std::sin(2 * std::numbers::pi * 3.0 * t + env_phase);
    x[i] = v * env;
  }
  detail::normalize_rms(x);
  return detail::to_tensor(x);
}

// Deterministic given the seed; unit RMS. harmonic: f0 in [100, 250] Hz,
// energy below 1.8 kHz. chirp: linear sweep inside [2.6, 3.8] kHz (scaled to
// the Nyquist band for low rates). modulated-noise: Gaussian noise through a
// resonator centred in [1.9, 2.3] kHz with 2-6 Hz amplitude modulation.
inline Tensor<float> synth_source(SourceKind kind, double duration_s,
                                  std::size_t sample_rate, std::uint64_t seed) {
  const std::size_t n = detail::check_duration(duration_s, sample_rate);
  Rng rng(mix_seed(seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double fs = double(sample_rate);
  const double band = std::min(1.0, fs / 8000.0);  // scale bands for low rates
  const double two_pi = 2 * std::numbers::pi;
  switch (kind) {
    case SourceKind::harmonic:
      return synth_harmonic(100.0 + 150.0 * unit(rng), duration_s, sample_rate, rng());
    case SourceKind::chirp: {
      double fa = band * (2600.0 + 1200.0 * unit(rng));
      double fb = band * (2600.0 + 1200.0 * unit(rng));
      const double env_rate = 2.0 + 3.0 * unit(rng), env_phase = two_pi * unit(rng);
      const double phase0 = two_pi * unit(rng);
      std::vector<double> x(n);
      const double dur = double(n) / fs;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = double(i) / fs;
        const double ph = phase0 + two_pi * (fa * t + (fb - fa) * t * t / (2 * dur));
        x[i] = std::sin(ph) * (0.7 + 0.3 * std::sin(two_pi * env_rate * t + env_phase));
      }
      detail::normalize_rms(x);
      return detail::to_tensor(x);
    }
    case SourceKind::modulated_noise: {
      const double fc = band * (1900.0 + 400.0 * unit(rng));
      const double q = fc / (band * 300.0);
      const double w0 = two_pi * fc / fs;
      const double alpha = std::sin(w0) / (2 * q);
      const double a0 = 1 + alpha;
      const double b0 = alpha / a0, b2 = -alpha / a0;
      const double a1 = -2 * std::cos(w0) / a0, a2 = (1 - alpha) / a0;
      const double mod_rate = 2.0 + 4.0 * unit(rng), mod_phase = two_pi * unit(rng);
      std::normal_distribution<double> noise(0.0, 1.0);
      std::vector<double> x(n);
      double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double in = noise(rng);
        const double y = b0 * in + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = in;
        y2 = y1;
        y1 = y;
        const double t = double(i) / fs;
        x[i] = y * (0.6 + 0.4 * std::sin(two_pi * mod_rate * t + mod_phase));
      }
      detail::normalize_rms(x);
      return detail::to_tensor(x);
    }
  }
  throw ArgumentError("unknown source kind");
}

struct MixtureExample {
  Tensor<float> mixture;  // [1, T]
  Tensor<float> sources;  // [C, T], post-scaling; mixture == sum of rows
  std::size_t sample_rate = 8000;
  double snr_db = 0;
  std::uint64_t seed = 0;
  std::size_t valid_samples = 0;  // samples past this index are zero padding
  double source2_gain = 1;        // scale applied to the second source

  std::size_t num_samples() const { return mixture.numel(); }
  std::size_t num_sources() const { return sources.dim(0); }
};

inline double energy(std::span<const float> x) {
  double e = 0;
  for (float v : x) e += double(v) * double(v);
  return e;
}

// Rescales s2 so that 10*log10(E(s1) / E(s2')) == snr_db and mixes.
inline MixtureExample mix_at_snr(const Tensor<float>& s1, const Tensor<float>& s2,
                                 double snr_db) {
  if (s1.numel() != s2.numel()) {
    throw ShapeError(detail::concat("mix_at_snr: lengths differ (", s1.numel(), " vs ",
                                    s2.numel(), ")"));
  }
  const double e1 = energy(s1.data());
  const double e2 = energy(s2.data());
  if (e1 == 0 || e2 == 0) throw ArgumentError("mix_at_snr: silent source");
  const double gain = std::sqrt(e1 / (e2 * std::pow(10.0, snr_db / 10.0)));
  const std::size_t n = s1.numel();
  std::vector<float> srcs(2 * n), mix(n);
  auto a = s1.data();
  auto b = s2.data();
  for (std::size_t i = 0; i < n; ++i) {
    srcs[i] = a[i];
    srcs[n + i] = float(double(b[i]) * gain);
    mix[i] = srcs[i] + srcs[n + i];
  }
  MixtureExample ex;
  ex.mixture = Tensor<float>(Shape{1, n}, std::move(mix));
  ex.sources = Tensor<float>(Shape{2, n}, std::move(srcs));
  ex.snr_db = snr_db;
  ex.valid_samples = n;
  ex.source2_gain = gain;
  return ex;
}

// ---------------------------------------------------------------------------
// Manifests: one record per line,
//   split <TAB> spec1 <TAB> spec2 <TAB> snr_db [<TAB> rir:<...>]
// where spec is wav:<path> or synth:<kind>:<seed>[:<seconds>]. Blank lines and
// lines starting with '#' are ignored. Relative WAV paths resolve against the
// manifest's directory.

enum class Split { train, valid, test };

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw FormatError("unknown split tag '" + s + "'");
}

struct SourceSpec {
  bool is_wav = false;
  std::string path;
  SourceKind kind = SourceKind::harmonic;
  std::uint64_t seed = 0;
  double seconds = 0;  // 0: use the dataset segment length
  std::string text;
};

struct ManifestRecord {
  Split split = Split::train;
  SourceSpec first;
  SourceSpec second;
  double snr_db = 0;
  std::string rir;  // reserved; not supported yet
  std::size_t line = 0;
  std::string text;
};

struct Manifest {
  std::vector<ManifestRecord> records;

  Manifest only(Split split) const {
    Manifest m;
    for (const auto& r : records) {
      if (r.split == split) m.records.push_back(r);
    }
    return m;
  }
  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
};

namespace detail {

inline std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

inline double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw FormatError("bad " + what + " '" + s + "'");
  return v;
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError("bad " + what + " '" + s + "'");
  }
  return std::stoull(s);
}

inline SourceSpec parse_source_spec(const std::string& text, const std::string& base_dir) {
  SourceSpec spec;
  spec.text = text;
  if (text.rfind("wav:", 0) == 0) {
    spec.is_wav = true;
    std::filesystem::path p(text.substr(4));
    if (p.empty()) throw FormatError("empty WAV path in '" + text + "'");
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    spec.path = p.string();
    return spec;
  }
  if (text.rfind("synth:", 0) == 0) {
    const auto parts = split_on(text, ':');
    if (parts.size() != 3 && parts.size() != 4) {
      throw FormatError("synthetic spec must be synth:<kind>:<seed>[:<seconds>], got '" +
                        text + "'");
    }
    spec.kind = parse_source_kind(parts[1]);
    spec.seed = parse_u64(parts[2], "synthetic seed");
    if (parts.size() == 4) {
      spec.seconds = parse_double(parts[3], "synthetic duration");
      if (!(spec.seconds > 0)) throw FormatError("synthetic duration must be > 0");
    }
    return spec;
  }
  throw FormatError("source spec must start with wav: or synth:, got '" + text + "'");
}

}  // namespace detail

inline Manifest parse_manifest(const std::string& text, const std::string& base_dir = "") {
  Manifest m;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    try {
      const auto cols = detail::split_on(line, '\t');
      if (cols.size() != 4 && cols.size() != 5) {
        throw FormatError("expected 4 tab-separated fields, got " +
                          std::to_string(cols.size()));
      }
      ManifestRecord r;
      r.line = line_no;
      r.text = line;
      r.split = parse_split(cols[0]);
      r.first = detail::parse_source_spec(cols[1], base_dir);
      r.second = detail::parse_source_spec(cols[2], base_dir);
      r.snr_db = detail::parse_double(cols[3], "snr_db");
      if (r.snr_db < -5.0 || r.snr_db > 5.0) {
        throw FormatError("snr_db " + cols[3] + " outside [-5, 5]");
      }
      if (cols.size() == 5) {
        if (cols[4].rfind("rir:", 0) != 0) throw FormatError("fifth field must be rir:<...>");
        r.rir = cols[4].substr(4);
      }
      m.records.push_back(std::move(r));
    } catch (const FormatError& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return m;
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open manifest: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_manifest(ss.str(), std::filesystem::path(path).parent_path().string());
}

namespace detail {

inline Tensor<float> load_source(const SourceSpec& spec, double default_seconds,
                                 std::size_t sample_rate, std::uint64_t dataset_seed) {
  if (spec.is_wav) {
    auto wav = read_wav(spec.path);
    if (wav.sample_rate != sample_rate) {
      throw FormatError(spec.path + ": sample rate " + std::to_string(wav.sample_rate) +
                        " != dataset rate " + std::to_string(sample_rate));
    }
    return wav.samples;
  }
  const double seconds = spec.seconds > 0 ? spec.seconds : default_seconds;
  return synth_source(spec.kind, seconds, sample_rate, mix_seed(dataset_seed, spec.seed));
}

inline std::vector<MixtureExample> examples_for_record(const ManifestRecord& r,
                                                       std::size_t index,
                                                       double segment_seconds,
                                                       std::size_t sample_rate,
                                                       std::uint64_t seed) {
  if (!r.rir.empty()) {
    throw FormatError("room impulse responses are not supported (rir:" + r.rir + ")");
  }
  auto s1 = load_source(r.first, segment_seconds, sample_rate, seed);
  auto s2 = load_source(r.second, segment_seconds, sample_rate, seed);
  const std::size_t len = std::min(s1.numel(), s2.numel());
  const std::size_t seg = seconds_to_samples(segment_seconds, sample_rate);
  std::vector<MixtureExample> out;
  for (std::size_t start = 0, j = 0; start < len; start += seg, ++j) {
    const std::size_t valid = std::min(seg, len - start);
    std::vector<float> a(seg, 0.0f), b(seg, 0.0f);
    std::copy_n(s1.data().begin() + start, valid, a.begin());
    std::copy_n(s2.data().begin() + start, valid, b.begin());
    auto ex = mix_at_snr(Tensor<float>(Shape{1, seg}, std::move(a)),
                         Tensor<float>(Shape{1, seg}, std::move(b)), r.snr_db);
    ex.sample_rate = sample_rate;
    ex.seed = mix_seed(seed, (std::uint64_t(index) << 20) + j);
    ex.valid_samples = valid;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace detail

// Loads or synthesizes every record's sources, cuts them into
// segment_seconds pieces (the last one zero-padded, with valid_samples
// marking the real part) and mixes each piece at the record's SNR. A pure
// function of (manifest, seed); `threads` only changes the wall time.
inline std::vector<MixtureExample> make_dataset(const Manifest& manifest,
                                                double segment_seconds,
                                                std::size_t sample_rate,
                                                std::uint64_t seed,
                                                std::size_t threads = 1) {
  if (!(segment_seconds > 0) || sample_rate == 0) {
    throw ArgumentError("make_dataset: segment length and sample rate must be positive");
  }
  if (detail::seconds_to_samples(segment_seconds, sample_rate) == 0) {
    throw ArgumentError("make_dataset: segment shorter than one sample");
  }
  const std::size_t n = manifest.records.size();
  std::vector<std::vector<MixtureExample>> per_record(n);
  std::vector<std::string> errors(n);
  auto work = [&](std::size_t i) {
    const auto& r = manifest.records[i];
    try {
      per_record[i] = detail::examples_for_record(r, i, segment_seconds, sample_rate, seed);
    } catch (const Error& e) {
      errors[i] = "manifest record at line " + std::to_string(r.line) + " (" + r.text +
                  "): " + e.what();
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += threads) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  std::vector<MixtureExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw FormatError(errors[i]);
    for (auto& ex : per_record[i]) out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace dpsep
