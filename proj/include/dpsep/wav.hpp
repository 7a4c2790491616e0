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

// RIFF/WAVE PCM 16-bit mono I/O. Samples map to [-1, 1) by division by 32768.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dpsep/tensor.hpp"

namespace dpsep {

struct WavData {
  Tensor<float> samples;  // [1, T]
  std::size_t sample_rate = 0;
};

namespace detail {

inline std::uint32_t read_u32(const std::string& b, std::size_t pos) {
  return std::uint32_t(static_cast<unsigned char>(b[pos])) |
         std::uint32_t(static_cast<unsigned char>(b[pos + 1])) << 8 |
         std::uint32_t(static_cast<unsigned char>(b[pos + 2])) << 16 |
         std::uint32_t(static_cast<unsigned char>(b[pos + 3])) << 24;
}

inline std::uint16_t read_u16(const std::string& b, std::size_t pos) {
  return std::uint16_t(std::uint16_t(static_cast<unsigned char>(b[pos])) |
                       std::uint16_t(static_cast<unsigned char>(b[pos + 1])) << 8);
}

inline void write_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(char((v >> (8 * i)) & 0xff));
}

inline void write_u16(std::string& b, std::uint16_t v) {
  b.push_back(char(v & 0xff));
  b.push_back(char((v >> 8) & 0xff));
}

}  // namespace detail

inline std::int16_t float_to_pcm16(float v) {
  const double scaled = std::nearbyint(double(v) * 32768.0);
  return std::int16_t(std::clamp(scaled, -32768.0, 32767.0));
}

inline WavData decode_wav(const std::string& bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 ||
      bytes.compare(8, 4, "WAVE") != 0) {
    throw FormatError(origin + ": not a RIFF/WAVE file (bad magic)");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::size_t rate = 0;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t size = detail::read_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      throw FormatError(origin + ": chunk '" + id + "' runs past end of file");
    }
    if (id == "fmt ") {
      if (size < 16) throw FormatError(origin + ": fmt chunk too small");
      const auto format = detail::read_u16(bytes, body);
      const auto channels = detail::read_u16(bytes, body + 2);
      rate = detail::read_u32(bytes, body + 4);
      const auto bits = detail::read_u16(bytes, body + 14);
      if (format != 1) {
        throw FormatError(origin + ": unsupported audio format " + std::to_string(format) +
                          " (audio_format must be 1, PCM)");
      }
      if (channels != 1) {
        throw FormatError(origin + ": unsupported channel count " +
                          std::to_string(channels) + " (channels must be 1)");
      }
      if (bits != 16) {
        throw FormatError(origin + ": unsupported bits_per_sample " +
                          std::to_string(bits) + " (must be 16)");
      }
      if (rate == 0) throw FormatError(origin + ": sample_rate is 0");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(origin + ": data chunk before fmt chunk");
      const std::size_t count = size / 2;
      if (count == 0) throw FormatError(origin + ": no samples");
      std::vector<float> samples(count);
      for (std::size_t i = 0; i < count; ++i) {
        const auto raw = std::int16_t(detail::read_u16(bytes, body + 2 * i));
        samples[i] = float(raw) / 32768.0f;
      }
      return {Tensor<float>(Shape{1, count}, std::move(samples)), rate};
    }
    pos = body + size + (size & 1);  // chunks are word aligned
  }
  throw FormatError(origin + ": no data chunk");
}

inline std::string encode_wav(std::span<const float> samples, std::size_t sample_rate) {
  const auto data_bytes = std::uint32_t(samples.size() * 2);
  std::string b;
  b.reserve(44 + data_bytes);
  b += "RIFF";
  detail::write_u32(b, 36 + data_bytes);
  b += "WAVEfmt ";
  detail::write_u32(b, 16);
  detail::write_u16(b, 1);
  detail::write_u16(b, 1);
  detail::write_u32(b, std::uint32_t(sample_rate));
  detail::write_u32(b, std::uint32_t(sample_rate * 2));
  detail::write_u16(b, 2);
  detail::write_u16(b, 16);
  b += "data";
  detail::write_u32(b, data_bytes);
  for (float v : samples) detail::write_u16(b, std::uint16_t(float_to_pcm16(v)));
  return b;
}

inline WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open WAV file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_wav(ss.str(), path);
}

// Values outside [-1, 1) are clipped to the int16 range.
inline void write_wav(const std::string& path, std::span<const float> samples,
                      std::size_t sample_rate) {
  const auto bytes = encode_wav(samples, sample_rate);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open WAV file for writing: " + path);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw FormatError("failed writing WAV file: " + path);
}

}  // namespace dpsep
