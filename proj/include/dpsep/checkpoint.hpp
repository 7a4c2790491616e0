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

// Checkpoint files. All integers and scalars are little-endian.
//
//   magic        4 bytes  "DPSC"
//   version      u32      1
//   meta_bytes   u32      length of the metadata text that follows
//   metadata     text     "key=value\n" lines
//   count        u32      number of tensor entries
//   entry*       u16 name length, name bytes, u8 dtype (0 float32, 1 float64),
//                u8 rank, rank x u64 extents
//   data         raw scalars of every entry, concatenated in header order

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dpsep/tensor.hpp"

namespace dpsep {

inline constexpr char kCheckpointMagic[4] = {'D', 'P', 'S', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::float32;
  Shape shape;
  std::vector<double> values;  // widened; float32 entries round-trip exactly

  template <typename T>
  Tensor<T> as_tensor() const {
    std::vector<T> data(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) data[i] = T(values[i]);
    return Tensor<T>(shape, std::move(data));
  }
};

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry& entry(const std::string& name) const {
    for (const auto& e : entries) {
      if (e.name == name) return e;
    }
    throw FormatError("checkpoint has no tensor named '" + name + "'");
  }
  const std::string& meta(const std::string& key) const {
    auto it = metadata.find(key);
    if (it == metadata.end()) throw FormatError("checkpoint metadata lacks '" + key + "'");
    return it->second;
  }
};

namespace detail {

template <typename U>
void put_le(std::string& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(char((value >> (8 * i)) & 0xff));
  }
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw FormatError("checkpoint truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= U(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(U);
  return value;
}

}  // namespace detail

template <typename T>
std::string encode_checkpoint(const std::vector<NamedTensor<T>>& tensors,
                              const std::map<std::string, std::string>& metadata) {
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  std::string meta;
  for (const auto& [k, v] : metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError("metadata key/value contains a reserved character: " + k);
    }
    meta += k + "=" + v + "\n";
  }
  detail::put_le<std::uint32_t>(out, std::uint32_t(meta.size()));
  out += meta;
  detail::put_le<std::uint32_t>(out, std::uint32_t(tensors.size()));
  for (const auto& nt : tensors) {
    detail::put_le<std::uint16_t>(out, std::uint16_t(nt.name.size()));
    out += nt.name;
    out.push_back(char(dtype_of<T>()));
    out.push_back(char(nt.tensor.rank()));
    for (auto d : nt.tensor.shape()) detail::put_le<std::uint64_t>(out, d);
  }
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (const auto& nt : tensors) {
    for (T v : nt.tensor.data()) detail::put_le<Bits>(out, std::bit_cast<Bits>(v));
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto meta_len = detail::get_le<std::uint32_t>(bytes, pos);
  if (pos + meta_len > bytes.size()) throw FormatError("checkpoint truncated");
  std::istringstream meta(bytes.substr(pos, meta_len));
  pos += meta_len;
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad checkpoint metadata line: " + line);
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = detail::get_le<std::uint32_t>(bytes, pos);
  ckpt.entries.resize(count);
  for (auto& e : ckpt.entries) {
    const auto name_len = detail::get_le<std::uint16_t>(bytes, pos);
    if (pos + name_len + 2 > bytes.size()) throw FormatError("checkpoint truncated");
    e.name = bytes.substr(pos, name_len);
    pos += name_len;
    const auto dtype = static_cast<unsigned char>(bytes[pos++]);
    if (dtype > 1) throw FormatError("unknown dtype code in entry " + e.name);
    e.dtype = DType(dtype);
    const auto rank = static_cast<unsigned char>(bytes[pos++]);
    if (rank == 0) throw FormatError("zero-rank entry " + e.name);
    for (unsigned r = 0; r < rank; ++r) {
      const auto d = detail::get_le<std::uint64_t>(bytes, pos);
      if (d == 0) throw FormatError("zero extent in entry " + e.name);
      e.shape.push_back(std::size_t(d));
    }
  }
  for (auto& e : ckpt.entries) {
    const std::size_t n = shape_numel(e.shape);
    e.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (e.dtype == DType::float32) {
        e.values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, pos));
      } else {
        e.values[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos));
      }
    }
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after checkpoint data");
  return ckpt;
}

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<NamedTensor<T>>& tensors,
                     const std::map<std::string, std::string>& metadata) {
  const auto bytes = encode_checkpoint(tensors, metadata);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open checkpoint for writing: " + path);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw FormatError("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace dpsep
