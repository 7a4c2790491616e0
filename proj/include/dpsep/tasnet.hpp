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

// Encoder / mask estimator / decoder separation network.
//
//   mixture [1, T] --conv1d+relu--> rep [N, L]
//   rep --segment--> [N, K, S] --dual-path blocks--> --FC N->C*N-->
//       --overlap-add--> [C*N, L] --relu--> masks [C, N, L]
//   rep * masks[c] --transposed conv1d--> source c, trimmed to T

#pragma once

#include <map>
#include <string>
#include <vector>

#include "dpsep/checkpoint.hpp"
#include "dpsep/dualpath.hpp"
#include "dpsep/init.hpp"
#include "dpsep/ops.hpp"

namespace dpsep {

struct ModelConfig {
  std::size_t num_filters = 64;  // N
  std::size_t window = 2;        // W, samples
  std::size_t num_sources = 2;   // C
  std::size_t num_blocks = 6;    // B
  std::size_t hidden = 128;      // H, per direction
  std::size_t chunk_len = 0;     // K; 0 picks K from the frame count
  std::size_t sample_rate = 8000;
  double ln_epsilon = 1e-8;

  std::size_t stride() const { return std::max<std::size_t>(window / 2, 1); }

  void validate() const {
    if (num_filters == 0 || window == 0 || num_sources == 0 || hidden == 0 ||
        sample_rate == 0) {
      throw ConfigError("model sizes must be positive");
    }
    if (chunk_len % 2 != 0) {
      throw ConfigError("chunk_len must be even (or 0 for automatic)");
    }
  }

  std::size_t frames_for(std::size_t samples) const {
    return conv1d_output_length(samples, window, stride());
  }

  std::map<std::string, std::string> to_metadata() const {
    return {{"N", std::to_string(num_filters)},  {"W", std::to_string(window)},
            {"stride", std::to_string(stride())}, {"C", std::to_string(num_sources)},
            {"B", std::to_string(num_blocks)},    {"H", std::to_string(hidden)},
            {"K", std::to_string(chunk_len)},     {"sample_rate", std::to_string(sample_rate)}};
  }

  static ModelConfig from_metadata(const Checkpoint& ckpt) {
    auto num = [&](const char* key) { return std::size_t(std::stoull(ckpt.meta(key))); };
    ModelConfig c;
    c.num_filters = num("N");
    c.window = num("W");
    c.num_sources = num("C");
    c.num_blocks = num("B");
    c.hidden = num("H");
    c.chunk_len = num("K");
    c.sample_rate = num("sample_rate");
    if (num("stride") != c.stride()) throw FormatError("checkpoint stride disagrees with W");
    c.validate();
    return c;
  }
};

template <typename T>
struct SeparatorModel {
  ModelConfig config;
  Tensor<T> encoder;      // [N, W]
  Tensor<T> decoder;      // [N, W]
  Tensor<T> mask_weight;  // [C*N, N]
  Tensor<T> mask_bias;    // [C*N]
  std::vector<DprnnBlockParams<T>> blocks;

  static SeparatorModel init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed));
    const std::size_t n = cfg.num_filters, w = cfg.window, cn = cfg.num_sources * n;
    SeparatorModel m;
    m.config = cfg;
    m.encoder = uniform<T>({n, w}, T(1.0 / std::sqrt(double(w))), rng);
    m.decoder = uniform<T>({n, w}, T(1.0 / std::sqrt(double(n))), rng);
    m.mask_weight = uniform<T>({cn, n}, T(1.0 / std::sqrt(double(n))), rng);
    m.mask_bias = Tensor<T>(Shape{cn});
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
      m.blocks.push_back(DprnnBlockParams<T>::init(n, cfg.hidden, rng));
    }
    m.set_requires_grad(true);
    return m;
  }

  // Fixed order: encoder, decoder, mask head, then blocks.
  std::vector<NamedTensor<T>> named_parameters() const {
    std::vector<NamedTensor<T>> out{{"encoder.kernels", encoder},
                                    {"decoder.kernels", decoder},
                                    {"mask_head.weight", mask_weight},
                                    {"mask_head.bias", mask_bias}};
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      blocks[b].append_named("block" + std::to_string(b), out);
    }
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& nt : named_parameters()) out.push_back(nt.tensor);
    return out;
  }

  void set_requires_grad(bool on) {
    for (auto& p : parameters()) p.set_requires_grad(on);
  }

  void validate() const {
    const std::size_t n = config.num_filters, cn = config.num_sources * n;
    if (encoder.shape() != Shape{n, config.window} ||
        decoder.shape() != Shape{n, config.window} ||
        mask_weight.shape() != Shape{cn, n} || mask_bias.numel() != cn ||
        blocks.size() != config.num_blocks) {
      throw ShapeError("separator parameters disagree with the model config");
    }
    for (const auto& b : blocks) {
      b.intra.validate();
      b.inter.validate();
    }
  }
};

template <typename T>
std::size_t parameter_count(const SeparatorModel<T>& model) {
  std::size_t n = 0;
  for (const auto& p : model.named_parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
struct MaskSet {
  Tensor<T> masks;  // [C, N, L], nonnegative
};

// relu(conv1d(mixture, encoder, stride)) -> [N, L].
template <typename T>
Tensor<T> encode(const Tensor<T>& mixture, const SeparatorModel<T>& model) {
  return relu(conv1d(mixture, model.encoder, model.config.stride()));
}

// Chunk length used for a representation of `frames` frames: the configured K
// (or the sqrt rule when unset), capped at the largest valid K for short
// inputs.
inline std::size_t effective_chunk_len(const ModelConfig& cfg, std::size_t frames) {
  std::size_t k = cfg.chunk_len;
  if (k == 0) k = frames >= 4 ? choose_chunk_size(frames).chunk_len : 2;
  return std::min(k, 2 * frames);
}

template <typename T>
MaskSet<T> estimate_masks(const Tensor<T>& rep, const SeparatorModel<T>& model) {
  const auto& cfg = model.config;
  if (!rep.defined() || rep.rank() != 2 || rep.dim(0) != cfg.num_filters) {
    throw ShapeError(detail::concat("estimate_masks: representation must be [",
                                    cfg.num_filters, ", L], got ",
                                    rep.defined() ? shape_str(rep.shape()) : "<undefined>"));
  }
  const std::size_t frames = rep.dim(1);
  const std::size_t k = effective_chunk_len(cfg, frames);
  auto chunks = segment(rep, k, k / 2);
  if (!model.blocks.empty()) chunks = dprnn_stack(chunks, model.blocks, cfg.ln_epsilon);
  auto positions = permute(chunks.data, {1, 2, 0});  // [K, S, N]
  auto heads = permute(affine(positions, model.mask_weight, model.mask_bias),
                       {2, 0, 1});  // [C*N, K, S]
  ChunkTensor<T> head_chunks{heads, chunks.chunk_len, chunks.hop, chunks.num_chunks,
                             chunks.original_len};
  auto masks = relu(overlap_add(head_chunks));
  return {reshape(masks, {cfg.num_sources, cfg.num_filters, frames})};
}

// out[c] = rep * masks[c].
template <typename T>
Tensor<T> apply_masks(const Tensor<T>& rep, const MaskSet<T>& masks) {
  const auto& m = masks.masks;
  if (!rep.defined() || !m.defined() || m.rank() != 3 || rep.rank() != 2 ||
      m.dim(1) != rep.dim(0) || m.dim(2) != rep.dim(1)) {
    throw ShapeError(detail::concat(
        "apply_masks: representation ", rep.defined() ? shape_str(rep.shape()) : "?",
        " vs masks ", m.defined() ? shape_str(m.shape()) : "?"));
  }
  return mul(repeat_leading(rep, m.dim(0)), m);
}

// Transposed convolution of every source: [C, N, L] -> [C, (L-1)*stride + W].
template <typename T>
Tensor<T> decode(const Tensor<T>& masked, const SeparatorModel<T>& model) {
  return transposed_conv1d(masked, model.decoder, model.config.stride());
}

// Full pipeline; returns [C, T] for a [1, T] mixture.
template <typename T>
Tensor<T> separate(const Tensor<T>& mixture, const SeparatorModel<T>& model) {
  const std::size_t samples = mixture.numel();
  auto rep = encode(mixture, model);
  auto masks = estimate_masks(rep, model);
  return fit_length(decode(apply_masks(rep, masks), model), samples);
}

template <typename T>
void save_model(const std::string& path, const SeparatorModel<T>& model) {
  save_checkpoint(path, model.named_parameters(), model.config.to_metadata());
}

template <typename T>
SeparatorModel<T> model_from_checkpoint(const Checkpoint& ckpt) {
  auto cfg = ModelConfig::from_metadata(ckpt);
  auto model = SeparatorModel<T>::init(cfg, 0);
  auto named = model.named_parameters();
  if (named.size() != ckpt.entries.size()) {
    throw FormatError(detail::concat("checkpoint holds ", ckpt.entries.size(),
                                     " tensors, model expects ", named.size()));
  }
  for (auto& nt : named) {
    const auto& e = ckpt.entry(nt.name);
    if (e.shape != nt.tensor.shape()) {
      throw FormatError(detail::concat("tensor ", nt.name, " has shape ",
                                       shape_str(e.shape), ", expected ",
                                       shape_str(nt.tensor.shape())));
    }
    auto dst = nt.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = T(e.values[i]);
  }
  return model;
}

template <typename T>
SeparatorModel<T> load_model(const std::string& path) {
  return model_from_checkpoint<T>(load_checkpoint(path));
}

}  // namespace dpsep
