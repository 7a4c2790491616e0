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

// Dual-path processing of long sequences.
//
// A feature sequence [N, L] is cut into S half-overlapping chunks of length K
// (hop P = K/2) and stacked into a 3-D tensor [N, K, S]. Each dual-path block
// runs a bidirectional LSTM along K inside every chunk (intra-chunk, local),
// then along S across chunks at each within-chunk position (inter-chunk,
// global). Both passes project back to N features, apply a layer norm whose
// statistics span the whole 3-D tensor, and add a residual connection.
// Overlap-add maps the stack output back to [N, L].
//
// With K close to sqrt(2L), both recurrent passes see sequences of length
// O(sqrt(L)) instead of L.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dpsep/lstm.hpp"
#include "dpsep/ops.hpp"

namespace dpsep {

struct ChunkSize {
  std::size_t chunk_len;  // K, even
  std::size_t hop;        // P = K / 2
};

// K = nearest even integer to sqrt(2L), P = K / 2.
inline ChunkSize choose_chunk_size(std::size_t frames) {
  if (frames < 4) {
    throw ArgumentError(detail::concat("choose_chunk_size: need at least 4 frames, got ",
                                       frames));
  }
  const double half = std::sqrt(2.0 * double(frames)) / 2.0;
  const auto k = 2 * std::size_t(std::llround(half));
  return {k, k / 2};
}

// S = ceil(2L / K) + 1 for hop K / 2.
inline std::size_t num_chunks_for(std::size_t frames, std::size_t chunk_len) {
  return (2 * frames + chunk_len - 1) / chunk_len + 1;
}

template <typename T>
struct ChunkTensor {
  Tensor<T> data;  // [N, K, S]
  std::size_t chunk_len = 0;
  std::size_t hop = 0;
  std::size_t num_chunks = 0;
  std::size_t original_len = 0;

  std::size_t feature_dim() const { return data.dim(0); }

  void validate() const {
    if (!data.defined() || data.rank() != 3 || data.dim(1) != chunk_len ||
        data.dim(2) != num_chunks || hop == 0 || chunk_len != 2 * hop ||
        original_len == 0 || num_chunks != num_chunks_for(original_len, chunk_len)) {
      throw ShapeError(detail::concat(
          "chunk tensor metadata (K=", chunk_len, ", P=", hop, ", S=", num_chunks,
          ", L=", original_len, ") inconsistent with data ",
          data.defined() ? shape_str(data.shape()) : std::string("<undefined>")));
    }
  }
};

// Splits [N, L] into half-overlapping chunks. The sequence is zero-padded by
// P in front and up to a whole chunk at the end, so that every frame lands in
// exactly two chunks.
template <typename T>
ChunkTensor<T> segment(const Tensor<T>& w, std::size_t chunk_len, std::size_t hop) {
  if (!w.defined() || w.rank() != 2) {
    throw ShapeError("segment: input must be [N, L]");
  }
  if (chunk_len < 2 || chunk_len % 2 != 0) {
    throw ArgumentError(detail::concat("segment: chunk length must be even, got ",
                                       chunk_len));
  }
  if (hop != chunk_len / 2) {
    throw ArgumentError(detail::concat("segment: only 50% overlap is supported (hop ",
                                       chunk_len / 2, "), got hop ", hop));
  }
  const std::size_t n = w.dim(0), len = w.dim(1);
  if (chunk_len > 2 * len) {
    throw ArgumentError(detail::concat("segment: chunk length ", chunk_len,
                                       " is degenerate for ", len,
                                       " frames; use K <= ", 2 * len));
  }
  const std::size_t s_count = num_chunks_for(len, chunk_len);
  // src[(k, s)] = frame index feeding chunk s position k, or -1 for padding.
  std::vector<long> src(chunk_len * s_count);
  for (std::size_t k = 0; k < chunk_len; ++k) {
    for (std::size_t s = 0; s < s_count; ++s) {
      const long pos = long(s * hop + k) - long(hop);
      src[k * s_count + s] = (pos >= 0 && pos < long(len)) ? pos : -1;
    }
  }
  std::vector<T> out(n * chunk_len * s_count, T(0));
  auto wv = w.data();
  const std::size_t plane = chunk_len * s_count;
  for (std::size_t f = 0; f < n; ++f) {
    for (std::size_t j = 0; j < plane; ++j) {
      if (src[j] >= 0) out[f * plane + j] = wv[f * len + std::size_t(src[j])];
    }
  }
  Tensor<T> data(Shape{n, chunk_len, s_count}, std::move(out));
  record_op<T>(data, "segment", {&w},
               [w, src = std::move(src), n, len, plane](std::span<const T> g) mutable {
                 if (!w.requires_grad()) return;
                 auto gw = w.accumulate_grad();
                 for (std::size_t f = 0; f < n; ++f) {
                   for (std::size_t j = 0; j < plane; ++j) {
                     if (src[j] >= 0) gw[f * len + std::size_t(src[j])] += g[f * plane + j];
                   }
                 }
               });
  return {data, chunk_len, hop, s_count, len};
}

// Inverse of segment: sums every chunk back at its source offset, trims the
// padding and divides by K / P so that overlap_add(segment(w)) == w.
template <typename T>
Tensor<T> overlap_add(const ChunkTensor<T>& t) {
  t.validate();
  const std::size_t n = t.data.dim(0), k_len = t.chunk_len, s_count = t.num_chunks;
  const std::size_t len = t.original_len, hop = t.hop;
  const T norm = T(hop) / T(k_len);
  const std::size_t plane = k_len * s_count;
  std::vector<T> out(n * len, T(0));
  auto tv = t.data.data();
  for (std::size_t f = 0; f < n; ++f) {
    for (std::size_t k = 0; k < k_len; ++k) {
      for (std::size_t s = 0; s < s_count; ++s) {
        const long pos = long(s * hop + k) - long(hop);
        if (pos >= 0 && pos < long(len)) {
          out[f * len + std::size_t(pos)] += tv[f * plane + k * s_count + s];
        }
      }
    }
  }
  for (auto& v : out) v *= norm;
  Tensor<T> result(Shape{n, len}, std::move(out));
  record_op<T>(result, "overlap_add", {&t.data},
               [x = t.data, n, k_len, s_count, len, hop, norm,
                plane](std::span<const T> g) mutable {
                 if (!x.requires_grad()) return;
                 auto gx = x.accumulate_grad();
                 for (std::size_t f = 0; f < n; ++f) {
                   for (std::size_t k = 0; k < k_len; ++k) {
                     for (std::size_t s = 0; s < s_count; ++s) {
                       const long pos = long(s * hop + k) - long(hop);
                       if (pos >= 0 && pos < long(len)) {
                         gx[f * plane + k * s_count + s] +=
                             norm * g[f * len + std::size_t(pos)];
                       }
                     }
                   }
                 }
               });
  return result;
}

struct LayerNormStats {
  double mean = 0;
  double variance = 0;
  double epsilon = 1e-8;
};

// Mean and (biased) variance over every entry, accumulated in double in
// storage order.
template <typename T>
LayerNormStats layer_norm_stats(std::span<const T> x, double epsilon) {
  double acc = 0;
  for (T v : x) acc += v;
  const double mean = acc / double(x.size());
  double var = 0;
  for (T v : x) var += (double(v) - mean) * (double(v) - mean);
  return {mean, var / double(x.size()), epsilon};
}

// ((x - mu) / sqrt(var + eps)) * z + r with scalar mu, var over all of x and
// per-feature z, r ([N]) broadcast along the remaining axes.
template <typename T>
Tensor<T> global_layer_norm(const Tensor<T>& x, const Tensor<T>& z, const Tensor<T>& r,
                            double epsilon = 1e-8) {
  if (!x.defined() || !z.defined() || !r.defined()) {
    throw ShapeError("global_layer_norm: undefined input");
  }
  if (!(epsilon > 0)) throw ArgumentError("global_layer_norm: epsilon must be > 0");
  const std::size_t n = x.dim(0);
  if (z.numel() != n || r.numel() != n) {
    throw ShapeError(detail::concat("global_layer_norm: input ", shape_str(x.shape()),
                                    " vs scale ", shape_str(z.shape()), " and bias ",
                                    shape_str(r.shape())));
  }
  const std::size_t inner = x.numel() / n;
  const auto stats = layer_norm_stats(x.data(), epsilon);
  const double inv_std = 1.0 / std::sqrt(stats.variance + epsilon);
  std::vector<T> xhat(x.numel());
  std::vector<T> out(x.numel());
  auto xv = x.data();
  auto zv = z.data();
  auto rv = r.data();
  for (std::size_t f = 0; f < n; ++f) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t i = f * inner + j;
      xhat[i] = T((double(xv[i]) - stats.mean) * inv_std);
      out[i] = xhat[i] * zv[f] + rv[f];
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  record_op<T>(result, "global_layer_norm", {&x, &z, &r},
               [x, z, r, xhat = std::move(xhat), n, inner,
                inv_std](std::span<const T> g) mutable {
                 auto zv2 = z.data();
                 if (z.requires_grad() || r.requires_grad()) {
                   std::vector<double> gz(n, 0.0), gr(n, 0.0);
                   for (std::size_t f = 0; f < n; ++f) {
                     for (std::size_t j = 0; j < inner; ++j) {
                       const std::size_t i = f * inner + j;
                       gz[f] += double(g[i]) * xhat[i];
                       gr[f] += g[i];
                     }
                   }
                   if (z.requires_grad()) {
                     auto gzs = z.accumulate_grad();
                     for (std::size_t f = 0; f < n; ++f) gzs[f] += T(gz[f]);
                   }
                   if (r.requires_grad()) {
                     auto grs = r.accumulate_grad();
                     for (std::size_t f = 0; f < n; ++f) grs[f] += T(gr[f]);
                   }
                 }
                 if (!x.requires_grad()) return;
                 // dx = inv_std * (gh - mean(gh) - xhat * mean(gh * xhat)), gh = g * z
                 const double count = double(n * inner);
                 double mean_gh = 0, mean_ghx = 0;
                 for (std::size_t f = 0; f < n; ++f) {
                   for (std::size_t j = 0; j < inner; ++j) {
                     const std::size_t i = f * inner + j;
                     const double gh = double(g[i]) * zv2[f];
                     mean_gh += gh;
                     mean_ghx += gh * xhat[i];
                   }
                 }
                 mean_gh /= count;
                 mean_ghx /= count;
                 auto gx = x.accumulate_grad();
                 for (std::size_t f = 0; f < n; ++f) {
                   for (std::size_t j = 0; j < inner; ++j) {
                     const std::size_t i = f * inner + j;
                     const double gh = double(g[i]) * zv2[f];
                     gx[i] += T(inv_std * (gh - mean_gh - double(xhat[i]) * mean_ghx));
                   }
                 }
               });
  return result;
}

// Parameters of one intra- or inter-chunk sub-module.
template <typename T>
struct PathParams {
  LstmCellParams<T> lstm_fwd;
  LstmCellParams<T> lstm_bwd;
  Tensor<T> fc_weight;  // [N, 2H]
  Tensor<T> fc_bias;    // [N]
  Tensor<T> ln_scale;   // [N]
  Tensor<T> ln_bias;    // [N]

  std::size_t feature_dim() const { return fc_weight.dim(0); }

  void validate() const {
    lstm_fwd.validate();
    lstm_bwd.validate();
    const std::size_t n = fc_weight.dim(0);
    const std::size_t h = lstm_fwd.hidden_size();
    if (fc_weight.dim(1) != 2 * h || lstm_bwd.hidden_size() != h ||
        lstm_fwd.input_size() != n || lstm_bwd.input_size() != n ||
        fc_bias.numel() != n || ln_scale.numel() != n || ln_bias.numel() != n) {
      throw ShapeError(detail::concat("dual-path parameters inconsistent: fc ",
                                      shape_str(fc_weight.shape()), ", lstm In=",
                                      lstm_fwd.input_size(), " H=", h));
    }
  }

  static PathParams zeros(std::size_t features, std::size_t hidden) {
    return {LstmCellParams<T>::zeros(features, hidden),
            LstmCellParams<T>::zeros(features, hidden),
            Tensor<T>(Shape{features, 2 * hidden}),
            Tensor<T>(Shape{features}),
            Tensor<T>(Shape{features}, T(1)),
            Tensor<T>(Shape{features})};
  }

  static PathParams init(std::size_t features, std::size_t hidden, Rng& rng) {
    PathParams p{LstmCellParams<T>::init(features, hidden, rng),
                 LstmCellParams<T>::init(features, hidden, rng),
                 Tensor<T>(Shape{features, 2 * hidden}),
                 Tensor<T>(Shape{features}),
                 Tensor<T>(Shape{features}, T(1)),
                 Tensor<T>(Shape{features})};
    fill_uniform(p.fc_weight, T(1.0 / std::sqrt(double(2 * hidden))), rng);
    return p;
  }

  void append_named(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    lstm_fwd.append_named(prefix + ".lstm_fwd", out);
    lstm_bwd.append_named(prefix + ".lstm_bwd", out);
    out.push_back({prefix + ".fc.weight", fc_weight});
    out.push_back({prefix + ".fc.bias", fc_bias});
    out.push_back({prefix + ".ln.scale", ln_scale});
    out.push_back({prefix + ".ln.bias", ln_bias});
  }
};

template <typename T>
struct DprnnBlockParams {
  PathParams<T> intra;
  PathParams<T> inter;

  static DprnnBlockParams init(std::size_t features, std::size_t hidden, Rng& rng) {
    auto intra = PathParams<T>::init(features, hidden, rng);
    auto inter = PathParams<T>::init(features, hidden, rng);
    return {std::move(intra), std::move(inter)};
  }

  void append_named(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    intra.append_named(prefix + ".intra", out);
    inter.append_named(prefix + ".inter", out);
  }
};

namespace detail {

// Shared body of both passes. `to_seq` permutes [N, K, S] into the
// [steps, batch, N] layout the LSTM consumes; `from_seq` is its inverse.
template <typename T>
Tensor<T> dual_path_pass(const Tensor<T>& t, const PathParams<T>& p, double epsilon,
                         const std::vector<std::size_t>& to_seq,
                         const std::vector<std::size_t>& from_seq, const char* name) {
  p.validate();
  if (!t.defined() || t.rank() != 3 || t.dim(0) != p.feature_dim()) {
    throw ShapeError(detail::concat(name, ": input ",
                                    t.defined() ? shape_str(t.shape()) : "<undefined>",
                                    " does not match feature dim ", p.feature_dim()));
  }
  auto seq = permute(t, to_seq);
  auto rnn = bilstm_sequences(seq, p.lstm_fwd, p.lstm_bwd);
  auto projected = permute(affine(rnn, p.fc_weight, p.fc_bias), from_seq);
  return add(t, global_layer_norm(projected, p.ln_scale, p.ln_bias, epsilon));
}

}  // namespace detail

// BLSTM along K within each chunk, FC, global LN, residual. [N, K, S] in/out.
template <typename T>
Tensor<T> intra_chunk_pass(const Tensor<T>& t, const PathParams<T>& p,
                           double epsilon = 1e-8) {
  return detail::dual_path_pass(t, p, epsilon, {1, 2, 0}, {2, 0, 1}, "intra_chunk_pass");
}

// BLSTM along S at each within-chunk position, FC, global LN, residual.
template <typename T>
Tensor<T> inter_chunk_pass(const Tensor<T>& t, const PathParams<T>& p,
                           double epsilon = 1e-8) {
  return detail::dual_path_pass(t, p, epsilon, {2, 1, 0}, {2, 1, 0}, "inter_chunk_pass");
}

template <typename T>
ChunkTensor<T> dprnn_stack(const ChunkTensor<T>& t,
                           const std::vector<DprnnBlockParams<T>>& blocks,
                           double epsilon = 1e-8) {
  t.validate();
  if (blocks.empty()) throw ArgumentError("dprnn_stack: no blocks");
  ChunkTensor<T> out = t;
  for (const auto& block : blocks) {
    out.data = inter_chunk_pass(intra_chunk_pass(out.data, block.intra, epsilon),
                                block.inter, epsilon);
  }
  return out;
}

}  // namespace dpsep
