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

// Differentiable tensor operations.
//
// Broadcasting is deliberately narrow: the second operand of a binary op may
// drop trailing axes (or carry them as size 1), so b = [N] or [N, 1, 1]
// broadcasts against a = [N, K, S]. Everything else needs an explicit
// reshape/permute/repeat.

#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "dpsep/tensor.hpp"

namespace dpsep {
namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
ConstMatMap<T> cmat(std::span<const T> s, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(s.data(), Eigen::Index(rows), Eigen::Index(cols));
}
template <typename T>
MatMap<T> mmat(std::span<T> s, std::size_t rows, std::size_t cols) {
  return MatMap<T>(s.data(), Eigen::Index(rows), Eigen::Index(cols));
}

// Number of a-elements each b-element covers, or 0 if b does not broadcast
// against a under the trailing-singleton rule.
inline std::size_t broadcast_inner(const Shape& a, const Shape& b) {
  std::size_t used = b.size();
  while (used > 0 && b[used - 1] == 1) --used;
  if (b.size() > a.size() && used > a.size()) return 0;
  if (used > a.size()) return 0;
  for (std::size_t i = 0; i < used; ++i) {
    if (a[i] != b[i]) return 0;
  }
  for (std::size_t i = used; i < b.size(); ++i) {
    if (b[i] != 1) return 0;
  }
  std::size_t inner = 1;
  for (std::size_t i = used; i < a.size(); ++i) inner *= a[i];
  return inner;
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op, const char* what) {
  if (!t.defined()) {
    throw ShapeError(concat(op, ": ", what, " is an undefined tensor"));
  }
}

template <typename T, typename F>
Tensor<T> map_unary(const Tensor<T>& x, F f) {
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor<T>(x.shape(), std::move(out));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pointwise ops.

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto out = detail::map_unary(x, [](T v) { return v > T(0) ? v : T(0); });
  record_op<T>(out, "relu", {&x}, [x](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    auto gx = x.accumulate_grad();
    auto xv = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += g[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto out = detail::map_unary(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); });
  record_op<T>(out, "sigmoid", {&x}, [x, y = out.data()](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    auto gx = x.accumulate_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
  return out;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  auto out = detail::map_unary(x, [](T v) { return std::tanh(v); });
  record_op<T>(out, "tanh", {&x}, [x, y = out.data()](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    auto gx = x.accumulate_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  auto out = detail::map_unary(x, [factor](T v) { return v * factor; });
  record_op<T>(out, "scale", {&x}, [x, factor](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    auto gx = x.accumulate_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
  return out;
}

namespace detail {

enum class BinaryKind { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a_in, const Tensor<T>& b_in, BinaryKind kind,
                 const char* name) {
  require_defined(a_in, name, "lhs");
  require_defined(b_in, name, "rhs");
  const Tensor<T>* a = &a_in;
  const Tensor<T>* b = &b_in;
  std::size_t inner = broadcast_inner(a->shape(), b->shape());
  if (inner == 0 && kind != BinaryKind::sub) {
    inner = broadcast_inner(b->shape(), a->shape());
    if (inner != 0) std::swap(a, b);
  }
  if (inner == 0) {
    throw ShapeError(concat(name, ": shapes ", shape_str(a_in.shape()), " and ",
                            shape_str(b_in.shape()),
                            " are not broadcast-compatible"));
  }
  Tensor<T> big = *a;
  Tensor<T> small = *b;
  std::vector<T> out(big.numel());
  auto av = big.data();
  auto bv = small.data();
  for (std::size_t p = 0; p < bv.size(); ++p) {
    const T bp = bv[p];
    const T* ap = av.data() + p * inner;
    T* op = out.data() + p * inner;
    switch (kind) {
      case BinaryKind::add:
        for (std::size_t j = 0; j < inner; ++j) op[j] = ap[j] + bp;
        break;
      case BinaryKind::sub:
        for (std::size_t j = 0; j < inner; ++j) op[j] = ap[j] - bp;
        break;
      case BinaryKind::mul:
        for (std::size_t j = 0; j < inner; ++j) op[j] = ap[j] * bp;
        break;
    }
  }
  Tensor<T> result(big.shape(), std::move(out));
  record_op<T>(result, name, {&big, &small},
               [big, small, inner, kind](std::span<const T> g) mutable {
                 const std::size_t groups = small.numel();
                 if (big.requires_grad()) {
                   auto gb = big.accumulate_grad();
                   auto sv = small.data();
                   for (std::size_t p = 0; p < groups; ++p) {
                     const T f = kind == BinaryKind::mul ? sv[p] : T(1);
                     for (std::size_t j = 0; j < inner; ++j) {
                       gb[p * inner + j] += f * g[p * inner + j];
                     }
                   }
                 }
                 if (small.requires_grad()) {
                   auto gs = small.accumulate_grad();
                   auto bv2 = big.data();
                   for (std::size_t p = 0; p < groups; ++p) {
                     T acc = 0;
                     if (kind == BinaryKind::mul) {
                       for (std::size_t j = 0; j < inner; ++j) {
                         acc += g[p * inner + j] * bv2[p * inner + j];
                       }
                     } else {
                       for (std::size_t j = 0; j < inner; ++j) acc += g[p * inner + j];
                     }
                     gs[p] += kind == BinaryKind::sub ? -acc : acc;
                   }
                 }
               });
  return result;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::add, "add");
}

// a - b; only b may broadcast.
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::sub, "sub");
}

// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::mul, "mul");
}

enum class Pointwise { relu, sigmoid, tanh, add, mul };

template <typename T>
Tensor<T> elementwise(Pointwise fn, const Tensor<T>& a, const Tensor<T>& b = {}) {
  switch (fn) {
    case Pointwise::relu: return relu(a);
    case Pointwise::sigmoid: return sigmoid(a);
    case Pointwise::tanh: return tanh(a);
    case Pointwise::add: return add(a, b);
    case Pointwise::mul: return mul(a, b);
  }
  throw ArgumentError("unknown pointwise op");
}

// ---------------------------------------------------------------------------
// Reductions and layout.

// Sum of all entries, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  detail::require_defined(x, "sum", "input");
  double acc = 0;
  for (T v : x.data()) acc += v;
  auto out = Tensor<T>::scalar(T(acc));
  record_op<T>(out, "sum", {&x}, [x](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    for (auto& v : x.accumulate_grad()) v += g[0];
  });
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require_defined(x, "reshape", "input");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError(detail::concat("reshape: cannot view ", shape_str(x.shape()),
                                    " as ", shape_str(shape)));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  record_op<T>(out, "reshape", {&x}, [x](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    auto gx = x.accumulate_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

// Axis permutation: out.shape[i] == x.shape[axes[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  detail::require_defined(x, "permute", "input");
  const auto& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  if (axes.size() != rank) {
    throw ShapeError(detail::concat("permute: ", axes.size(), " axes for shape ",
                                    shape_str(in_shape)));
  }
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: axes are not a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_stride[i] = in_strides[axes[i]];
  }
  // Gather map from output linear index to input linear index.
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t o = 0; o < n; ++o) {
    src[o] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      offset += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      offset -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  std::vector<T> out(n);
  auto xv = x.data();
  for (std::size_t o = 0; o < n; ++o) out[o] = xv[src[o]];
  Tensor<T> result(std::move(out_shape), std::move(out));
  record_op<T>(result, "permute", {&x},
               [x, src = std::move(src)](std::span<const T> g) mutable {
                 if (!x.requires_grad()) return;
                 auto gx = x.accumulate_grad();
                 for (std::size_t o = 0; o < g.size(); ++o) gx[src[o]] += g[o];
               });
  return result;
}

// Rows [begin, end) along axis 0.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require_defined(x, "slice", "input");
  if (begin >= end || end > x.dim(0)) {
    throw ShapeError(detail::concat("slice: range [", begin, ", ", end,
                                    ") invalid for shape ", shape_str(x.shape())));
  }
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  auto xv = x.data();
  Tensor<T> out(std::move(shape), std::vector<T>(xv.begin() + begin * row,
                                                 xv.begin() + end * row));
  record_op<T>(out, "slice", {&x}, [x, off = begin * row](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    auto gx = x.accumulate_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
  });
  return out;
}

// Stacks `copies` copies of x along a new leading axis.
template <typename T>
Tensor<T> repeat_leading(const Tensor<T>& x, std::size_t copies) {
  detail::require_defined(x, "repeat_leading", "input");
  if (copies == 0) throw ArgumentError("repeat_leading: copies must be >= 1");
  Shape shape{copies};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  std::vector<T> out;
  out.reserve(copies * x.numel());
  for (std::size_t c = 0; c < copies; ++c) {
    out.insert(out.end(), x.data().begin(), x.data().end());
  }
  Tensor<T> result(std::move(shape), std::move(out));
  record_op<T>(result, "repeat_leading", {&x}, [x](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    auto gx = x.accumulate_grad();
    const std::size_t n = gx.size();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i % n] += g[i];
  });
  return result;
}

// Truncates or zero-pads the last axis to `length`.
template <typename T>
Tensor<T> fit_length(const Tensor<T>& x, std::size_t length) {
  detail::require_defined(x, "fit_length", "input");
  if (length == 0) throw ArgumentError("fit_length: length must be >= 1");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  const std::size_t keep = std::min(cols, length);
  Shape shape = x.shape();
  shape.back() = length;
  std::vector<T> out(rows * length, T(0));
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.begin() + r * cols, keep, out.begin() + r * length);
  }
  Tensor<T> result(std::move(shape), std::move(out));
  record_op<T>(result, "fit_length", {&x},
               [x, rows, cols, keep, length](std::span<const T> g) mutable {
                 if (!x.requires_grad()) return;
                 auto gx = x.accumulate_grad();
                 for (std::size_t r = 0; r < rows; ++r) {
                   for (std::size_t j = 0; j < keep; ++j) gx[r * cols + j] += g[r * length + j];
                 }
               });
  return result;
}

// ---------------------------------------------------------------------------
// Linear algebra.

// out[..., o] = sum_i weight[o, i] * x[..., i] + bias[o]. `bias` may be
// undefined.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias = {}) {
  detail::require_defined(x, "affine", "input");
  detail::require_defined(weight, "affine", "weight");
  if (weight.rank() != 2 || x.shape().back() != weight.dim(1)) {
    throw ShapeError(detail::concat("affine: input ", shape_str(x.shape()),
                                    " does not match weight ",
                                    shape_str(weight.shape())));
  }
  const std::size_t in = weight.dim(1);
  const std::size_t out_dim = weight.dim(0);
  if (bias.defined() && (bias.numel() != out_dim)) {
    throw ShapeError(detail::concat("affine: bias ", shape_str(bias.shape()),
                                    " does not match weight ",
                                    shape_str(weight.shape())));
  }
  const std::size_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<T> out(rows * out_dim);
  auto y = detail::mmat<T>(out, rows, out_dim);
  y.noalias() = detail::cmat(x.data(), rows, in) *
                detail::cmat(weight.data(), out_dim, in).transpose();
  if (bias.defined()) {
    auto b = detail::cmat(bias.data(), 1, out_dim);
    y.rowwise() += b.row(0);
  }
  Tensor<T> result(std::move(shape), std::move(out));
  record_op<T>(result, "affine", {&x, &weight, &bias},
               [x, weight, bias, rows, in, out_dim](std::span<const T> g) mutable {
                 auto gy = detail::cmat(g, rows, out_dim);
                 if (x.requires_grad()) {
                   detail::mmat(x.accumulate_grad(), rows, in).noalias() +=
                       gy * detail::cmat(weight.data(), out_dim, in);
                 }
                 if (weight.requires_grad()) {
                   detail::mmat(weight.accumulate_grad(), out_dim, in).noalias() +=
                       gy.transpose() * detail::cmat(x.data(), rows, in);
                 }
                 if (bias.defined() && bias.requires_grad()) {
                   detail::mmat(bias.accumulate_grad(), 1, out_dim) +=
                       gy.colwise().sum();
                 }
               });
  return result;
}

namespace detail {

// Frames of a 1-D signal: row l holds signal[l*stride, l*stride + width).
template <typename T>
std::vector<T> im2col(std::span<const T> signal, std::size_t frames,
                      std::size_t width, std::size_t stride) {
  std::vector<T> cols(frames * width);
  for (std::size_t l = 0; l < frames; ++l) {
    std::copy_n(signal.begin() + l * stride, width, cols.begin() + l * width);
  }
  return cols;
}

template <typename T>
void col2im_add(std::span<const T> cols, std::size_t frames, std::size_t width,
                std::size_t stride, std::span<T> signal) {
  for (std::size_t l = 0; l < frames; ++l) {
    const T* src = cols.data() + l * width;
    T* dst = signal.data() + l * stride;
    for (std::size_t w = 0; w < width; ++w) dst[w] += src[w];
  }
}

}  // namespace detail

inline std::size_t conv1d_output_length(std::size_t samples, std::size_t width,
                                        std::size_t stride) {
  return (samples - width) / stride + 1;
}

// Strided 1-D correlation of a mono signal [1, T] (or [T]) with N kernels
// [N, W]: out[n, l] = dot(kernels[n], signal[l*stride : l*stride + W]).
template <typename T>
Tensor<T> conv1d(const Tensor<T>& signal, const Tensor<T>& kernels, std::size_t stride) {
  detail::require_defined(signal, "conv1d", "signal");
  detail::require_defined(kernels, "conv1d", "kernels");
  if (stride == 0) throw ArgumentError("conv1d: stride must be >= 1");
  if (kernels.rank() != 2) {
    throw ShapeError(detail::concat("conv1d: kernels must be [N, W], got ",
                                    shape_str(kernels.shape())));
  }
  if (signal.rank() > 2 || (signal.rank() == 2 && signal.dim(0) != 1)) {
    throw ShapeError(detail::concat("conv1d: signal must be [1, T], got ",
                                    shape_str(signal.shape())));
  }
  const std::size_t samples = signal.numel();
  const std::size_t filters = kernels.dim(0);
  const std::size_t width = kernels.dim(1);
  if (samples < width) {
    throw ArgumentError(detail::concat("conv1d: input too short (", samples,
                                       " samples) for window ", width));
  }
  const std::size_t frames = conv1d_output_length(samples, width, stride);
  auto cols = detail::im2col(signal.data(), frames, width, stride);
  std::vector<T> out(filters * frames);
  detail::mmat<T>(out, filters, frames).noalias() =
      detail::cmat(kernels.data(), filters, width) *
      detail::cmat<T>(cols, frames, width).transpose();
  Tensor<T> result(Shape{filters, frames}, std::move(out));
  record_op<T>(result, "conv1d", {&signal, &kernels},
               [signal, kernels, cols = std::move(cols), filters, frames, width,
                stride](std::span<const T> g) mutable {
                 auto gy = detail::cmat(g, filters, frames);
                 if (kernels.requires_grad()) {
                   detail::mmat(kernels.accumulate_grad(), filters, width).noalias() +=
                       gy * detail::cmat<T>(cols, frames, width);
                 }
                 if (signal.requires_grad()) {
                   std::vector<T> gcols(frames * width);
                   detail::mmat<T>(gcols, frames, width).noalias() =
                       gy.transpose() * detail::cmat(kernels.data(), filters, width);
                   detail::col2im_add<T>(gcols, frames, width, stride,
                                         signal.accumulate_grad());
                 }
               });
  return result;
}

// Adjoint of conv1d: frames [N, L] -> [1, T] or a batch [C, N, L] -> [C, T],
// T = (L - 1) * stride + W. Each frame adds its kernel-weighted sum at
// offset l * stride.
template <typename T>
Tensor<T> transposed_conv1d(const Tensor<T>& frames_in, const Tensor<T>& kernels,
                            std::size_t stride) {
  if (!frames_in.defined()) throw ShapeError("transposed_conv1d: empty frames");
  detail::require_defined(kernels, "transposed_conv1d", "kernels");
  if (stride == 0) throw ArgumentError("transposed_conv1d: stride must be >= 1");
  if (kernels.rank() != 2) {
    throw ShapeError(detail::concat("transposed_conv1d: kernels must be [N, W], got ",
                                    shape_str(kernels.shape())));
  }
  const std::size_t rank = frames_in.rank();
  if ((rank != 2 && rank != 3) || frames_in.dim(rank - 2) != kernels.dim(0)) {
    throw ShapeError(detail::concat("transposed_conv1d: frames ",
                                    shape_str(frames_in.shape()),
                                    " do not match kernels ",
                                    shape_str(kernels.shape())));
  }
  const std::size_t batch = rank == 3 ? frames_in.dim(0) : 1;
  const std::size_t filters = kernels.dim(0);
  const std::size_t width = kernels.dim(1);
  const std::size_t nframes = frames_in.shape().back();
  const std::size_t samples = (nframes - 1) * stride + width;
  std::vector<T> out(batch * samples, T(0));
  std::vector<T> cols(nframes * width);
  auto k = detail::cmat(kernels.data(), filters, width);
  for (std::size_t c = 0; c < batch; ++c) {
    auto f = detail::cmat(frames_in.data().subspan(c * filters * nframes,
                                                   filters * nframes),
                          filters, nframes);
    detail::mmat<T>(cols, nframes, width).noalias() = f.transpose() * k;
    detail::col2im_add<T>(cols, nframes, width, stride,
                          std::span<T>(out).subspan(c * samples, samples));
  }
  Tensor<T> result(Shape{batch, samples}, std::move(out));
  record_op<T>(
      result, "transposed_conv1d", {&frames_in, &kernels},
      [frames_in, kernels, batch, filters, width, nframes, samples,
       stride](std::span<const T> g) mutable {
        for (std::size_t c = 0; c < batch; ++c) {
          auto gcols = detail::im2col(g.subspan(c * samples, samples), nframes,
                                      width, stride);
          auto gc = detail::cmat<T>(gcols, nframes, width);
          if (frames_in.requires_grad()) {
            detail::mmat(frames_in.accumulate_grad().subspan(c * filters * nframes,
                                                              filters * nframes),
                         filters, nframes)
                .noalias() += detail::cmat(kernels.data(), filters, width) *
                              gc.transpose();
          }
          if (kernels.requires_grad()) {
            detail::mmat(kernels.accumulate_grad(), filters, width).noalias() +=
                detail::cmat(frames_in.data().subspan(c * filters * nframes,
                                                      filters * nframes),
                             filters, nframes) *
                gc;
          }
        }
      });
  return result;
}

}  // namespace dpsep
