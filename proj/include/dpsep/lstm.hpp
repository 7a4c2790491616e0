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

// Standard four-gate LSTM (no peepholes):
//
//   i = sigmoid(W_i x + U_i h + b_i)    f = sigmoid(W_f x + U_f h + b_f)
//   g = tanh(W_g x + U_g h + b_g)       o = sigmoid(W_o x + U_o h + b_o)
//   c' = f * c + i * g                  h' = o * tanh(c')
//
// The four gate matrices are stored stacked in the order i, f, g, o:
// w_ih is [4H, In], w_hh is [4H, H], bias is [4H].

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dpsep/init.hpp"
#include "dpsep/ops.hpp"

namespace dpsep {

template <typename T>
struct LstmCellParams {
  Tensor<T> w_ih;
  Tensor<T> w_hh;
  Tensor<T> bias;

  std::size_t input_size() const { return w_ih.dim(1); }
  std::size_t hidden_size() const { return w_hh.dim(1); }

  static std::size_t count_for(std::size_t input, std::size_t hidden) {
    return 4 * (hidden * input + hidden * hidden + hidden);
  }
  std::size_t parameter_count() const {
    return w_ih.numel() + w_hh.numel() + bias.numel();
  }

  void validate() const {
    const std::size_t h = w_hh.dim(1);
    if (w_ih.rank() != 2 || w_hh.rank() != 2 || bias.rank() != 1 ||
        w_ih.dim(0) != 4 * h || w_hh.dim(0) != 4 * h || bias.dim(0) != 4 * h) {
      throw ShapeError(detail::concat(
          "LSTM parameters disagree on hidden size: w_ih ", shape_str(w_ih.shape()),
          ", w_hh ", shape_str(w_hh.shape()), ", bias ", shape_str(bias.shape())));
    }
  }

  static LstmCellParams zeros(std::size_t input, std::size_t hidden) {
    return {Tensor<T>(Shape{4 * hidden, input}), Tensor<T>(Shape{4 * hidden, hidden}),
            Tensor<T>(Shape{4 * hidden})};
  }

  // Input weights uniform in +-1/sqrt(In), recurrent gate blocks orthogonal,
  // forget bias 1, other biases 0.
  static LstmCellParams init(std::size_t input, std::size_t hidden, Rng& rng) {
    auto p = zeros(input, hidden);
    fill_uniform(p.w_ih, T(1.0 / std::sqrt(double(input))), rng);
    auto whh = p.w_hh.mutable_data();
    for (std::size_t gate = 0; gate < 4; ++gate) {
      fill_orthogonal_block<T>(whh, gate * hidden, hidden, rng);
    }
    auto b = p.bias.mutable_data();
    for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = T(1);
    return p;
  }

  void append_named(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    out.push_back({prefix + ".w_ih", w_ih});
    out.push_back({prefix + ".w_hh", w_hh});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

// One time step built from primitive tape ops; x is [In], h and c are [H].
template <typename T>
LstmState<T> lstm_step(const Tensor<T>& x, const Tensor<T>& h, const Tensor<T>& c,
                       const LstmCellParams<T>& p) {
  p.validate();
  const std::size_t hidden = p.hidden_size();
  if (x.numel() != p.input_size() || h.numel() != hidden || c.numel() != hidden) {
    throw ShapeError(detail::concat("lstm_step: x ", shape_str(x.shape()), ", h ",
                                    shape_str(h.shape()), ", c ", shape_str(c.shape()),
                                    " do not match cell (In=", p.input_size(),
                                    ", H=", hidden, ")"));
  }
  auto gates = add(affine(reshape(x, {p.input_size()}), p.w_ih, p.bias),
                   affine(reshape(h, {hidden}), p.w_hh));
  auto i = sigmoid(slice(gates, 0, hidden));
  auto f = sigmoid(slice(gates, hidden, 2 * hidden));
  auto g = tanh(slice(gates, 2 * hidden, 3 * hidden));
  auto o = sigmoid(slice(gates, 3 * hidden, 4 * hidden));
  auto c2 = add(mul(f, reshape(c, {hidden})), mul(i, g));
  auto h2 = mul(o, tanh(c2));
  return {h2, c2};
}

namespace detail {

template <typename T>
inline T logistic(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

// Forward activations of one direction over a [steps, batch, In] input.
template <typename T>
struct LstmTrace {
  std::vector<T> acts;    // [steps * batch, 4H], post-activation i, f, g, o
  std::vector<T> cells;   // [steps * batch, H]
  std::vector<T> hidden;  // [steps * batch, H]
};

template <typename T>
LstmTrace<T> lstm_direction_forward(std::span<const T> x, std::size_t steps,
                                    std::size_t batch, std::size_t in,
                                    const LstmCellParams<T>& p, bool reverse) {
  const std::size_t h = p.hidden_size();
  const std::size_t g4 = 4 * h;
  LstmTrace<T> tr;
  tr.acts.resize(steps * batch * g4);
  tr.cells.resize(steps * batch * h);
  tr.hidden.resize(steps * batch * h);
  auto pre = mmat<T>(tr.acts, steps * batch, g4);
  pre.noalias() = cmat(x, steps * batch, in) * cmat(p.w_ih.data(), g4, in).transpose();
  pre.rowwise() += cmat(p.bias.data(), 1, g4).row(0);
  auto whh = cmat(p.w_hh.data(), g4, h);
  std::vector<T> zeros(batch * h, T(0));
  const T* h_prev = zeros.data();
  const T* c_prev = zeros.data();
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    T* a = tr.acts.data() + t * batch * g4;
    auto at = MatMap<T>(a, Eigen::Index(batch), Eigen::Index(g4));
    if (s > 0) {
      at.noalias() += ConstMatMap<T>(h_prev, Eigen::Index(batch), Eigen::Index(h)) *
                      whh.transpose();
    }
    T* c = tr.cells.data() + t * batch * h;
    T* hh = tr.hidden.data() + t * batch * h;
    for (std::size_t b = 0; b < batch; ++b) {
      T* ab = a + b * g4;
      for (std::size_t j = 0; j < h; ++j) {
        const T ig = logistic(ab[j]);
        const T fg = logistic(ab[h + j]);
        const T gg = std::tanh(ab[2 * h + j]);
        const T og = logistic(ab[3 * h + j]);
        ab[j] = ig;
        ab[h + j] = fg;
        ab[2 * h + j] = gg;
        ab[3 * h + j] = og;
        const T cv = fg * c_prev[b * h + j] + ig * gg;
        c[b * h + j] = cv;
        hh[b * h + j] = og * std::tanh(cv);
      }
    }
    h_prev = hh;
    c_prev = c;
  }
  return tr;
}

// Backpropagation through time for one direction. `gout` is the full
// [steps, batch, 2H] output gradient; this direction owns columns
// [offset, offset + H).
template <typename T>
void lstm_direction_backward(std::span<const T> gout, std::size_t offset,
                             std::span<const T> x, std::size_t steps, std::size_t batch,
                             std::size_t in, const LstmCellParams<T>& p,
                             const LstmTrace<T>& tr, bool reverse, const Tensor<T>& xt) {
  const std::size_t h = p.hidden_size();
  const std::size_t g4 = 4 * h;
  const std::size_t width = 2 * h;
  std::vector<T> dpre(steps * batch * g4);
  std::vector<T> hprev(steps * batch * h, T(0));
  std::vector<T> dh_next(batch * h, T(0));
  std::vector<T> dc_next(batch * h, T(0));
  auto whh = cmat(p.w_hh.data(), g4, h);
  for (std::size_t s = steps; s-- > 0;) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    const bool has_prev = s > 0;
    const std::size_t tp = reverse ? t + 1 : t - 1;  // valid only if has_prev
    const T* a = tr.acts.data() + t * batch * g4;
    const T* c = tr.cells.data() + t * batch * h;
    const T* cp = has_prev ? tr.cells.data() + tp * batch * h : nullptr;
    T* d = dpre.data() + t * batch * g4;
    if (has_prev) {
      std::copy_n(tr.hidden.data() + tp * batch * h, batch * h,
                  hprev.data() + t * batch * h);
    }
    for (std::size_t b = 0; b < batch; ++b) {
      const T* ab = a + b * g4;
      T* db = d + b * g4;
      const T* gb = gout.data() + (t * batch + b) * width + offset;
      for (std::size_t j = 0; j < h; ++j) {
        const T ig = ab[j], fg = ab[h + j], gg = ab[2 * h + j], og = ab[3 * h + j];
        const T dh = gb[j] + dh_next[b * h + j];
        const T tc = std::tanh(c[b * h + j]);
        const T dc = dh * og * (T(1) - tc * tc) + dc_next[b * h + j];
        const T cprev = cp ? cp[b * h + j] : T(0);
        db[j] = dc * gg * ig * (T(1) - ig);
        db[h + j] = dc * cprev * fg * (T(1) - fg);
        db[2 * h + j] = dc * ig * (T(1) - gg * gg);
        db[3 * h + j] = dh * tc * og * (T(1) - og);
        dc_next[b * h + j] = dc * fg;
      }
    }
    auto dh_map = mmat<T>(dh_next, batch, h);
    dh_map.noalias() = ConstMatMap<T>(d, Eigen::Index(batch), Eigen::Index(g4)) * whh;
  }
  auto dA = cmat<T>(dpre, steps * batch, g4);
  if (p.w_ih.requires_grad()) {
    mmat(p.w_ih.accumulate_grad(), g4, in).noalias() +=
        dA.transpose() * cmat(x, steps * batch, in);
  }
  if (p.w_hh.requires_grad()) {
    mmat(p.w_hh.accumulate_grad(), g4, h).noalias() +=
        dA.transpose() * cmat<T>(hprev, steps * batch, h);
  }
  if (p.bias.requires_grad()) {
    mmat(p.bias.accumulate_grad(), 1, g4) += dA.colwise().sum();
  }
  if (xt.requires_grad()) {
    mmat(xt.accumulate_grad(), steps * batch, in).noalias() +=
        dA * cmat(p.w_ih.data(), g4, in);
  }
}

}  // namespace detail

// Bidirectional LSTM over a batch of independent sequences laid out
// time-major: x is [steps, batch, In], the result is [steps, batch, 2H] with
// the forward direction in the first H features. Zero initial states.
template <typename T>
Tensor<T> bilstm_sequences(const Tensor<T>& x, const LstmCellParams<T>& fwd,
                           const LstmCellParams<T>& bwd) {
  if (!x.defined()) throw ShapeError("bilstm: empty sequence");
  fwd.validate();
  bwd.validate();
  if (x.rank() != 3 || x.dim(2) != fwd.input_size() ||
      fwd.input_size() != bwd.input_size() ||
      fwd.hidden_size() != bwd.hidden_size()) {
    throw ShapeError(detail::concat("bilstm: input ", shape_str(x.shape()),
                                    " does not match cells (In=", fwd.input_size(),
                                    "/", bwd.input_size(), ", H=", fwd.hidden_size(),
                                    "/", bwd.hidden_size(), ")"));
  }
  const std::size_t steps = x.dim(0), batch = x.dim(1), in = x.dim(2);
  const std::size_t h = fwd.hidden_size();
  auto tf = detail::lstm_direction_forward(x.data(), steps, batch, in, fwd, false);
  auto tb = detail::lstm_direction_forward(x.data(), steps, batch, in, bwd, true);
  std::vector<T> out(steps * batch * 2 * h);
  for (std::size_t r = 0; r < steps * batch; ++r) {
    std::copy_n(tf.hidden.data() + r * h, h, out.data() + r * 2 * h);
    std::copy_n(tb.hidden.data() + r * h, h, out.data() + r * 2 * h + h);
  }
  Tensor<T> result(Shape{steps, batch, 2 * h}, std::move(out));
  record_op<T>(result, "bilstm",
               {&x, &fwd.w_ih, &fwd.w_hh, &fwd.bias, &bwd.w_ih, &bwd.w_hh, &bwd.bias},
               [x, fwd, bwd, tf = std::move(tf), tb = std::move(tb), steps, batch,
                in](std::span<const T> g) mutable {
                 detail::lstm_direction_backward(g, 0, x.data(), steps, batch, in, fwd,
                                                 tf, false, x);
                 detail::lstm_direction_backward(g, fwd.hidden_size(), x.data(), steps,
                                                 batch, in, bwd, tb, true, x);
               });
  return result;
}

// Bidirectional LSTM over one sequence laid out feature-major, [In, T] ->
// [2H, T].
template <typename T>
Tensor<T> bilstm(const Tensor<T>& seq, const LstmCellParams<T>& fwd,
                 const LstmCellParams<T>& bwd) {
  if (!seq.defined()) throw ShapeError("bilstm: empty sequence");
  if (seq.rank() != 2) {
    throw ShapeError(detail::concat("bilstm: sequence must be [In, T], got ",
                                    shape_str(seq.shape())));
  }
  const std::size_t in = seq.dim(0), steps = seq.dim(1);
  auto tm = reshape(permute(seq, {1, 0}), {steps, 1, in});
  auto y = bilstm_sequences(tm, fwd, bwd);
  return permute(reshape(y, {steps, 2 * fwd.hidden_size()}), {1, 0});
}

}  // namespace dpsep
