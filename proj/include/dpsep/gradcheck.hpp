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

// Central-difference gradient checks against the tape, plus the suite run by
// `dpsep gradcheck`.

#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "dpsep/tasnet.hpp"
#include "dpsep/training.hpp"

namespace dpsep {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0;
  std::size_t checked = 0;  // number of scalar inputs perturbed
  std::string worst;        // "<input>[<index>]" of the largest error
  bool passed = false;
};

using ScalarFn = std::function<Tensor<double>()>;

// Compares tape gradients of the scalar f() with respect to every tensor in
// `inputs` to central differences. f must read the inputs directly; they are
// perturbed in place and restored.
//
// Per-element error is |a - n| / max(|a|, |n|, floor) where floor is 1e-3 of
// the largest numeric gradient magnitude (plus 1e-10), so entries that are
// zero up to round-off do not dominate.
inline GradCheckReport check_gradients(const std::string& name, const ScalarFn& f,
                                       std::vector<Tensor<double>> inputs,
                                       double tol = kGradCheckTolerance,
                                       double step = kGradCheckStep) {
  GradCheckReport rep;
  rep.name = name;
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.clear_grad();
  }
  GradTape tape;
  Tensor<double> loss;
  {
    TapeScope scope(tape);
    loss = f();
  }
  if (loss.numel() != 1) throw ShapeError("check_gradients: f must return a scalar");
  tape.backward(loss);

  std::vector<std::vector<double>> analytic, numeric;
  double largest = 0;
  {
    NoGradScope no_grad;
    for (auto& x : inputs) {
      analytic.emplace_back(x.numel(), 0.0);
      if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.back().begin());
      numeric.emplace_back(x.numel());
      auto d = x.mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double keep = d[i];
        d[i] = keep + step;
        const double up = f().item();
        d[i] = keep - step;
        const double down = f().item();
        d[i] = keep;
        numeric.back()[i] = (up - down) / (2 * step);
        largest = std::max(largest, std::abs(numeric.back()[i]));
      }
    }
  }
  const double floor = 1e-3 * largest + 1e-10;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < analytic[k].size(); ++i) {
      const double a = analytic[k][i], n = numeric[k][i];
      const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
      ++rep.checked;
      if (err > rep.max_rel_error || rep.worst.empty()) {
        rep.max_rel_error = err;
        rep.worst = detail::concat("input", k, "[", i, "]");
      }
    }
  }
  for (auto& x : inputs) x.clear_grad();
  rep.passed = rep.max_rel_error < tol;
  return rep;
}

// Single-input form: checks d f(x) / dx.
inline GradCheckReport finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                         const Tensor<double>& x,
                                         double tol = kGradCheckTolerance) {
  return check_gradients("f", [&] { return f(x); }, {x}, tol);
}

namespace detail {

// Reduces any tensor to a scalar through fixed random weights, so that every
// output element receives a distinct upstream gradient.
inline Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(mix_seed(seed, y.numel()));
  auto w = uniform<double>(y.shape(), 1.0, rng);
  return sum(mul(y, w));
}

inline std::string shape_tag(std::initializer_list<std::size_t> dims) {
  std::string s = "[";
  for (auto it = dims.begin(); it != dims.end(); ++it) {
    if (it != dims.begin()) s += ",";
    s += std::to_string(*it);
  }
  return s + "]";
}

template <typename P>
std::vector<Tensor<double>> params_of(const P& p) {
  std::vector<NamedTensor<double>> named;
  p.append_named("", named);
  std::vector<Tensor<double>> out;
  for (auto& nt : named) out.push_back(nt.tensor);
  return out;
}

inline std::vector<Tensor<double>> concat_inputs(std::vector<Tensor<double>> a,
                                                 const std::vector<Tensor<double>>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace detail

// Every differentiable building block at several small shapes, in float64.
inline std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed = 7) {
  std::vector<GradCheckReport> out;
  Rng rng(mix_seed(seed));
  auto add_report = [&](GradCheckReport r) { out.push_back(std::move(r)); };

  struct ConvShape {
    std::size_t samples, filters, width, stride;
  };
  for (const ConvShape s : {ConvShape{20, 3, 4, 2}, ConvShape{17, 2, 3, 1},
                            ConvShape{33, 4, 8, 4}}) {
    const auto tag = detail::shape_tag({s.samples, s.filters, s.width, s.stride});
    auto x = uniform<double>({1, s.samples}, 1.0, rng);
    auto k = uniform<double>({s.filters, s.width}, 1.0, rng);
    add_report(check_gradients(
        "conv1d" + tag,
        [=] { return detail::weighted_sum(conv1d(x, k, s.stride), seed); }, {x, k}));
    const std::size_t frames = conv1d_output_length(s.samples, s.width, s.stride);
    auto y = uniform<double>({s.filters, frames}, 1.0, rng);
    add_report(check_gradients(
        "transposed_conv1d" + tag,
        [=] { return detail::weighted_sum(transposed_conv1d(y, k, s.stride), seed); },
        {y, k}));
  }

  for (const auto& [in, hidden] : {std::pair<std::size_t, std::size_t>{3, 2}, {2, 4}, {5, 3}}) {
    const auto tag = detail::shape_tag({in, hidden});
    auto p = LstmCellParams<double>::init(in, hidden, rng);
    auto x = uniform<double>({in}, 1.0, rng);
    auto h = uniform<double>({hidden}, 1.0, rng);
    auto c = uniform<double>({hidden}, 1.0, rng);
    add_report(check_gradients(
        "lstm_step" + tag,
        [=] {
          auto st = lstm_step(x, h, c, p);
          return add(detail::weighted_sum(st.h, seed), detail::weighted_sum(st.c, seed + 1));
        },
        detail::concat_inputs({x, h, c}, detail::params_of(p))));
  }

  for (const auto& [in, hidden, steps, batch] :
       {std::array<std::size_t, 4>{3, 2, 4, 1}, {2, 3, 5, 2}, {4, 2, 3, 3}}) {
    const auto tag = detail::shape_tag({in, hidden, steps, batch});
    auto f = LstmCellParams<double>::init(in, hidden, rng);
    auto b = LstmCellParams<double>::init(in, hidden, rng);
    auto x = uniform<double>({steps, batch, in}, 1.0, rng);
    add_report(check_gradients(
        "bilstm" + tag,
        [=] { return detail::weighted_sum(bilstm_sequences(x, f, b), seed); },
        detail::concat_inputs(detail::concat_inputs({x}, detail::params_of(f)),
                              detail::params_of(b))));
  }

  for (const auto& [n, k, s] : {std::array<std::size_t, 3>{3, 4, 2}, {2, 6, 3}, {4, 2, 5}}) {
    const auto tag = detail::shape_tag({n, k, s});
    auto x = uniform<double>({n, k, s}, 1.0, rng);
    auto z = uniform<double>({n}, 1.0, rng);
    auto r = uniform<double>({n}, 1.0, rng);
    add_report(check_gradients(
        "global_layer_norm" + tag,
        [=] { return detail::weighted_sum(global_layer_norm(x, z, r), seed); }, {x, z, r}));
  }

  for (const auto& [n, k, s, h] :
       {std::array<std::size_t, 4>{4, 6, 5, 3}, {3, 4, 3, 2}, {2, 2, 4, 3}}) {
    const auto tag = detail::shape_tag({n, k, s, h});
    auto x = uniform<double>({n, k, s}, 1.0, rng);
    auto intra = PathParams<double>::init(n, h, rng);
    auto inter = PathParams<double>::init(n, h, rng);
    add_report(check_gradients(
        "intra_chunk_pass" + tag,
        [=] { return detail::weighted_sum(intra_chunk_pass(x, intra), seed); },
        detail::concat_inputs({x}, detail::params_of(intra))));
    add_report(check_gradients(
        "inter_chunk_pass" + tag,
        [=] { return detail::weighted_sum(inter_chunk_pass(x, inter), seed); },
        detail::concat_inputs({x}, detail::params_of(inter))));
  }

  for (const auto& [n, l, k] : {std::array<std::size_t, 3>{2, 7, 4}, {3, 10, 6}, {1, 5, 2}}) {
    const auto tag = detail::shape_tag({n, l, k});
    auto w = uniform<double>({n, l}, 1.0, rng);
    add_report(check_gradients(
        "segment+overlap_add" + tag,
        [=] {
          auto chunks = segment(w, k, k / 2);
          chunks.data = mul(chunks.data, chunks.data);
          return detail::weighted_sum(overlap_add(chunks), seed);
        },
        {w}));
  }

  for (const auto& [c, t] : {std::pair<std::size_t, std::size_t>{2, 64}, {3, 40}, {2, 25}}) {
    const auto tag = detail::shape_tag({c, t});
    auto est = uniform<double>({c, t}, 1.0, rng);
    auto ref = uniform<double>({c, t}, 1.0, rng);
    add_report(check_gradients("upit_si_snr_loss" + tag,
                               [=] { return upit_loss(est, ref).loss; }, {est}));
  }

  {
    ModelConfig cfg;
    cfg.num_filters = 4;
    cfg.window = 4;
    cfg.num_sources = 2;
    cfg.num_blocks = 1;
    cfg.hidden = 3;
    auto model = SeparatorModel<double>::init(cfg, seed);
    Rng data_rng(mix_seed(seed, 99));
    auto mixture = uniform<double>({1, 38}, 1.0, data_rng);
    auto refs = uniform<double>({2, 38}, 1.0, data_rng);
    add_report(check_gradients(
        "separator" + detail::shape_tag({4, 4, 2, 1, 3}),
        [=] { return upit_loss(separate(mixture, model), refs).loss; }, model.parameters()));
  }
  return out;
}

inline std::string format_report(const GradCheckReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "max_rel_err=%.3e n=%zu", r.max_rel_error, r.checked);
  return std::string(r.passed ? "PASS " : "FAIL ") + r.name + " " + buf +
         (r.passed ? "" : " worst=" + r.worst);
}

}  // namespace dpsep
