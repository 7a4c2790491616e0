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

#pragma once

#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <random>

#include "dpsep/tensor.hpp"

namespace dpsep {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; derives independent sub-seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
void fill_uniform(Tensor<T>& t, T bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-double(bound), double(bound));
  for (auto& v : t.mutable_data()) v = T(dist(rng));
}

template <typename T>
void fill_normal(Tensor<T>& t, T stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, double(stddev));
  for (auto& v : t.mutable_data()) v = T(dist(rng));
}

template <typename T>
Tensor<T> uniform(Shape shape, T bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  fill_uniform(t, bound, rng);
  return t;
}

template <typename T>
Tensor<T> normal(Shape shape, T stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  fill_normal(t, stddev, rng);
  return t;
}

// Writes a random orthogonal n x n matrix into rows [row0, row0 + n) of a
// row-major matrix with n columns.
template <typename T>
void fill_orthogonal_block(std::span<T> dst, std::size_t row0, std::size_t n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = dist(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd& r = qr.matrixQR();
  // Sign fix makes the distribution uniform over the orthogonal group.
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      dst[(row0 + i) * n + j] = T(q(Eigen::Index(i), Eigen::Index(j)));
    }
  }
}

}  // namespace dpsep
