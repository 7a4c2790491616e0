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

// Dense row-major tensors and the reverse-mode gradient tape.
//
// A Tensor is a cheap shared handle. Operations (see ops.hpp) allocate a new
// output and, when a GradTape is active on the calling thread and at least
// one input requires gradients, push a backward rule onto that tape.
// GradTape::backward replays the rules in reverse recording order and
// accumulates (+=) into the grad buffers of every tracked tensor.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "dpsep/error.hpp"

namespace dpsep {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { float32 = 0, float64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensors hold float or double");
  return std::is_same_v<T, float> ? DType::float32 : DType::float64;
}

inline const char* dtype_name(DType d) {
  return d == DType::float32 ? "float32" : "float64";
}

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Debug surveillance: when enabled every op scans its output and throws
// NumericError naming the op on the first NaN/Inf.
inline std::atomic<bool>& check_finite_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}
inline void set_check_finite(bool on) { check_finite_flag().store(on); }

class GradTape;

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0 for leaves and untracked values
  std::string op;
};

inline GradTape*& active_tape_slot() {
  thread_local GradTape* tape = nullptr;
  return tape;
}

inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    validate_shape(shape);
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data)
      : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size()) {
      throw ShapeError(detail::concat("tensor of shape ", shape_str(shape),
                                      " needs ", shape_numel(shape),
                                      " values, got ", data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t dim(std::size_t axis) const {
    const auto& s = impl().shape;
    if (axis >= s.size()) {
      throw ShapeError(detail::concat("axis ", axis, " out of range for shape ",
                                      shape_str(s)));
    }
    return s[axis];
  }
  std::size_t numel() const { return impl().data.size(); }
  constexpr DType dtype() const { return dtype_of<T>(); }

  std::span<const T> data() const { return impl().data; }
  // Writable view. Intended for leaves (parameter updates, initialization);
  // mutating a recorded intermediate invalidates its backward rule.
  std::span<T> mutable_data() const { return impl().data; }
  T item() const {
    if (numel() != 1) {
      throw ShapeError(detail::concat("item() on tensor of shape ",
                                      shape_str(shape())));
    }
    return impl().data[0];
  }
  T operator[](std::size_t i) const { return impl().data[i]; }

  bool requires_grad() const { return defined() && impl_->requires_grad; }
  const Tensor& set_requires_grad(bool on = true) const {
    impl().requires_grad = on;
    return *this;
  }

  bool has_grad() const { return defined() && !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl().grad; }
  // Grad buffer, allocated as zeros on first use.
  std::span<T> accumulate_grad() const {
    auto& g = impl().grad;
    if (g.empty()) g.assign(impl().data.size(), T(0));
    return g;
  }
  void zero_grad() const {
    auto& g = impl().grad;
    std::fill(g.begin(), g.end(), T(0));
  }
  void clear_grad() const { impl().grad.clear(); }

  // Id of the tape that produced this tensor, 0 for leaves.
  std::uint64_t tape_id() const { return impl().tape_id; }
  const std::string& op() const { return impl().op; }

  // Deep copy without history; gradient tracking off.
  Tensor detach() const { return Tensor(shape(), impl().data); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  template <typename U>
  friend void record_op(Tensor<U>& out, std::string_view op,
                        std::initializer_list<const Tensor<U>*> inputs,
                        std::function<void(std::span<const U>)> rule);
  friend class GradTape;

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (auto d : shape) {
      if (d == 0) {
        throw ShapeError(detail::concat("tensor extents must be positive, got ",
                                        shape_str(shape)));
      }
    }
  }

  detail::TensorImpl<T>& impl() const {
    if (!impl_) throw ShapeError("use of an undefined tensor");
    return *impl_;
  }

  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

// Ordered record of backward rules. One tape per forward/backward iteration;
// reset() starts a fresh iteration and detaches everything recorded before.
class GradTape {
 public:
  GradTape() : id_(detail::next_tape_id()) {}
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  std::vector<std::string> op_names() const {
    std::vector<std::string> names;
    names.reserve(entries_.size());
    for (const auto& e : entries_) names.push_back(e.op);
    return names;
  }

  void record(std::string op, std::function<void()> rule) {
    if (consumed_) {
      throw TapeError("recording onto a tape whose backward already ran");
    }
    entries_.push_back({std::move(op), std::move(rule)});
  }

  template <typename T>
  void backward(const Tensor<T>& loss) {
    if (!loss.defined()) throw TapeError("backward on an undefined tensor");
    if (loss.numel() != 1) {
      throw TapeError(detail::concat("backward needs a scalar loss, got shape ",
                                     shape_str(loss.shape())));
    }
    if (consumed_) {
      throw TapeError("backward already ran on this tape; call reset() first");
    }
    if (loss.tape_id() != id_) {
      throw TapeError("loss was not produced under this tape (detached)");
    }
    consumed_ = true;
    auto& impl = *loss.impl_;
    if (impl.grad.empty()) impl.grad.assign(1, T(0));
    impl.grad[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->rule();
  }

  // Drops all recorded rules (releasing intermediates) and takes a new id.
  void reset() {
    entries_.clear();
    consumed_ = false;
    id_ = detail::next_tape_id();
  }

 private:
  struct Entry {
    std::string op;
    std::function<void()> rule;
  };
  std::vector<Entry> entries_;
  std::uint64_t id_;
  bool consumed_ = false;
};

// Makes `tape` the recording target on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape) : previous_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

// Disables recording for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape_slot()) {
    detail::active_tape_slot() = nullptr;
  }
  ~NoGradScope() { detail::active_tape_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* previous_;
};

inline GradTape* active_tape() { return detail::active_tape_slot(); }

// Finalizes a freshly computed op output: optional finiteness scan, then, if
// a tape is active and any input requires grad, marks `out` as tracked and
// records `rule`. The rule receives the output gradient and must accumulate
// into the grads of those inputs that require it.
template <typename T>
void record_op(Tensor<T>& out, std::string_view op,
               std::initializer_list<const Tensor<T>*> inputs,
               std::function<void(std::span<const T>)> rule) {
  auto& impl = out.impl();
  impl.op = std::string(op);
  if (check_finite_flag().load(std::memory_order_relaxed)) {
    for (T v : impl.data) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string(op),
                           detail::concat("non-finite value produced by ", op));
      }
    }
  }
  GradTape* tape = active_tape();
  if (tape == nullptr) return;
  bool track = false;
  for (const Tensor<T>* in : inputs) track = track || (in && in->requires_grad());
  if (!track) return;
  impl.requires_grad = true;
  impl.tape_id = tape->id();
  tape->record(std::string(op),
               [out_impl = out.impl_, rule = std::move(rule)] {
                 if (!out_impl->grad.empty()) rule(out_impl->grad);
               });
}

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
void zero_grads(std::span<Tensor<T>> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace dpsep
