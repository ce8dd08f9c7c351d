// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "molformer/errors.hpp"

namespace molformer::nn {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// When enabled, every op output is scanned for NaN/Inf and raises NonFinite.
void set_checked_mode(bool enabled);
bool checked_mode();

/// Dense row-major tensor with shared storage. Copies alias the same buffer,
/// matching how the tape keeps inputs alive; clone() makes an independent copy.
/// Writes through mutable_values() bump a version counter that the tape uses
/// to detect tensors modified after being recorded.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : s_(std::make_shared<Storage>()) {
    s_->shape = std::move(shape);
    s_->data.assign(shape_size(s_->shape), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<Storage>()) {
    if (values.size() != shape_size(shape))
      throw Error(ErrorCode::kShapeMismatch,
                  std::to_string(values.size()) + " values for shape " + shape_string(shape));
    s_->shape = std::move(shape);
    s_->data = std::move(values);
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size() const { return s_->data.size(); }
  /// Leading extent for rank 2; a rank-1 tensor is treated as one row.
  std::size_t rows() const { return rank() >= 2 ? s_->shape[0] : 1; }
  std::size_t cols() const { return s_->shape.empty() ? 1 : s_->shape.back(); }

  const T* data() const { return s_->data.data(); }
  std::span<const T> values() const { return s_->data; }
  std::span<T> mutable_values() {
    ++s_->version;
    return s_->data;
  }
  /// Write access for op implementations filling a freshly created output.
  T* raw() { return s_->data.data(); }

  T item() const { return s_->data.at(0); }
  T operator()(std::size_t r, std::size_t c) const { return s_->data[r * cols() + c]; }
  T operator[](std::size_t i) const { return s_->data[i]; }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  Tensor& set_requires_grad(bool value) {
    s_->requires_grad = value;
    return *this;
  }

  bool has_grad() const { return s_ && !s_->grad.empty(); }
  /// Gradient buffer, zero-allocated on first access.
  std::span<T> grad() const {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
    return s_->grad;
  }
  std::span<const T> grad_view() const { return s_->grad; }
  void zero_grad() {
    if (s_) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }
  void drop_grad() {
    if (s_) s_->grad.clear();
  }

  std::uint64_t version() const { return s_->version; }
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  Tensor clone() const {
    Tensor out(s_->shape);
    std::copy(s_->data.begin(), s_->data.end(), out.s_->data.begin());
    return out;
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    std::uint64_t version = 0;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

/// Ordered record of executed ops. backward() replays closures in strict
/// reverse order; each closure adds into its inputs' gradient buffers.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void()>;

  void record(std::vector<Tensor<T>> inputs, const Tensor<T>& output, Backward fn) {
    Entry entry;
    entry.inputs = std::move(inputs);
    for (const auto& t : entry.inputs) entry.versions.push_back(t.version());
    entry.output = output;
    entry.output_version = output.version();
    entry.fn = std::move(fn);
    entries_.push_back(std::move(entry));
  }

  void backward(Tensor<T> loss, T seed = T(1)) {
    if (loss.size() != 1)
      throw Error(ErrorCode::kShapeMismatch, "backward needs a scalar loss, got " + shape_string(loss.shape()));
    loss.grad()[0] += seed;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      for (std::size_t i = 0; i < it->inputs.size(); ++i) {
        if (it->inputs[i].version() != it->versions[i])
          throw Error(ErrorCode::kDetachedTensor, "a tensor recorded on the tape was modified before backward");
      }
      if (it->output.version() != it->output_version)
        throw Error(ErrorCode::kDetachedTensor, "an op output was modified before backward");
      if (!it->output.has_grad()) continue;
      it->fn();
    }
    entries_.clear();
  }

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::vector<Tensor<T>> inputs;
    std::vector<std::uint64_t> versions;
    Tensor<T> output;
    std::uint64_t output_version = 0;
    Backward fn;
  };
  std::vector<Entry> entries_;
};

/// True when an op on these inputs must be recorded.
template <typename T>
bool needs_grad(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (tape == nullptr) return false;
  for (const auto* t : inputs)
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  return false;
}

}  // namespace molformer::nn
