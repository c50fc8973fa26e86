#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "gff/common.hpp"

namespace gff {

template <typename T>
struct TensorData {
  Shape shape;
  std::int64_t size = 0;
  std::unique_ptr<T[]> values;
  std::unique_ptr<T[]> grad;  // allocated and zero-filled on first touch
  bool requires_grad = false;
  std::int64_t node = -1;  // producing tape node, -1 for leaves
};

/// Dense N-dimensional real tensor, row-major, NCHW for 4-D feature maps.
/// Copies are shallow handles onto shared storage; clone() deep-copies.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  /// Allocates uninitialized storage of the given shape.
  explicit Tensor(Shape shape) : d_(std::make_shared<TensorData<T>>()) {
    for (auto e : shape) check(e > 0, "tensor extents must be positive, got " + shape_str(shape));
    d_->shape = std::move(shape);
    d_->size = gff::numel(d_->shape);
    d_->values = std::make_unique_for_overwrite<T[]>(static_cast<std::size_t>(d_->size));
  }

  static Tensor zeros(Shape shape) {
    Tensor t(std::move(shape));
    std::fill_n(t.data(), t.numel(), T(0));
    return t;
  }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill_n(t.data(), t.numel(), v);
    return t;
  }

  static Tensor from(Shape shape, std::initializer_list<T> vals) {
    Tensor t(std::move(shape));
    check(static_cast<std::int64_t>(vals.size()) == t.numel(), "initializer size mismatch");
    std::copy(vals.begin(), vals.end(), t.data());
    return t;
  }

  static Tensor from(Shape shape, const std::vector<T>& vals) {
    Tensor t(std::move(shape));
    check(static_cast<std::int64_t>(vals.size()) == t.numel(), "value count mismatch");
    std::copy(vals.begin(), vals.end(), t.data());
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int ndim() const { return static_cast<int>(d_->shape.size()); }
  std::int64_t dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return d_ ? d_->size : 0; }

  T* data() { return d_->values.get(); }
  const T* data() const { return d_->values.get(); }
  std::span<const T> span() const { return {data(), static_cast<std::size_t>(numel())}; }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tensor& set_requires_grad(bool r) {
    d_->requires_grad = r;
    return *this;
  }

  bool has_grad() const { return d_ && d_->grad != nullptr; }

  /// Gradient buffer, allocated zero-filled on first access.
  T* grad() {
    if (!d_->grad) {
      d_->grad = std::make_unique_for_overwrite<T[]>(static_cast<std::size_t>(d_->size));
      std::fill_n(d_->grad.get(), d_->size, T(0));
    }
    return d_->grad.get();
  }
  const T* grad() const { return d_->grad.get(); }

  void zero_grad() {
    if (d_ && d_->grad) std::fill_n(d_->grad.get(), d_->size, T(0));
  }

  Tensor clone() const {
    Tensor t(d_->shape);
    std::copy_n(data(), numel(), t.data());
    return t;
  }

  /// Element access by NCHW-style index, for tests and small utilities.
  T& at(std::initializer_list<std::int64_t> idx) {
    return d_->values[flat_index(idx)];
  }
  T at(std::initializer_list<std::int64_t> idx) const {
    return d_->values[flat_index(idx)];
  }

  bool all_finite() const {
    const T* p = data();
    for (std::int64_t i = 0; i < numel(); ++i) {
      if (!std::isfinite(p[i])) return false;
    }
    return true;
  }

  std::shared_ptr<TensorData<T>> impl() const { return d_; }

 private:
  std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const {
    check(static_cast<int>(idx.size()) == ndim(), "index rank mismatch");
    std::int64_t flat = 0;
    int i = 0;
    for (auto v : idx) {
      flat = flat * d_->shape[static_cast<std::size_t>(i)] + v;
      ++i;
    }
    return flat;
  }

  std::shared_ptr<TensorData<T>> d_;
};

/// Gradient buffer of a storage record, allocated zero-filled on demand.
/// Backward rules accumulate into this with +=.
template <typename T>
inline T* ensure_grad(TensorData<T>& d) {
  if (!d.grad) {
    d.grad = std::make_unique_for_overwrite<T[]>(static_cast<std::size_t>(d.size));
    std::fill_n(d.grad.get(), d.size, T(0));
  }
  return d.grad.get();
}

/// Integer label map [N,H,W]; 255 is the conventional ignore label.
struct Labels {
  std::int64_t n = 0, h = 0, w = 0;
  std::vector<std::int32_t> v;

  Labels() = default;
  Labels(std::int64_t n_, std::int64_t h_, std::int64_t w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), v(static_cast<std::size_t>(n_ * h_ * w_), fill) {}

  std::int64_t numel() const { return n * h * w; }
  std::int32_t& at(std::int64_t ni, std::int64_t hi, std::int64_t wi) {
    return v[static_cast<std::size_t>((ni * h + hi) * w + wi)];
  }
  std::int32_t at(std::int64_t ni, std::int64_t hi, std::int64_t wi) const {
    return v[static_cast<std::size_t>((ni * h + hi) * w + wi)];
  }
};

/// Reverse-mode autodiff graph: an append-only tape of backward rules.
/// Insertion order is the topological order; backward() replays the rules
/// exactly once in reverse insertion order, which makes repeated runs on
/// identical inputs bit-identical.
template <typename T>
class Tape {
 public:
  std::int64_t record(std::function<void()> backward_rule) {
    nodes_.push_back(std::move(backward_rule));
    return static_cast<std::int64_t>(nodes_.size()) - 1;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and propagates to every recorded input.
  /// The root must be a scalar.
  void backward(Tensor<T>& root) {
    check(root.defined() && root.numel() == 1, "backward root must be a defined scalar");
    root.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() {
    nodes_.clear();
    macs_ = 0;
  }

  /// Forward multiply-accumulate accounting; ops add their cost while a
  /// tape is attached.
  void add_macs(std::uint64_t m) { macs_ += m; }
  std::uint64_t macs() const { return macs_; }

 private:
  std::vector<std::function<void()>> nodes_;
  std::uint64_t macs_ = 0;
};

}  // namespace gff
