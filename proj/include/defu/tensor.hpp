#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "defu/errors.hpp"

namespace defu {

/// Tensor shape in batch-channel-height-width order. Every extent is >= 1.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t numel() const noexcept { return n * c * h * w; }
  std::size_t plane() const noexcept { return h * w; }
  std::size_t operator[](Axis axis) const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

/// Throws DimensionError unless every extent is at least one.
void validate_shape(const Shape& shape);

/// Dense 4-D tensor, row-major N->C->H->W. Value semantics: copies deep-copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : data_(1, T(0)) {}

  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(shape) {
    validate_shape(shape_);
    data_.assign(shape_.numel(), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(shape), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_.numel()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + to_string(shape_));
    }
  }

  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h,
                     std::size_t w) const noexcept {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[offset(n, c, h, w)];
  }
  T at(std::size_t n, std::size_t c, std::size_t h,
       std::size_t w) const noexcept {
    return data_[offset(n, c, h, w)];
  }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Value of a single-element tensor.
  T item() const {
    if (numel() != 1) {
      throw DimensionError("item() on tensor of shape " + to_string(shape_));
    }
    return data_[0];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Largest absolute elementwise difference. Shapes must match.
template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return worst;
}

}  // namespace defu
