#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pkfr/num/errors.hpp"

namespace pkfr::num {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. A rank-0 array (empty shape) holds one scalar.
template <std::floating_point T>
class Array {
 public:
  using value_type = T;

  Array() : data_(1, T{0}) {}

  explicit Array(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_dims();
    data_.assign(shape_size(shape_), fill);
  }

  Array(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("Array: shape " + shape_string(shape_) + " needs " +
                       std::to_string(shape_size(shape_)) + " values, got " +
                       std::to_string(data_.size()));
    }
  }

  static Array scalar(T v) { return Array(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  /// Axis length; negative axes count from the end.
  std::size_t dim(int axis) const {
    const int r = static_cast<int>(shape_.size());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw ShapeError("Array::dim: axis out of range");
    return shape_[static_cast<std::size_t>(a)];
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }

  T item() const {
    if (data_.size() != 1) throw ShapeError("Array::item: not a scalar " + shape_string(shape_));
    return data_[0];
  }

  Array reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
    }
    return Array(std::move(shape), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <std::floating_point U>
  Array<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Array<U>(shape_, std::move(out));
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("Array: zero-length axis in " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

template <std::floating_point T>
T max_abs_diff(const Array<T>& a, const Array<T>& b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: size mismatch");
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace pkfr::num
