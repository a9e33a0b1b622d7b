#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "deblur/error.hpp"

namespace deblur {

struct Shape {
  int batch = 1;
  int channels = 1;
  int height = 1;
  int width = 1;

  std::size_t numel() const noexcept {
    return static_cast<std::size_t>(batch) * channels * height * width;
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
  std::size_t item() const noexcept { return static_cast<std::size_t>(channels) * plane(); }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(batch) + "," + std::to_string(channels) + "," +
           std::to_string(height) + "," + std::to_string(width) + ")";
  }
};

/// Dense NCHW array. Images live in [-1, 1] by convention.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape), data_(checked(shape).numel(), fill) {}
  Tensor(int b, int c, int h, int w, T fill = T{0}) : Tensor(Shape{b, c, h, w}, fill) {}

  const Shape& shape() const noexcept { return shape_; }
  int batch() const noexcept { return shape_.batch; }
  int channels() const noexcept { return shape_.channels; }
  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t index(int b, int c, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(b) * shape_.channels + c) * shape_.height + y) *
               shape_.width + x;
  }
  T& at(int b, int c, int y, int x) noexcept { return data_[index(b, c, y, x)]; }
  const T& at(int b, int c, int y, int x) const noexcept { return data_[index(b, c, y, x)]; }

  /// One H*W plane.
  std::span<T> plane(int b, int c) noexcept {
    return std::span<T>(data_).subspan(index(b, c, 0, 0), shape_.plane());
  }
  std::span<const T> plane(int b, int c) const noexcept {
    return std::span<const T>(data_).subspan(index(b, c, 0, 0), shape_.plane());
  }
  /// One C*H*W batch item.
  std::span<T> item(int b) noexcept {
    return std::span<T>(data_).subspan(index(b, 0, 0, 0), shape_.item());
  }
  std::span<const T> item(int b) const noexcept {
    return std::span<const T>(data_).subspan(index(b, 0, 0, 0), shape_.item());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.storage().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  /// Copies batch item `b` into a batch-1 tensor.
  Tensor slice(int b) const {
    Tensor out(Shape{1, shape_.channels, shape_.height, shape_.width});
    auto src = item(b);
    std::copy(src.begin(), src.end(), out.storage().begin());
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  static const Shape& checked(const Shape& s) {
    if (s.batch < 1 || s.channels < 1 || s.height < 1 || s.width < 1)
      throw DimensionError("tensor dimensions must be >= 1, got " + s.str());
    return s;
  }

  Shape shape_{};
  std::vector<T> data_;
};

/// Stacks equally shaped batch-1 (or batch-n) tensors along the batch axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw DimensionError("stack: no tensors");
  Shape s = items[0].shape();
  int total = 0;
  for (const auto& t : items) {
    const Shape& ts = t.shape();
    if (ts.channels != s.channels || ts.height != s.height || ts.width != s.width)
      throw DimensionError("stack: mismatched shapes " + s.str() + " vs " + ts.str());
    total += ts.batch;
  }
  s.batch = total;
  Tensor<T> out(s);
  auto dst = out.storage().begin();
  for (const auto& t : items) dst = std::copy(t.storage().begin(), t.storage().end(), dst);
  return out;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
}

}  // namespace deblur
