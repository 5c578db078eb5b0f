#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cno/error.hpp"

namespace cno {

/// Four-axis shape (batch, channels, height, width). Vectors and matrices use
/// leading unit axes so every tensor in the framework shares one layout.
struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::array<std::size_t, 4> dims() const { return {n, c, h, w}; }
  std::string str() const;
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    require(data_.size() == shape_.numel(), ErrorKind::shape,
            "tensor data length does not match shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }
  /// Contiguous block holding sample `n` (all channels).
  T* sample(std::size_t n) { return data_.data() + n * shape_.c * shape_.plane(); }
  const T* sample(std::size_t n) const { return data_.data() + n * shape_.c * shape_.plane(); }

  T& operator()(std::size_t n, std::size_t c, std::size_t i, std::size_t j) {
    return data_[((n * shape_.c + c) * shape_.h + i) * shape_.w + j];
  }
  T operator()(std::size_t n, std::size_t c, std::size_t i, std::size_t j) const {
    return data_[((n * shape_.c + c) * shape_.h + i) * shape_.w + j];
  }
  T& operator[](std::size_t k) { return data_[k]; }
  T operator[](std::size_t k) const { return data_[k]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require(o.shape_ == shape_, ErrorKind::shape, "tensor add: " + shape_.str() + " vs " + o.shape_.str());
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Samples [first, first + count) as a new tensor.
  Tensor slice(std::size_t first, std::size_t count) const {
    require(first + count <= shape_.n, ErrorKind::shape, "tensor slice out of range");
    const std::size_t per = shape_.c * shape_.plane();
    Shape s = shape_;
    s.n = count;
    return Tensor(s, std::vector<T>(data_.begin() + first * per, data_.begin() + (first + count) * per));
  }

  /// Gathers the listed samples, in order.
  Tensor gather(std::span<const std::size_t> idx) const {
    const std::size_t per = shape_.c * shape_.plane();
    Shape s = shape_;
    s.n = idx.size();
    Tensor out(s);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      require(idx[k] < shape_.n, ErrorKind::shape, "tensor gather index out of range");
      std::copy_n(sample(idx[k]), per, out.sample(k));
    }
    return out;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

inline std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

}  // namespace cno
