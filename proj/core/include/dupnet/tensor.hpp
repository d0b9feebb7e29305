#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dupnet/error.hpp"

namespace dupnet {

// NCHW extents. Weights reuse the same struct as [c_out, c_in, k, k].
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t count() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

// Dense row-major (n, c, h, w) tensor.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{})
      : shape_(shape), data_(shape.count(), fill) {}
  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using IntTensor = BasicTensor<std::int32_t>;

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& x) {
  std::vector<To> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<To>(x[i]);
  return BasicTensor<To>(x.shape(), std::move(out));
}

// Duplicate g of base channel j lives at channel g*c' + j.
template <typename T>
BasicTensor<T> channel_tile(const BasicTensor<T>& x, std::size_t d) {
  if (d == 0) throw ShapeError("channel_tile: duplication factor must be >= 1");
  const Shape s = x.shape();
  BasicTensor<T> out(Shape{s.n, s.c * d, s.h, s.w});
  const std::size_t plane = s.plane();
  const std::size_t block = s.c * plane;
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t g = 0; g < d; ++g) {
      std::copy(src.begin() + n * block, src.begin() + (n + 1) * block,
                dst.begin() + (n * d + g) * block);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> channel_group_sum(const BasicTensor<T>& x, std::size_t d) {
  const Shape s = x.shape();
  if (d == 0 || s.c % d != 0)
    throw ShapeError("channel_group_sum: " + std::to_string(s.c) +
                     " channels are not divisible by duplication factor " +
                     std::to_string(d));
  const std::size_t base = s.c / d;
  const std::size_t plane = s.plane();
  const std::size_t block = base * plane;
  BasicTensor<T> out(Shape{s.n, base, s.h, s.w});
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    T* o = dst.data() + n * block;
    for (std::size_t g = 0; g < d; ++g) {
      const T* in = src.data() + (n * d + g) * block;
      for (std::size_t i = 0; i < block; ++i) o[i] += in[i];
    }
  }
  return out;
}

Tensor channel_group_mean(const Tensor& x, std::size_t d);

double dot(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& x);
bool all_finite(const Tensor& x);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor& operator+=(Tensor& a, const Tensor& b);

}  // namespace dupnet
