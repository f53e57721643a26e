#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ctdg/error.hpp"

namespace ctdg::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s);

// Dense row-major tensor. Value type; copies copy the payload.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape)) {
      throw DimensionError("tensor payload of " + std::to_string(data.size()) +
                           " elements does not match shape " + shape_str(shape));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  // Size of the last axis; 1 for scalars.
  std::size_t inner() const noexcept { return shape.empty() ? 1 : shape.back(); }
  std::size_t outer() const noexcept { return inner() == 0 ? 0 : size() / inner(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T item() const {
    if (data.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape));
    return data[0];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

}  // namespace ctdg::nn
