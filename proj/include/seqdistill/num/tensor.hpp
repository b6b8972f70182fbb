#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "seqdistill/error.hpp"

namespace seqdistill::num {

using Shape = std::vector<std::size_t>;

enum class Dtype { f32, f64 };

template <class T>
constexpr Dtype dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "f32 or f64 only");
  return std::is_same_v<T, float> ? Dtype::f32 : Dtype::f64;
}

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

// Dense row-major array. Rank 0 is represented as shape {1}.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_size(shape), fill) {
    check_shape();
  }

  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    check_shape();
    require(data.size() == shape_size(shape),
            "tensor data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool empty() const { return data.empty(); }

  std::size_t dim(int axis) const {
    int r = static_cast<int>(shape.size());
    int a = axis < 0 ? axis + r : axis;
    require(a >= 0 && a < r, "axis out of range");
    return shape[static_cast<std::size_t>(a)];
  }

  // Extent of the last axis, and the product of all others.
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  std::size_t rows() const { return shape.empty() ? 1 : size() / cols(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  T* row(std::size_t r) { return data.data() + r * cols(); }
  const T* row(std::size_t r) const { return data.data() + r * cols(); }

  T item() const {
    require(size() == 1, "item() on non-scalar tensor " + shape_str(shape));
    return data[0];
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

 private:
  void check_shape() const {
    for (std::size_t e : shape) require(e > 0, "tensor extents must be positive, got " + shape_str(shape));
  }
};

}  // namespace seqdistill::num
