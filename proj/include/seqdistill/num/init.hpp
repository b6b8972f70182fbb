#pragma once

#include <cmath>
#include <string>

#include "seqdistill/num/rng.hpp"
#include "seqdistill/num/tensor.hpp"

namespace seqdistill::num {

enum class InitScheme { zeros, uniform_xavier, normal };

inline InitScheme parse_init_scheme(const std::string& s) {
  if (s == "zeros") return InitScheme::zeros;
  if (s == "uniform-xavier" || s == "xavier") return InitScheme::uniform_xavier;
  if (s == "normal") return InitScheme::normal;
  fail(ErrorKind::config, "unknown init scheme '" + s + "'");
}

// Xavier fan-in/fan-out use the last two extents (rank-1 shapes use the
// length for both).
template <class T>
Tensor<T> seeded_init(const Shape& shape, InitScheme scheme, Rng& rng, double sigma = 0.02) {
  Tensor<T> out(shape);
  switch (scheme) {
    case InitScheme::zeros:
      break;
    case InitScheme::uniform_xavier: {
      double fan_in = static_cast<double>(shape.size() >= 2 ? shape[shape.size() - 2] : shape.back());
      double fan_out = static_cast<double>(shape.back());
      double a = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : out.data) v = static_cast<T>(rng.uniform(-a, a));
      break;
    }
    case InitScheme::normal:
      for (auto& v : out.data) v = static_cast<T>(rng.normal(0.0, sigma));
      break;
  }
  return out;
}

}  // namespace seqdistill::num
