#pragma once

#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "difd/error.hpp"

namespace difd::ndgrad {

using Shape = std::vector<std::size_t>;

inline std::size_t num_elements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

/// Dense row-major array of doubles. Rank 1 or 2 in practice; a rank-1
/// tensor of length C behaves as a 1 x C matrix.
struct Tensor {
  Shape shape{1};
  std::vector<double> data = std::vector<double>(1, 0.0);

  Tensor() = default;

  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(num_elements(shape), fill) {
    validate();
  }

  Tensor(Shape s, std::vector<double> values)
      : shape(std::move(s)), data(std::move(values)) {
    validate();
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }

  std::size_t size() const noexcept { return data.size(); }

  std::size_t rows() const noexcept { return shape.size() == 1 ? 1 : shape[0]; }
  std::size_t cols() const noexcept { return shape.back(); }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  void validate() const {
    if (shape.empty() || shape.size() > 2) {
      fail(ErrorKind::shape, "tensor rank must be 1 or 2, got " + to_string(shape));
    }
    for (auto d : shape) {
      if (d == 0) fail(ErrorKind::shape, "tensor dims must be >= 1, got " + to_string(shape));
    }
    if (data.size() != num_elements(shape)) {
      fail(ErrorKind::shape, "tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + to_string(shape));
    }
  }
};

}  // namespace difd::ndgrad
