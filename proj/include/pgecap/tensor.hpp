#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pgecap {

using Shape = std::vector<std::size_t>;

/// Raised when a configuration value is out of range (CLI exit code 1).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on malformed or missing input data (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a loss or gradient stops being finite (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Array extents disagree between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

/// Dense row-major array of doubles.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<double> values)
      : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape)) {
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // (channel, row, col) access for rank-3 arrays.
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * shape[1] + y) * shape[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * shape[1] + y) * shape[2] + x];
  }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline void require_same_shape(const Shape& a, const Shape& b,
                               const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) +
                     " vs " + to_string(b));
  }
}

}  // namespace pgecap
