#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace windfc {

// Error taxonomy shared by every module.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major tensor of doubles.
///
/// Every numeric routine in the library works on rank-2 tensors; a scalar is
/// 1x1 and a vector is 1xn. Higher ranks are representable but only used as
/// storage.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_size(shape_) != values_.size()) {
      throw DimensionError("tensor shape " + shape_str(shape_) + " holds " +
                           std::to_string(shape_size(shape_)) + " values, got " +
                           std::to_string(values_.size()));
    }
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) { return full(rows, cols, 0.0); }
  static Tensor full(std::size_t rows, std::size_t cols, double v) {
    return Tensor({rows, cols}, std::vector<double>(rows * cols, v));
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }
  static Tensor zeros_like(const Tensor& t) {
    return Tensor(t.shape_, std::vector<double>(t.values_.size(), 0.0));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::size_t rows() const {
    require_rank2();
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank2();
    return shape_[1];
  }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> data() noexcept { return values_; }
  std::span<const double> data() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  double item() const {
    if (values_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    return values_[0];
  }

  bool all_finite() const noexcept {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const = default;

 private:
  void require_rank2() const {
    if (shape_.size() != 2) throw DimensionError("expected rank-2 tensor, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> values_;
};

}  // namespace windfc
