// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tb {

using Dims = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

/// Row-major array of finite doubles. Rank 0 holds a single scalar.
class DenseArray {
 public:
  DenseArray() : data_(1, 0.0) {}

  explicit DenseArray(Dims dims, double fill = 0.0)
      : dims_(std::move(dims)), data_(dims_product(dims_), fill) {
    if (!std::isfinite(fill)) throw std::domain_error("DenseArray: non-finite fill value");
  }

  DenseArray(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (dims_product(dims_) != data_.size()) {
      throw ShapeError("DenseArray: dims " + dims_to_string(dims_) + " need " +
                       std::to_string(dims_product(dims_)) + " values, got " +
                       std::to_string(data_.size()));
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw std::domain_error("DenseArray: non-finite value");
    }
  }

  static DenseArray scalar(double v) { return DenseArray(Dims{}, std::vector<double>{v}); }

  // Skips the finiteness scan; for kernels whose inputs are already validated.
  static DenseArray unchecked(Dims dims, std::vector<double> data) {
    DenseArray a;
    a.dims_ = std::move(dims);
    a.data_ = std::move(data);
    return a;
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("DenseArray::item on array of dims " + dims_to_string(dims_));
    return data_[0];
  }

  DenseArray reshaped(Dims dims) const {
    if (dims_product(dims) != data_.size()) {
      throw ShapeError("reshape " + dims_to_string(dims_) + " -> " + dims_to_string(dims));
    }
    return unchecked(std::move(dims), data_);
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const DenseArray& a, const DenseArray& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Dims dims_;
  std::vector<double> data_;
};

}  // namespace tb
