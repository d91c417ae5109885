#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

namespace recbase::nn {

/// Dense row-major tensor. Values are held in double; parameters are rounded
/// to float32 on every optimizer update so that the checkpoint payload is exact.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}
  Tensor(std::vector<size_t> shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  /// Leading dimension for 2-D use; 1 for vectors.
  size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
  /// Trailing dimension.
  size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }
  double& at(size_t r, size_t c) { return data_[r * cols() + c]; }
  double at(size_t r, size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(std::vector<size_t> shape);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  static size_t count(const std::vector<size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), size_t{1}, std::multiplies<>());
  }

 private:
  std::vector<size_t> shape_;
  std::vector<double> data_;
};

/// Throws ShapeError unless a and b have identical shapes.
void expect_same_shape(const char* op, const Tensor& a, const Tensor& b);

}  // namespace recbase::nn
