#pragma once

#include <cstdint>
#include <vector>

namespace evowarn {

// Dense row-major tensor of 64-bit floats.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_[axis]; }
  long size() const { return static_cast<long>(values_.size()); }
  bool empty() const { return values_.empty(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double& operator[](long i) { return values_[i]; }
  double operator[](long i) const { return values_[i]; }

  double& at(int i, int j) { return values_[static_cast<long>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return values_[static_cast<long>(i) * shape_[1] + j]; }
  double& at(int i, int j, int k) {
    return values_[(static_cast<long>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at(int i, int j, int k) const {
    return values_[(static_cast<long>(i) * shape_[1] + j) * shape_[2] + k];
  }

  // Same data, new shape (sizes must agree).
  Tensor reshaped(std::vector<int> shape) const;

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<int> shape_;
  std::vector<double> values_;
};

}  // namespace evowarn
