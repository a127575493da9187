#include "evowarn/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace evowarn {

namespace {
long shape_product(const std::vector<int>& shape) {
  long p = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("tensor dimension must be non-negative");
    p *= d;
  }
  return p;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), values_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_product(shape_) != static_cast<long>(values_.size()))
    throw std::invalid_argument("tensor value count does not match shape");
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (shape_product(shape) != size())
    throw std::invalid_argument("reshape changes element count");
  return Tensor(std::move(shape), values_);
}

bool Tensor::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace evowarn
