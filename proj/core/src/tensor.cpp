#include "rmfn/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rmfn {

int64_t Tensor::shape_size(const std::vector<int64_t>& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw std::invalid_argument("tensor dimension must be non-negative");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)), size_(shape_size(shape_)) {
  data_ = std::make_shared<TensorBuffer>(static_cast<size_t>(size_), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), size_(shape_size(shape_)) {
  if (static_cast<int64_t>(values.size()) != size_)
    throw std::invalid_argument("tensor value count does not match shape " + shape_str(shape_));
  data_ = std::make_shared<TensorBuffer>(values.begin(), values.end());
}

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = v;
  return t;
}

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
  if (shape_size(shape) != size_)
    throw std::invalid_argument("reshape size mismatch: " + shape_str(shape_) + " -> " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.size_ = size_;
  t.data_ = data_;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.size_ = size_;
  t.data_ = std::make_shared<TensorBuffer>(*data_);
  return t;
}

bool Tensor::all_finite() const {
  const double* p = data();
  for (int64_t i = 0; i < size_; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

std::string Tensor::shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

std::string Tensor::shape_str() const { return shape_str(shape_); }

}  // namespace rmfn
