#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <new>
#include <string>
#include <vector>

namespace rmfn {

namespace detail {

// All tensor storage is 64-byte aligned. Eigen (and FFTW) pick SIMD kernels
// and loop peeling from the pointer's alignment, so heap-history-dependent
// addresses would change low-order bits between otherwise identical runs;
// byte-identical artifacts require a fixed alignment class.
template <class T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign}));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t{kAlign});
  }

  template <class U>
  bool operator==(const AlignedAlloc<U>&) const {
    return true;
  }
  template <class U>
  bool operator!=(const AlignedAlloc<U>&) const {
    return false;
  }
};

}  // namespace detail

using TensorBuffer = std::vector<double, detail::AlignedAlloc<double>>;

// Dense row-major 64-bit float array. Copies are shallow; all library
// operations treat tensors as immutable values and allocate fresh storage
// for results. The single mutating path is ParamSet's optimizer update.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, std::vector<double> values);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t size() const { return size_; }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }

  double& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

  // Rank-2 accessor; rows*cols layout.
  double& at(int64_t r, int64_t c) { return (*data_)[static_cast<size_t>(r * shape_[1] + c)]; }
  double at(int64_t r, int64_t c) const { return (*data_)[static_cast<size_t>(r * shape_[1] + c)]; }

  Tensor reshaped(std::vector<int64_t> shape) const;
  Tensor clone() const;

  bool all_finite() const;
  std::string shape_str() const;

  static std::string shape_str(const std::vector<int64_t>& s);
  static int64_t shape_size(const std::vector<int64_t>& s);

 private:
  std::vector<int64_t> shape_;
  int64_t size_ = 0;
  std::shared_ptr<TensorBuffer> data_ = std::make_shared<TensorBuffer>();
};

}  // namespace rmfn
