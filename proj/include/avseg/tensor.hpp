#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace avseg {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Dense row-major array. `Tensor` (float) is the carrier used everywhere;
/// `Tensor64` exists for finite-difference checks and 64-bit oracles.
template <typename Real>
class BasicTensor {
 public:
  using value_type = Real;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, Real fill = Real(0));
  BasicTensor(Shape shape, std::vector<Real> data);

  static BasicTensor scalar(Real value) { return BasicTensor(Shape{1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real* raw() noexcept { return data_.data(); }
  const Real* raw() const noexcept { return data_.data(); }
  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }

  // 2-D convenience accessors; no bounds checks.
  Real& at(std::int64_t r, std::int64_t c) noexcept { return data_[r * shape_.back() + c]; }
  Real at(std::int64_t r, std::int64_t c) const noexcept {
    return data_[r * shape_.back() + c];
  }

  Real item() const;

  BasicTensor reshape(Shape shape) const&;
  BasicTensor reshape(Shape shape) &&;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const noexcept;

  /// Exact equality of shape and element bits.
  bool bitwise_equal(const BasicTensor& other) const noexcept;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace avseg
