#include "avseg/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "avseg/errors.hpp"

namespace avseg {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

template <typename Real>
BasicTensor<Real>::BasicTensor(Shape shape, Real fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

template <typename Real>
BasicTensor<Real>::BasicTensor(Shape shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

template <typename Real>
std::int64_t BasicTensor<Real>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape_));
  }
  return shape_[axis];
}

template <typename Real>
Real BasicTensor<Real>::item() const {
  if (data_.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::reshape(Shape shape) const& {
  return BasicTensor(std::move(shape), data_);
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::reshape(Shape shape) && {
  return BasicTensor(std::move(shape), std::move(data_));
}

template <typename Real>
bool BasicTensor<Real>::all_finite() const noexcept {
  for (Real v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename Real>
bool BasicTensor<Real>::bitwise_equal(const BasicTensor& other) const noexcept {
  return shape_ == other.shape_ && data_.size() == other.data_.size() &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(Real)) == 0);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace avseg
