#pragma once

#include <cstddef>
#include <vector>

#include "avseg/tensor.hpp"

/// Value-level tensor math. Every function is pure; the differentiable
/// counterparts in avseg::ad reuse these kernels for their forward pass.
namespace avseg::ops {

/// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::int64_t outer;
  std::int64_t extent;
  std::int64_t inner;
};
AxisSplit split_axis(const Shape& shape, int axis);

template <typename Real>
BasicTensor<Real> matmul(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
/// a * b^T
template <typename Real>
BasicTensor<Real> matmul_nt(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
/// a^T * b
template <typename Real>
BasicTensor<Real> matmul_tn(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
template <typename Real>
BasicTensor<Real> transpose(const BasicTensor<Real>& a);
template <typename Real>
BasicTensor<Real> permute(const BasicTensor<Real>& x, const std::vector<int>& perm);

/// Softmax along `axis` with max subtraction; negative axes count from the end.
template <typename Real>
BasicTensor<Real> softmax(const BasicTensor<Real>& x, int axis);
template <typename Real>
BasicTensor<Real> log_softmax(const BasicTensor<Real>& x, int axis);

template <typename Real>
BasicTensor<Real> sigmoid(const BasicTensor<Real>& x);
/// log(1 + e^x), clamped below at the smallest normal so the result is
/// strictly positive even where e^x underflows.
template <typename Real>
BasicTensor<Real> softplus(const BasicTensor<Real>& x);
/// tanh approximation of GELU.
template <typename Real>
BasicTensor<Real> gelu(const BasicTensor<Real>& x);
template <typename Real>
BasicTensor<Real> relu(const BasicTensor<Real>& x);
template <typename Real>
BasicTensor<Real> exp(const BasicTensor<Real>& x);
template <typename Real>
BasicTensor<Real> log(const BasicTensor<Real>& x);

template <typename Real>
BasicTensor<Real> add(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
template <typename Real>
BasicTensor<Real> sub(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
template <typename Real>
BasicTensor<Real> mul(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
template <typename Real>
BasicTensor<Real> div(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
template <typename Real>
BasicTensor<Real> scale(const BasicTensor<Real>& a, Real s);

template <typename Real>
Real sum(const BasicTensor<Real>& x);
template <typename Real>
Real mean(const BasicTensor<Real>& x);
template <typename Real>
Real max_value(const BasicTensor<Real>& x);
template <typename Real>
BasicTensor<Real> sum_axis(const BasicTensor<Real>& x, int axis);

/// Unit-norm along `axis`. Zero vectors map to zero vectors; each one found
/// increments *degenerate (when given).
template <typename Real>
BasicTensor<Real> l2_normalize(const BasicTensor<Real>& x, int axis,
                               std::size_t* degenerate = nullptr);

/// Index of the largest element along `axis` (first on ties), axis removed.
template <typename Real>
std::vector<std::int64_t> argmax(const BasicTensor<Real>& x, int axis);

// Scalar helpers shared with the autodiff kernels.
template <typename Real>
Real gelu_scalar(Real x);
template <typename Real>
Real gelu_grad_scalar(Real x);
template <typename Real>
Real softplus_scalar(Real x);
template <typename Real>
Real sigmoid_scalar(Real x);

}  // namespace avseg::ops
