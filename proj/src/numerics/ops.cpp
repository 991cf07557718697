#include "avseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "avseg/errors.hpp"

namespace avseg::ops {

AxisSplit split_axis(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
  }
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

namespace {

template <typename Real>
void require_same_shape(const BasicTensor<Real>& a, const BasicTensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

template <typename Real>
void require_rank2(const BasicTensor<Real>& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

template <typename Real, typename Fn>
BasicTensor<Real> map(const BasicTensor<Real>& x, Fn fn) {
  BasicTensor<Real> out(x.shape());
  const Real* src = x.raw();
  Real* dst = out.raw();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = fn(src[i]);
  return out;
}

template <typename Real, typename Fn>
BasicTensor<Real> zip(const BasicTensor<Real>& a, const BasicTensor<Real>& b, const char* op,
                      Fn fn) {
  require_same_shape(a, b, op);
  BasicTensor<Real> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
  return out;
}

}  // namespace

template <typename Real>
BasicTensor<Real> matmul(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  BasicTensor<Real> out(Shape{m, n});
  const Real* pa = a.raw();
  const Real* pb = b.raw();
  Real* po = out.raw();
  for (std::int64_t i = 0; i < m; ++i) {
    Real* row = po + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const Real av = pa[i * k + p];
      if (av == Real(0)) continue;
      const Real* brow = pb + p * n;
      for (std::int64_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

template <typename Real>
BasicTensor<Real> matmul_nt(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  }
  BasicTensor<Real> out(Shape{m, n});
  const Real* pa = a.raw();
  const Real* pb = b.raw();
  for (std::int64_t i = 0; i < m; ++i) {
    const Real* arow = pa + i * k;
    for (std::int64_t j = 0; j < n; ++j) {
      const Real* brow = pb + j * k;
      Real acc = 0;
      for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[static_cast<std::size_t>(i * n + j)] = acc;
    }
  }
  return out;
}

template <typename Real>
BasicTensor<Real> matmul_tn(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  const auto k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul_tn: inner dimensions disagree for " + shape_str(a.shape()) +
                         "^T x " + shape_str(b.shape()));
  }
  BasicTensor<Real> out(Shape{m, n});
  const Real* pa = a.raw();
  const Real* pb = b.raw();
  Real* po = out.raw();
  for (std::int64_t p = 0; p < k; ++p) {
    const Real* arow = pa + p * m;
    const Real* brow = pb + p * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const Real av = arow[i];
      if (av == Real(0)) continue;
      Real* orow = po + i * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

template <typename Real>
BasicTensor<Real> transpose(const BasicTensor<Real>& a) {
  require_rank2(a, "transpose");
  const auto r = a.dim(0), c = a.dim(1);
  BasicTensor<Real> out(Shape{c, r});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

template <typename Real>
BasicTensor<Real> permute(const BasicTensor<Real>& x, const std::vector<int>& perm) {
  const std::size_t rank = x.rank();
  if (perm.size() != rank) {
    throw DimensionError("permute: permutation length does not match rank of " +
                         shape_str(x.shape()));
  }
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const int p = perm[i];
    if (p < 0 || static_cast<std::size_t>(p) >= rank || seen[static_cast<std::size_t>(p)]) {
      throw DimensionError("permute: invalid permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[i] = x.shape()[static_cast<std::size_t>(p)];
  }
  std::vector<std::int64_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
  std::vector<std::int64_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) src_stride[i] = in_strides[static_cast<std::size_t>(perm[i])];

  BasicTensor<Real> out(out_shape);
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t src = 0;
  for (std::size_t o = 0; o < out.size(); ++o) {
    out[o] = x[static_cast<std::size_t>(src)];
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return out;
}

template <typename Real>
BasicTensor<Real> softmax(const BasicTensor<Real>& x, int axis) {
  const auto s = split_axis(x.shape(), axis);
  BasicTensor<Real> out(x.shape());
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t in = 0; in < s.inner; ++in) {
      const std::int64_t base = o * s.extent * s.inner + in;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::int64_t a = 0; a < s.extent; ++a) mx = std::max(mx, x[base + a * s.inner]);
      Real total = 0;
      for (std::int64_t a = 0; a < s.extent; ++a) {
        const Real e = std::exp(x[base + a * s.inner] - mx);
        out[base + a * s.inner] = e;
        total += e;
      }
      const Real inv = Real(1) / total;
      for (std::int64_t a = 0; a < s.extent; ++a) out[base + a * s.inner] *= inv;
    }
  }
  return out;
}

template <typename Real>
BasicTensor<Real> log_softmax(const BasicTensor<Real>& x, int axis) {
  const auto s = split_axis(x.shape(), axis);
  BasicTensor<Real> out(x.shape());
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t in = 0; in < s.inner; ++in) {
      const std::int64_t base = o * s.extent * s.inner + in;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::int64_t a = 0; a < s.extent; ++a) mx = std::max(mx, x[base + a * s.inner]);
      Real total = 0;
      for (std::int64_t a = 0; a < s.extent; ++a) total += std::exp(x[base + a * s.inner] - mx);
      const Real lse = mx + std::log(total);
      for (std::int64_t a = 0; a < s.extent; ++a) {
        out[base + a * s.inner] = x[base + a * s.inner] - lse;
      }
    }
  }
  return out;
}

template <typename Real>
Real sigmoid_scalar(Real x) {
  if (x >= 0) {
    const Real e = std::exp(-x);
    return Real(1) / (Real(1) + e);
  }
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

template <typename Real>
Real softplus_scalar(Real x) {
  const double xd = static_cast<double>(x);
  const double v = xd > 30.0 ? xd : std::log1p(std::exp(xd));
  return std::max(static_cast<Real>(v), std::numeric_limits<Real>::min());
}

template <typename Real>
Real gelu_scalar(Real x) {
  constexpr Real c = static_cast<Real>(0.7978845608028654);  // sqrt(2/pi)
  const Real u = c * (x + Real(0.044715) * x * x * x);
  return Real(0.5) * x * (Real(1) + std::tanh(u));
}

template <typename Real>
Real gelu_grad_scalar(Real x) {
  constexpr Real c = static_cast<Real>(0.7978845608028654);
  const Real x2 = x * x;
  const Real u = c * (x + Real(0.044715) * x2 * x);
  const Real t = std::tanh(u);
  const Real du = c * (Real(1) + Real(3 * 0.044715) * x2);
  return Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t * t) * du;
}

template <typename Real>
BasicTensor<Real> sigmoid(const BasicTensor<Real>& x) {
  return map(x, [](Real v) { return sigmoid_scalar(v); });
}

template <typename Real>
BasicTensor<Real> softplus(const BasicTensor<Real>& x) {
  return map(x, [](Real v) { return softplus_scalar(v); });
}

template <typename Real>
BasicTensor<Real> gelu(const BasicTensor<Real>& x) {
  return map(x, [](Real v) { return gelu_scalar(v); });
}

template <typename Real>
BasicTensor<Real> relu(const BasicTensor<Real>& x) {
  return map(x, [](Real v) { return v > Real(0) ? v : Real(0); });
}

template <typename Real>
BasicTensor<Real> exp(const BasicTensor<Real>& x) {
  return map(x, [](Real v) { return std::exp(v); });
}

template <typename Real>
BasicTensor<Real> log(const BasicTensor<Real>& x) {
  return map(x, [](Real v) { return std::log(v); });
}

template <typename Real>
BasicTensor<Real> add(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  return zip(a, b, "add", [](Real x, Real y) { return x + y; });
}

template <typename Real>
BasicTensor<Real> sub(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  return zip(a, b, "sub", [](Real x, Real y) { return x - y; });
}

template <typename Real>
BasicTensor<Real> mul(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  return zip(a, b, "mul", [](Real x, Real y) { return x * y; });
}

template <typename Real>
BasicTensor<Real> div(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  return zip(a, b, "div", [](Real x, Real y) { return x / y; });
}

template <typename Real>
BasicTensor<Real> scale(const BasicTensor<Real>& a, Real s) {
  return map(a, [s](Real v) { return v * s; });
}

template <typename Real>
Real sum(const BasicTensor<Real>& x) {
  Real acc = 0;
  for (Real v : x.data()) acc += v;
  return acc;
}

template <typename Real>
Real mean(const BasicTensor<Real>& x) {
  if (x.empty()) throw DimensionError("mean of empty tensor");
  return sum(x) / static_cast<Real>(x.size());
}

template <typename Real>
Real max_value(const BasicTensor<Real>& x) {
  if (x.empty()) throw DimensionError("max of empty tensor");
  return *std::max_element(x.data().begin(), x.data().end());
}

template <typename Real>
BasicTensor<Real> sum_axis(const BasicTensor<Real>& x, int axis) {
  const auto s = split_axis(x.shape(), axis);
  Shape out_shape;
  const int rank = static_cast<int>(x.rank());
  const int ax = axis < 0 ? axis + rank : axis;
  for (int i = 0; i < rank; ++i)
    if (i != ax) out_shape.push_back(x.shape()[static_cast<std::size_t>(i)]);
  if (out_shape.empty()) out_shape.push_back(1);
  BasicTensor<Real> out(out_shape);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t a = 0; a < s.extent; ++a)
      for (std::int64_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += x[(o * s.extent + a) * s.inner + in];
  return out;
}

template <typename Real>
BasicTensor<Real> l2_normalize(const BasicTensor<Real>& x, int axis, std::size_t* degenerate) {
  const auto s = split_axis(x.shape(), axis);
  BasicTensor<Real> out(x.shape());
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t in = 0; in < s.inner; ++in) {
      const std::int64_t base = o * s.extent * s.inner + in;
      Real sq = 0;
      for (std::int64_t a = 0; a < s.extent; ++a) sq += x[base + a * s.inner] * x[base + a * s.inner];
      if (sq == Real(0)) {
        if (degenerate) ++*degenerate;
        continue;
      }
      const Real inv = Real(1) / std::sqrt(sq);
      for (std::int64_t a = 0; a < s.extent; ++a) out[base + a * s.inner] = x[base + a * s.inner] * inv;
    }
  }
  return out;
}

template <typename Real>
std::vector<std::int64_t> argmax(const BasicTensor<Real>& x, int axis) {
  const auto s = split_axis(x.shape(), axis);
  std::vector<std::int64_t> out(static_cast<std::size_t>(s.outer * s.inner));
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t in = 0; in < s.inner; ++in) {
      const std::int64_t base = o * s.extent * s.inner + in;
      std::int64_t best = 0;
      for (std::int64_t a = 1; a < s.extent; ++a)
        if (x[base + a * s.inner] > x[base + best * s.inner]) best = a;
      out[static_cast<std::size_t>(o * s.inner + in)] = best;
    }
  }
  return out;
}

#define AVSEG_INSTANTIATE_OPS(R)                                                          \
  template BasicTensor<R> matmul(const BasicTensor<R>&, const BasicTensor<R>&);           \
  template BasicTensor<R> matmul_nt(const BasicTensor<R>&, const BasicTensor<R>&);        \
  template BasicTensor<R> matmul_tn(const BasicTensor<R>&, const BasicTensor<R>&);        \
  template BasicTensor<R> transpose(const BasicTensor<R>&);                               \
  template BasicTensor<R> permute(const BasicTensor<R>&, const std::vector<int>&);        \
  template BasicTensor<R> softmax(const BasicTensor<R>&, int);                            \
  template BasicTensor<R> log_softmax(const BasicTensor<R>&, int);                        \
  template BasicTensor<R> sigmoid(const BasicTensor<R>&);                                 \
  template BasicTensor<R> softplus(const BasicTensor<R>&);                                \
  template BasicTensor<R> gelu(const BasicTensor<R>&);                                    \
  template BasicTensor<R> relu(const BasicTensor<R>&);                                    \
  template BasicTensor<R> exp(const BasicTensor<R>&);                                     \
  template BasicTensor<R> log(const BasicTensor<R>&);                                     \
  template BasicTensor<R> add(const BasicTensor<R>&, const BasicTensor<R>&);              \
  template BasicTensor<R> sub(const BasicTensor<R>&, const BasicTensor<R>&);              \
  template BasicTensor<R> mul(const BasicTensor<R>&, const BasicTensor<R>&);              \
  template BasicTensor<R> div(const BasicTensor<R>&, const BasicTensor<R>&);              \
  template BasicTensor<R> scale(const BasicTensor<R>&, R);                                \
  template R sum(const BasicTensor<R>&);                                                  \
  template R mean(const BasicTensor<R>&);                                                 \
  template R max_value(const BasicTensor<R>&);                                            \
  template BasicTensor<R> sum_axis(const BasicTensor<R>&, int);                           \
  template BasicTensor<R> l2_normalize(const BasicTensor<R>&, int, std::size_t*);         \
  template std::vector<std::int64_t> argmax(const BasicTensor<R>&, int);                  \
  template R gelu_scalar(R);                                                              \
  template R gelu_grad_scalar(R);                                                         \
  template R softplus_scalar(R);                                                          \
  template R sigmoid_scalar(R);

AVSEG_INSTANTIATE_OPS(float)
AVSEG_INSTANTIATE_OPS(double)

#undef AVSEG_INSTANTIATE_OPS

}  // namespace avseg::ops
