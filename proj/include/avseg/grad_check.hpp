#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "avseg/autodiff.hpp"
#include "avseg/errors.hpp"
#include "avseg/rng.hpp"
#include "avseg/tensor.hpp"

namespace avseg {

struct GradCheckOptions {
  double step = 1e-3;
  /// 0 checks every coordinate; otherwise a seeded random subset of this size.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares the reverse-mode gradient of a scalar computation against
/// central differences.
///
/// `fn` is called as fn(ad::Var<float>) for the analytic gradient and as
/// fn(ad::Var<double>) for the finite differences, so it is normally a generic
/// lambda. The reported error per coordinate is
///   |analytic - numeric| / max(1, |numeric|).
template <typename Fn>
GradCheckResult grad_check(Fn&& fn, const Tensor& x, const GradCheckOptions& options = {}) {
  auto input = ad::parameter(x);
  ad::Var<float> out = fn(input);
  if (!out.defined() || out.size() != 1) {
    throw ContractError("grad_check: function must return a scalar");
  }
  ad::backward(out);
  const Tensor analytic = input.grad();

  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_coords != 0 && options.max_coords < coords.size()) {
    Rng rng(options.seed);
    for (std::size_t i = 0; i < options.max_coords; ++i) {
      const auto j = i + rng.uniform_int(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(options.max_coords);
  }

  const Tensor64 base = x.cast<double>();
  auto eval = [&](const Tensor64& point) {
    ad::Var<double> y = fn(ad::constant(point));
    if (!y.defined() || y.size() != 1) throw ContractError("grad_check: function must return a scalar");
    return y.item();
  };

  GradCheckResult result;
  for (std::size_t i : coords) {
    Tensor64 plus = base, minus = base;
    plus[i] += options.step;
    minus[i] -= options.step;
    const double numeric = (eval(plus) - eval(minus)) / (2.0 * options.step);
    const double err =
        std::abs(static_cast<double>(analytic[i]) - numeric) / std::max(1.0, std::abs(numeric));
    if (!(err <= result.max_error)) {  // also catches NaN
      result.max_error = std::isnan(err) ? INFINITY : err;
      result.worst_index = i;
    }
    ++result.checked;
  }
  return result;
}

}  // namespace avseg
