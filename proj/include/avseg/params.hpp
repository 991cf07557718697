#pragma once

#include <map>
#include <string>
#include <vector>

#include "avseg/autodiff.hpp"
#include "avseg/rng.hpp"
#include "avseg/tensor.hpp"

namespace avseg {

/// Named learnable tensors, iterated in insertion order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const std::vector<std::string>& names() const noexcept { return order_; }
  std::size_t total_size() const;
  bool all_finite() const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> values_;
};

/// Parameters of a store lifted into graph leaves of precision Real.
/// Trainable binds make every leaf a parameter; individual leaves can be
/// replaced (used to differentiate with respect to a single tensor).
template <typename Real>
class Bound {
 public:
  Bound(const ParamStore& store, bool trainable);

  const ad::Var<Real>& operator()(const std::string& name) const;
  void replace(const std::string& name, ad::Var<Real> var);
  const std::map<std::string, ad::Var<Real>>& vars() const noexcept { return vars_; }

 private:
  std::map<std::string, ad::Var<Real>> vars_;
};

/// Weight [in, out] with N(0, gain^2 / in) entries and a zero bias [out].
void init_linear(ParamStore& store, const std::string& prefix, std::int64_t in,
                 std::int64_t out, Rng& rng, double gain = 1.0);

/// x[..., in] W + b over the rows of x viewed as [rows, in].
template <typename Real>
ad::Var<Real> linear(const Bound<Real>& p, const std::string& prefix, const ad::Var<Real>& x);

}  // namespace avseg
