#include "avseg/params.hpp"

#include <cmath>

#include "avseg/errors.hpp"

namespace avseg {

void ParamStore::add(const std::string& name, Tensor value) {
  if (!values_.emplace(name, std::move(value)).second) {
    throw ContractError("parameter '" + name + "' registered twice");
  }
  order_.push_back(name);
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : values_) n += t.size();
  return n;
}

bool ParamStore::all_finite() const {
  for (const auto& [_, t] : values_)
    if (!t.all_finite()) return false;
  return true;
}

template <typename Real>
Bound<Real>::Bound(const ParamStore& store, bool trainable) {
  for (const auto& name : store.names()) {
    auto value = store.at(name).cast<Real>();
    vars_.emplace(name, trainable ? ad::parameter(std::move(value)) : ad::constant(std::move(value)));
  }
}

template <typename Real>
const ad::Var<Real>& Bound<Real>::operator()(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename Real>
void Bound<Real>::replace(const std::string& name, ad::Var<Real> var) {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("unknown parameter '" + name + "'");
  if (it->second.shape() != var.shape()) {
    throw DimensionError("parameter '" + name + "' is " + shape_str(it->second.shape()) +
                         ", replacement is " + shape_str(var.shape()));
  }
  it->second = std::move(var);
}

void init_linear(ParamStore& store, const std::string& prefix, std::int64_t in,
                 std::int64_t out, Rng& rng, double gain) {
  Tensor w(Shape{in, out});
  const double sd = gain / std::sqrt(double(in));
  for (auto& v : w.data()) v = static_cast<float>(rng.normal() * sd);
  store.add(prefix + ".w", std::move(w));
  store.add(prefix + ".b", Tensor(Shape{out}));
}

template <typename Real>
ad::Var<Real> linear(const Bound<Real>& p, const std::string& prefix, const ad::Var<Real>& x) {
  const auto& w = p(prefix + ".w");
  const std::int64_t in = w.dim(0);
  if (x.shape().empty() || x.shape().back() != in) {
    throw DimensionError("linear '" + prefix + "': input " + shape_str(x.shape()) +
                         " for weight " + shape_str(w.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  const auto rows = std::int64_t(x.size()) / in;
  auto y = ad::add_bias(ad::matmul(ad::reshape(x, {rows, in}), w), p(prefix + ".b"));
  return ad::reshape(y, std::move(out_shape));
}

template class Bound<float>;
template class Bound<double>;
template ad::Var<float> linear(const Bound<float>&, const std::string&, const ad::Var<float>&);
template ad::Var<double> linear(const Bound<double>&, const std::string&, const ad::Var<double>&);

}  // namespace avseg
