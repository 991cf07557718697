#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "avseg/tensor.hpp"

/// Reverse-mode differentiation on a dynamically recorded graph.
///
/// Every `Var` owns a node holding its value; nodes produced by an operation
/// keep their inputs alive and carry a closure mapping the output cotangent
/// onto input cotangents. `backward(loss)` walks the graph in reverse
/// topological order. Nodes whose inputs are all constants record nothing,
/// so evaluation with constant parameters builds no graph at all.
namespace avseg::ad {

template <typename Real>
struct Node {
  BasicTensor<Real> value;
  BasicTensor<Real> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  BasicTensor<Real>& grad_buffer() {
    if (grad.empty()) grad = BasicTensor<Real>(value.shape());
    return grad;
  }
  /// Gradient buffer of input `i`, or nullptr when that input is constant.
  BasicTensor<Real>* parent_grad(std::size_t i) {
    auto& p = *parents[i];
    return p.requires_grad ? &p.grad_buffer() : nullptr;
  }
  const BasicTensor<Real>& parent_value(std::size_t i) const { return parents[i]->value; }
};

template <typename Real>
class Var {
 public:
  using value_type = Real;

  Var() = default;
  explicit Var(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const BasicTensor<Real>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  Real item() const { return node_->value.item(); }

  /// Accumulated gradient; zeros when backward never reached this node.
  BasicTensor<Real> grad() const {
    return node_->grad.empty() ? BasicTensor<Real>(shape()) : node_->grad;
  }

  Node<Real>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<Real>>& handle() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<Real>> node_;
};

template <typename Real>
Var<Real> parameter(BasicTensor<Real> value) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var<Real>(std::move(n));
}

template <typename Real>
Var<Real> constant(BasicTensor<Real> value) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  return Var<Real>(std::move(n));
}

/// Records an operation. `backward` is called as backward(node) once the
/// node's gradient is complete; it must accumulate into node.parent_grad(i).
template <typename Real, typename Fn>
Var<Real> make_op(BasicTensor<Real> value, std::vector<Var<Real>> inputs, Fn&& backward) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.handle());
    n->backward_fn = std::forward<Fn>(backward);
  }
  return Var<Real>(std::move(n));
}

/// Seeds d(root)/d(root) = 1 and propagates. root must hold one element.
template <typename Real>
void backward(const Var<Real>& root);

template <typename Real>
Var<Real> detach(const Var<Real>& x) {
  return constant(x.value());
}

// Linear algebra
template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> matmul_nt(const Var<Real>& a, const Var<Real>& b);

// Elementwise, identical shapes
template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> div(const Var<Real>& a, const Var<Real>& b);

/// x[..., n] + bias[n], bias broadcast over all leading positions.
template <typename Real>
Var<Real> add_bias(const Var<Real>& x, const Var<Real>& bias);
template <typename Real>
Var<Real> scale(const Var<Real>& x, Real s);
template <typename Real>
Var<Real> add_scalar(const Var<Real>& x, Real s);

template <typename Real>
Var<Real> gelu(const Var<Real>& x);
template <typename Real>
Var<Real> relu(const Var<Real>& x);
template <typename Real>
Var<Real> sigmoid(const Var<Real>& x);
template <typename Real>
Var<Real> softplus(const Var<Real>& x);
template <typename Real>
Var<Real> exp(const Var<Real>& x);
template <typename Real>
Var<Real> log(const Var<Real>& x);

template <typename Real>
Var<Real> softmax(const Var<Real>& x, int axis);
template <typename Real>
Var<Real> log_softmax(const Var<Real>& x, int axis);

/// Scalar sum / mean (shape {1}).
template <typename Real>
Var<Real> sum(const Var<Real>& x);
template <typename Real>
Var<Real> mean(const Var<Real>& x);
template <typename Real>
Var<Real> sum_axis(const Var<Real>& x, int axis);

// Layout
template <typename Real>
Var<Real> reshape(const Var<Real>& x, Shape shape);
template <typename Real>
Var<Real> permute(const Var<Real>& x, const std::vector<int>& perm);
/// out.flat[i] = x.flat[index[i]]; repeated indices scatter-add on backward.
template <typename Real>
Var<Real> gather(const Var<Real>& x, std::vector<std::int64_t> index, Shape out_shape);
/// Stacks equally shaped tensors along a new leading axis.
template <typename Real>
Var<Real> stack(const std::vector<Var<Real>>& xs);

/// Tokens laid out as [H, W, D] (flattened to [H*W, D]) regrouped into
/// non-overlapping factor x factor blocks: [(H/f)*(W/f), f*f*D].
template <typename Real>
Var<Real> space_to_depth(const Var<Real>& x, std::int64_t height, std::int64_t width,
                         std::int64_t factor);

/// Bilinear resize with half-pixel centres (edge clamped) of x viewed as
/// [batch, height, width, channels].
template <typename Real>
Var<Real> resize_bilinear(const Var<Real>& x, std::int64_t batch, std::int64_t height,
                          std::int64_t width, std::int64_t channels, std::int64_t out_height,
                          std::int64_t out_width);

// Grouped reductions over token labels in [0, groups)
template <typename Real>
Var<Real> segment_softmax(const Var<Real>& scores, const std::vector<int>& labels, int groups);
template <typename Real>
Var<Real> segment_weighted_sum(const Var<Real>& weights, const Var<Real>& x,
                               const std::vector<int>& labels, int groups);

/// Row-wise unit norm over the last axis; zero rows stay zero (zero gradient).
template <typename Real>
Var<Real> l2_normalize_rows(const Var<Real>& x);

/// Scaled dot-product attention with `heads` heads on [B, Lq, D] queries and
/// [B, Lk, D] keys/values; projections are the caller's business.
template <typename Real>
Var<Real> attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v, int heads);
/// As above with an additive logit bias per key, [B, Lk], shared by every
/// query row and head.
template <typename Real>
Var<Real> attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v,
                    const Var<Real>& key_bias, int heads);

/// Evaluates fn on 64-bit copies of `inputs` and returns the result at
/// precision Real. The backward pass differentiates the 64-bit subgraph, so
/// cancellation inside fn happens in double even for float callers.
template <typename Real, typename Fn>
Var<Real> promoted(const std::vector<Var<Real>>& inputs, Fn&& fn);

/// Identity forward; backward multiplies the cotangent by `factor`. Used only
/// to demonstrate that a wrong adjoint is caught by the gradient checker.
template <typename Real>
Var<Real> corrupt_grad(const Var<Real>& x, Real factor);

template <typename Real, typename Fn>
Var<Real> promoted(const std::vector<Var<Real>>& inputs, Fn&& fn) {
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto v = in.value().template cast<double>();
    leaves.push_back(any ? parameter(std::move(v)) : constant(std::move(v)));
  }
  Var<double> out = fn(leaves);
  return make_op(out.value().template cast<Real>(), inputs, [leaves, out](Node<Real>& n) {
    backward(sum(mul(out, constant(n.grad.template cast<double>()))));
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      auto* g = n.parent_grad(i);
      if (!g) continue;
      const auto gi = leaves[i].grad();
      for (std::size_t k = 0; k < gi.size(); ++k) (*g)[k] += Real(gi[k]);
    }
  });
}

}  // namespace avseg::ad
