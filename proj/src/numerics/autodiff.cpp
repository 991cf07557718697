#include "avseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "avseg/errors.hpp"
#include "avseg/ops.hpp"

namespace avseg::ad {
namespace {

template <typename Real>
void accumulate(BasicTensor<Real>* dst, const BasicTensor<Real>& src) {
  if (!dst) return;
  Real* d = dst->raw();
  const Real* s = src.raw();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += s[i];
}

template <typename Real>
void require_same(const Var<Real>& a, const Var<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

}  // namespace

template <typename Real>
void backward(const Var<Real>& root) {
  if (!root.defined() || root.size() != 1) {
    throw ContractError("backward requires a scalar root, got " +
                        (root.defined() ? shape_str(root.shape()) : std::string("undefined")));
  }
  if (!root.requires_grad()) return;

  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> visited{root.node()};
  std::vector<std::pair<Node<Real>*, std::size_t>> stack{{root.node(), 0}};
  while (!stack.empty()) {
    auto& top = stack.back();
    Node<Real>* n = top.first;
    if (top.second < n->parents.size()) {
      Node<Real>* p = n->parents[top.second++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  return make_op(ops::matmul(a.value(), b.value()), {a, b}, [](Node<Real>& n) {
    if (auto* ga = n.parent_grad(0)) accumulate(ga, ops::matmul_nt(n.grad, n.parent_value(1)));
    if (auto* gb = n.parent_grad(1)) accumulate(gb, ops::matmul_tn(n.parent_value(0), n.grad));
  });
}

template <typename Real>
Var<Real> matmul_nt(const Var<Real>& a, const Var<Real>& b) {
  return make_op(ops::matmul_nt(a.value(), b.value()), {a, b}, [](Node<Real>& n) {
    if (auto* ga = n.parent_grad(0)) accumulate(ga, ops::matmul(n.grad, n.parent_value(1)));
    if (auto* gb = n.parent_grad(1)) accumulate(gb, ops::matmul_tn(n.grad, n.parent_value(0)));
  });
}

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  require_same(a, b, "add");
  return make_op(ops::add(a.value(), b.value()), {a, b}, [](Node<Real>& n) {
    accumulate(n.parent_grad(0), n.grad);
    accumulate(n.parent_grad(1), n.grad);
  });
}

template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  require_same(a, b, "sub");
  return make_op(ops::sub(a.value(), b.value()), {a, b}, [](Node<Real>& n) {
    accumulate(n.parent_grad(0), n.grad);
    if (auto* gb = n.parent_grad(1)) accumulate(gb, ops::scale(n.grad, Real(-1)));
  });
}

template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  require_same(a, b, "mul");
  return make_op(ops::mul(a.value(), b.value()), {a, b}, [](Node<Real>& n) {
    if (auto* ga = n.parent_grad(0)) accumulate(ga, ops::mul(n.grad, n.parent_value(1)));
    if (auto* gb = n.parent_grad(1)) accumulate(gb, ops::mul(n.grad, n.parent_value(0)));
  });
}

template <typename Real>
Var<Real> div(const Var<Real>& a, const Var<Real>& b) {
  require_same(a, b, "div");
  return make_op(ops::div(a.value(), b.value()), {a, b}, [](Node<Real>& n) {
    const auto& bv = n.parent_value(1);
    if (auto* ga = n.parent_grad(0)) accumulate(ga, ops::div(n.grad, bv));
    if (auto* gb = n.parent_grad(1)) {
      for (std::size_t i = 0; i < bv.size(); ++i) (*gb)[i] -= n.grad[i] * n.value[i] / bv[i];
    }
  });
}

template <typename Real>
Var<Real> add_bias(const Var<Real>& x, const Var<Real>& bias) {
  const std::int64_t width = bias.size();
  if (x.value().rank() == 0 || x.shape().back() != width) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
  }
  BasicTensor<Real> out = x.value();
  const std::int64_t rows = static_cast<std::int64_t>(out.size()) / width;
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < width; ++j) out[r * width + j] += bias.value()[j];
  return make_op(std::move(out), {x, bias}, [rows, width](Node<Real>& n) {
    accumulate(n.parent_grad(0), n.grad);
    if (auto* gb = n.parent_grad(1)) {
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < width; ++j) (*gb)[j] += n.grad[r * width + j];
    }
  });
}

template <typename Real>
Var<Real> scale(const Var<Real>& x, Real s) {
  return make_op(ops::scale(x.value(), s), {x},
                 [s](Node<Real>& n) { accumulate(n.parent_grad(0), ops::scale(n.grad, s)); });
}

template <typename Real>
Var<Real> add_scalar(const Var<Real>& x, Real s) {
  BasicTensor<Real> out = x.value();
  for (auto& v : out.data()) v += s;
  return make_op(std::move(out), {x}, [](Node<Real>& n) { accumulate(n.parent_grad(0), n.grad); });
}

template <typename Real>
Var<Real> gelu(const Var<Real>& x) {
  return make_op(ops::gelu(x.value()), {x}, [](Node<Real>& n) {
    if (auto* g = n.parent_grad(0)) {
      const auto& xv = n.parent_value(0);
      for (std::size_t i = 0; i < xv.size(); ++i) (*g)[i] += n.grad[i] * ops::gelu_grad_scalar(xv[i]);
    }
  });
}

template <typename Real>
Var<Real> relu(const Var<Real>& x) {
  return make_op(ops::relu(x.value()), {x}, [](Node<Real>& n) {
    if (auto* g = n.parent_grad(0)) {
      const auto& xv = n.parent_value(0);
      for (std::size_t i = 0; i < xv.size(); ++i)
        if (xv[i] > Real(0)) (*g)[i] += n.grad[i];
    }
  });
}

template <typename Real>
Var<Real> sigmoid(const Var<Real>& x) {
  return make_op(ops::sigmoid(x.value()), {x}, [](Node<Real>& n) {
    if (auto* g = n.parent_grad(0)) {
      for (std::size_t i = 0; i < n.value.size(); ++i) {
        const Real y = n.value[i];
        (*g)[i] += n.grad[i] * y * (Real(1) - y);
      }
    }
  });
}

template <typename Real>
Var<Real> softplus(const Var<Real>& x) {
  return make_op(ops::softplus(x.value()), {x}, [](Node<Real>& n) {
    if (auto* g = n.parent_grad(0)) {
      const auto& xv = n.parent_value(0);
      for (std::size_t i = 0; i < xv.size(); ++i) (*g)[i] += n.grad[i] * ops::sigmoid_scalar(xv[i]);
    }
  });
}

template <typename Real>
Var<Real> exp(const Var<Real>& x) {
  return make_op(ops::exp(x.value()), {x}, [](Node<Real>& n) {
    if (auto* g = n.parent_grad(0))
      for (std::size_t i = 0; i < n.value.size(); ++i) (*g)[i] += n.grad[i] * n.value[i];
  });
}

template <typename Real>
Var<Real> log(const Var<Real>& x) {
  return make_op(ops::log(x.value()), {x}, [](Node<Real>& n) {
    if (auto* g = n.parent_grad(0)) {
      const auto& xv = n.parent_value(0);
      for (std::size_t i = 0; i < xv.size(); ++i) (*g)[i] += n.grad[i] / xv[i];
    }
  });
}

template <typename Real>
Var<Real> softmax(const Var<Real>& x, int axis) {
  const auto split = ops::split_axis(x.shape(), axis);
  return make_op(ops::softmax(x.value(), axis), {x}, [split](Node<Real>& n) {
    auto* g = n.parent_grad(0);
    if (!g) return;
    for (std::int64_t o = 0; o < split.outer; ++o) {
      for (std::int64_t in = 0; in < split.inner; ++in) {
        const std::int64_t base = o * split.extent * split.inner + in;
        Real dot = 0;
        for (std::int64_t a = 0; a < split.extent; ++a) {
          const auto idx = base + a * split.inner;
          dot += n.value[idx] * n.grad[idx];
        }
        for (std::int64_t a = 0; a < split.extent; ++a) {
          const auto idx = base + a * split.inner;
          (*g)[idx] += n.value[idx] * (n.grad[idx] - dot);
        }
      }
    }
  });
}

template <typename Real>
Var<Real> log_softmax(const Var<Real>& x, int axis) {
  const auto split = ops::split_axis(x.shape(), axis);
  return make_op(ops::log_softmax(x.value(), axis), {x}, [split](Node<Real>& n) {
    auto* g = n.parent_grad(0);
    if (!g) return;
    for (std::int64_t o = 0; o < split.outer; ++o) {
      for (std::int64_t in = 0; in < split.inner; ++in) {
        const std::int64_t base = o * split.extent * split.inner + in;
        Real total = 0;
        for (std::int64_t a = 0; a < split.extent; ++a) total += n.grad[base + a * split.inner];
        for (std::int64_t a = 0; a < split.extent; ++a) {
          const auto idx = base + a * split.inner;
          (*g)[idx] += n.grad[idx] - std::exp(n.value[idx]) * total;
        }
      }
    }
  });
}

template <typename Real>
Var<Real> sum(const Var<Real>& x) {
  return make_op(BasicTensor<Real>::scalar(ops::sum(x.value())), {x}, [](Node<Real>& n) {
    if (auto* g = n.parent_grad(0)) {
      const Real s = n.grad[0];
      for (auto& v : g->data()) v += s;
    }
  });
}

template <typename Real>
Var<Real> mean(const Var<Real>& x) {
  const Real inv = Real(1) / static_cast<Real>(x.size());
  return make_op(BasicTensor<Real>::scalar(ops::sum(x.value()) * inv), {x}, [inv](Node<Real>& n) {
    if (auto* g = n.parent_grad(0)) {
      const Real s = n.grad[0] * inv;
      for (auto& v : g->data()) v += s;
    }
  });
}

template <typename Real>
Var<Real> sum_axis(const Var<Real>& x, int axis) {
  const auto split = ops::split_axis(x.shape(), axis);
  return make_op(ops::sum_axis(x.value(), axis), {x}, [split](Node<Real>& n) {
    auto* g = n.parent_grad(0);
    if (!g) return;
    for (std::int64_t o = 0; o < split.outer; ++o)
      for (std::int64_t a = 0; a < split.extent; ++a)
        for (std::int64_t in = 0; in < split.inner; ++in)
          (*g)[(o * split.extent + a) * split.inner + in] += n.grad[o * split.inner + in];
  });
}

template <typename Real>
Var<Real> reshape(const Var<Real>& x, Shape shape) {
  return make_op(x.value().reshape(std::move(shape)), {x}, [](Node<Real>& n) {
    if (auto* g = n.parent_grad(0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
    }
  });
}

template <typename Real>
Var<Real> permute(const Var<Real>& x, const std::vector<int>& perm) {
  std::vector<int> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return make_op(ops::permute(x.value(), perm), {x}, [inverse](Node<Real>& n) {
    accumulate(n.parent_grad(0), ops::permute(n.grad, inverse));
  });
}

template <typename Real>
Var<Real> gather(const Var<Real>& x, std::vector<std::int64_t> index, Shape out_shape) {
  if (static_cast<std::int64_t>(index.size()) != shape_numel(out_shape)) {
    throw DimensionError("gather: index count does not match output shape " + shape_str(out_shape));
  }
  BasicTensor<Real> out(std::move(out_shape));
  const auto n_in = static_cast<std::int64_t>(x.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= n_in) throw DimensionError("gather: index out of range");
    out[i] = x.value()[static_cast<std::size_t>(index[i])];
  }
  return make_op(std::move(out), {x}, [index = std::move(index)](Node<Real>& n) {
    if (auto* g = n.parent_grad(0))
      for (std::size_t i = 0; i < index.size(); ++i) (*g)[static_cast<std::size_t>(index[i])] += n.grad[i];
  });
}

template <typename Real>
Var<Real> stack(const std::vector<Var<Real>>& xs) {
  if (xs.empty()) throw DimensionError("stack of zero tensors");
  const Shape& inner = xs.front().shape();
  Shape out_shape{static_cast<std::int64_t>(xs.size())};
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  BasicTensor<Real> out(out_shape);
  const std::size_t block = xs.front().size();
  for (std::size_t t = 0; t < xs.size(); ++t) {
    if (xs[t].shape() != inner) throw DimensionError("stack: shapes differ");
    std::copy(xs[t].value().data().begin(), xs[t].value().data().end(), out.raw() + t * block);
  }
  return make_op(std::move(out), xs, [block](Node<Real>& n) {
    for (std::size_t t = 0; t < n.parents.size(); ++t) {
      if (auto* g = n.parent_grad(t))
        for (std::size_t i = 0; i < block; ++i) (*g)[i] += n.grad[t * block + i];
    }
  });
}

template <typename Real>
Var<Real> space_to_depth(const Var<Real>& x, std::int64_t height, std::int64_t width,
                         std::int64_t factor) {
  if (factor <= 0 || height % factor != 0 || width % factor != 0) {
    throw DimensionError("space_to_depth: " + std::to_string(height) + "x" + std::to_string(width) +
                         " not divisible by " + std::to_string(factor));
  }
  const std::int64_t channels = static_cast<std::int64_t>(x.size()) / (height * width);
  if (channels * height * width != static_cast<std::int64_t>(x.size())) {
    throw DimensionError("space_to_depth: input size does not match the grid");
  }
  const std::int64_t oh = height / factor, ow = width / factor;
  const std::int64_t depth = factor * factor * channels;
  std::vector<std::int64_t> index;
  index.reserve(static_cast<std::size_t>(oh * ow * depth));
  for (std::int64_t bi = 0; bi < oh; ++bi)
    for (std::int64_t bj = 0; bj < ow; ++bj)
      for (std::int64_t di = 0; di < factor; ++di)
        for (std::int64_t dj = 0; dj < factor; ++dj)
          for (std::int64_t c = 0; c < channels; ++c)
            index.push_back(((bi * factor + di) * width + (bj * factor + dj)) * channels + c);
  return gather(x, std::move(index), Shape{oh * ow, depth});
}

template <typename Real>
Var<Real> resize_bilinear(const Var<Real>& x, std::int64_t batch, std::int64_t height,
                          std::int64_t width, std::int64_t channels, std::int64_t out_height,
                          std::int64_t out_width) {
  if (batch * height * width * channels != static_cast<std::int64_t>(x.size())) {
    throw DimensionError("resize_bilinear: input " + shape_str(x.shape()) +
                         " does not match the declared layout");
  }
  struct Tap {
    std::int64_t lo, hi;
    Real w_hi;
  };
  auto taps = [](std::int64_t in, std::int64_t out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
      double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::int64_t>(std::floor(s));
      const auto hi = std::min(lo + 1, in - 1);
      t[static_cast<std::size_t>(o)] = {lo, hi, static_cast<Real>(s - static_cast<double>(lo))};
    }
    return t;
  };
  auto ty = taps(height, out_height);
  auto tx = taps(width, out_width);

  BasicTensor<Real> out(Shape{batch, out_height, out_width, channels});
  const Real* src = x.value().raw();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t oy = 0; oy < out_height; ++oy) {
      const auto& py = ty[static_cast<std::size_t>(oy)];
      for (std::int64_t ox = 0; ox < out_width; ++ox) {
        const auto& px = tx[static_cast<std::size_t>(ox)];
        const Real w00 = (1 - py.w_hi) * (1 - px.w_hi), w01 = (1 - py.w_hi) * px.w_hi;
        const Real w10 = py.w_hi * (1 - px.w_hi), w11 = py.w_hi * px.w_hi;
        const Real* r0 = src + ((b * height + py.lo) * width) * channels;
        const Real* r1 = src + ((b * height + py.hi) * width) * channels;
        Real* dst = out.raw() + ((b * out_height + oy) * out_width + ox) * channels;
        for (std::int64_t c = 0; c < channels; ++c) {
          dst[c] = w00 * r0[px.lo * channels + c] + w01 * r0[px.hi * channels + c] +
                   w10 * r1[px.lo * channels + c] + w11 * r1[px.hi * channels + c];
        }
      }
    }
  }
  return make_op(std::move(out), {x},
                 [=, ty = std::move(ty), tx = std::move(tx)](Node<Real>& n) {
                   auto* g = n.parent_grad(0);
                   if (!g) return;
                   Real* dsrc = g->raw();
                   for (std::int64_t b = 0; b < batch; ++b) {
                     for (std::int64_t oy = 0; oy < out_height; ++oy) {
                       const auto& py = ty[static_cast<std::size_t>(oy)];
                       for (std::int64_t ox = 0; ox < out_width; ++ox) {
                         const auto& px = tx[static_cast<std::size_t>(ox)];
                         const Real w00 = (1 - py.w_hi) * (1 - px.w_hi), w01 = (1 - py.w_hi) * px.w_hi;
                         const Real w10 = py.w_hi * (1 - px.w_hi), w11 = py.w_hi * px.w_hi;
                         Real* r0 = dsrc + ((b * height + py.lo) * width) * channels;
                         Real* r1 = dsrc + ((b * height + py.hi) * width) * channels;
                         const Real* go = n.grad.raw() + ((b * out_height + oy) * out_width + ox) * channels;
                         for (std::int64_t c = 0; c < channels; ++c) {
                           r0[px.lo * channels + c] += w00 * go[c];
                           r0[px.hi * channels + c] += w01 * go[c];
                           r1[px.lo * channels + c] += w10 * go[c];
                           r1[px.hi * channels + c] += w11 * go[c];
                         }
                       }
                     }
                   }
                 });
}

template <typename Real>
Var<Real> segment_softmax(const Var<Real>& scores, const std::vector<int>& labels, int groups) {
  const std::size_t n_tok = scores.size();
  if (labels.size() != n_tok) {
    throw DimensionError("segment_softmax: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n_tok) + " scores");
  }
  std::vector<Real> mx(static_cast<std::size_t>(groups), -std::numeric_limits<Real>::infinity());
  for (std::size_t i = 0; i < n_tok; ++i) {
    const int p = labels[i];
    if (p < 0 || p >= groups) throw DimensionError("segment_softmax: label out of range");
    mx[static_cast<std::size_t>(p)] = std::max(mx[static_cast<std::size_t>(p)], scores.value()[i]);
  }
  std::vector<Real> total(static_cast<std::size_t>(groups), Real(0));
  BasicTensor<Real> out(scores.shape());
  for (std::size_t i = 0; i < n_tok; ++i) {
    const auto p = static_cast<std::size_t>(labels[i]);
    out[i] = std::exp(scores.value()[i] - mx[p]);
    total[p] += out[i];
  }
  for (std::size_t i = 0; i < n_tok; ++i) out[i] /= total[static_cast<std::size_t>(labels[i])];
  return make_op(std::move(out), {scores}, [labels, groups](Node<Real>& n) {
    auto* g = n.parent_grad(0);
    if (!g) return;
    std::vector<Real> dot(static_cast<std::size_t>(groups), Real(0));
    for (std::size_t i = 0; i < labels.size(); ++i)
      dot[static_cast<std::size_t>(labels[i])] += n.value[i] * n.grad[i];
    for (std::size_t i = 0; i < labels.size(); ++i)
      (*g)[i] += n.value[i] * (n.grad[i] - dot[static_cast<std::size_t>(labels[i])]);
  });
}

template <typename Real>
Var<Real> segment_weighted_sum(const Var<Real>& weights, const Var<Real>& x,
                               const std::vector<int>& labels, int groups) {
  if (x.value().rank() != 2 || x.dim(0) != static_cast<std::int64_t>(weights.size()) ||
      labels.size() != weights.size()) {
    throw DimensionError("segment_weighted_sum: weights " + shape_str(weights.shape()) +
                         ", tokens " + shape_str(x.shape()) + ", " + std::to_string(labels.size()) +
                         " labels");
  }
  const std::int64_t width = x.dim(1);
  BasicTensor<Real> out(Shape{groups, width});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = labels[i];
    if (p < 0 || p >= groups) throw DimensionError("segment_weighted_sum: label out of range");
    const Real w = weights.value()[i];
    const Real* row = x.value().raw() + static_cast<std::int64_t>(i) * width;
    Real* dst = out.raw() + p * width;
    for (std::int64_t d = 0; d < width; ++d) dst[d] += w * row[d];
  }
  return make_op(std::move(out), {weights, x}, [labels, width](Node<Real>& n) {
    auto* gw = n.parent_grad(0);
    auto* gx = n.parent_grad(1);
    const auto& w = n.parent_value(0);
    const auto& xv = n.parent_value(1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const Real* go = n.grad.raw() + labels[i] * width;
      const Real* row = xv.raw() + static_cast<std::int64_t>(i) * width;
      if (gw) {
        Real acc = 0;
        for (std::int64_t d = 0; d < width; ++d) acc += go[d] * row[d];
        (*gw)[i] += acc;
      }
      if (gx) {
        Real* dst = gx->raw() + static_cast<std::int64_t>(i) * width;
        for (std::int64_t d = 0; d < width; ++d) dst[d] += w[i] * go[d];
      }
    }
  });
}

template <typename Real>
Var<Real> l2_normalize_rows(const Var<Real>& x) {
  const std::int64_t width = x.shape().back();
  const std::int64_t rows = static_cast<std::int64_t>(x.size()) / width;
  BasicTensor<Real> out(x.shape());
  std::vector<Real> norms(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* src = x.value().raw() + r * width;
    Real sq = 0;
    for (std::int64_t d = 0; d < width; ++d) sq += src[d] * src[d];
    const Real nrm = std::sqrt(sq);
    norms[static_cast<std::size_t>(r)] = nrm;
    if (nrm == Real(0)) continue;
    for (std::int64_t d = 0; d < width; ++d) out[r * width + d] = src[d] / nrm;
  }
  return make_op(std::move(out), {x}, [rows, width, norms = std::move(norms)](Node<Real>& n) {
    auto* g = n.parent_grad(0);
    if (!g) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const Real nrm = norms[static_cast<std::size_t>(r)];
      if (nrm == Real(0)) continue;
      const Real* y = n.value.raw() + r * width;
      const Real* gy = n.grad.raw() + r * width;
      Real dot = 0;
      for (std::int64_t d = 0; d < width; ++d) dot += y[d] * gy[d];
      for (std::int64_t d = 0; d < width; ++d) (*g)[r * width + d] += (gy[d] - y[d] * dot) / nrm;
    }
  });
}

template <typename Real>
Var<Real> attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v, int heads) {
  return attention(q, k, v, Var<Real>(), heads);
}

template <typename Real>
Var<Real> attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v,
                    const Var<Real>& key_bias, int heads) {
  if (q.value().rank() != 3 || k.value().rank() != 3 || v.value().rank() != 3 ||
      k.shape() != v.shape() || q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2)) {
    throw DimensionError("attention: incompatible q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const std::int64_t batch = q.dim(0), lq = q.dim(1), lk = k.dim(1), width = q.dim(2);
  const bool has_bias = key_bias.defined();
  if (has_bias && key_bias.shape() != Shape{batch, lk}) {
    throw DimensionError("attention: key bias " + shape_str(key_bias.shape()) + " for keys " +
                         shape_str(k.shape()));
  }
  const Real* B = has_bias ? key_bias.value().raw() : nullptr;
  if (heads <= 0 || width % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::int64_t hd = width / heads;
  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(hd));
  // probs layout: [batch, heads, lq, lk]
  auto probs = std::make_shared<BasicTensor<Real>>(Shape{batch, heads, lq, lk});
  BasicTensor<Real> out(Shape{batch, lq, width});
  const Real* Q = q.value().raw();
  const Real* K = k.value().raw();
  const Real* V = v.value().raw();
  std::vector<Real> row(static_cast<std::size_t>(lk));
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t h = 0; h < heads; ++h) {
      for (std::int64_t i = 0; i < lq; ++i) {
        const Real* qi = Q + (b * lq + i) * width + h * hd;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::int64_t j = 0; j < lk; ++j) {
          const Real* kj = K + (b * lk + j) * width + h * hd;
          Real s = 0;
          for (std::int64_t d = 0; d < hd; ++d) s += qi[d] * kj[d];
          row[static_cast<std::size_t>(j)] = s * inv_sqrt + (B ? B[b * lk + j] : Real(0));
          mx = std::max(mx, row[static_cast<std::size_t>(j)]);
        }
        Real total = 0;
        for (auto& s : row) {
          s = std::exp(s - mx);
          total += s;
        }
        Real* p = probs->raw() + ((b * heads + h) * lq + i) * lk;
        Real* oi = out.raw() + (b * lq + i) * width + h * hd;
        for (std::int64_t j = 0; j < lk; ++j) {
          p[j] = row[static_cast<std::size_t>(j)] / total;
          const Real* vj = V + (b * lk + j) * width + h * hd;
          for (std::int64_t d = 0; d < hd; ++d) oi[d] += p[j] * vj[d];
        }
      }
    }
  }
  std::vector<Var<Real>> inputs{q, k, v};
  if (has_bias) inputs.push_back(key_bias);
  return make_op(std::move(out), std::move(inputs), [=](Node<Real>& n) {
    auto* gq = n.parent_grad(0);
    auto* gk = n.parent_grad(1);
    auto* gv = n.parent_grad(2);
    auto* gb = has_bias ? n.parent_grad(3) : nullptr;
    const Real* Qv = n.parent_value(0).raw();
    const Real* Kv = n.parent_value(1).raw();
    const Real* Vv = n.parent_value(2).raw();
    std::vector<Real> dp(static_cast<std::size_t>(lk));
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t h = 0; h < heads; ++h) {
        for (std::int64_t i = 0; i < lq; ++i) {
          const Real* p = probs->raw() + ((b * heads + h) * lq + i) * lk;
          const Real* go = n.grad.raw() + (b * lq + i) * width + h * hd;
          Real dot = 0;
          for (std::int64_t j = 0; j < lk; ++j) {
            const Real* vj = Vv + (b * lk + j) * width + h * hd;
            Real s = 0;
            for (std::int64_t d = 0; d < hd; ++d) s += go[d] * vj[d];
            dp[static_cast<std::size_t>(j)] = s;
            dot += p[j] * s;
            if (gv) {
              Real* dv = gv->raw() + (b * lk + j) * width + h * hd;
              for (std::int64_t d = 0; d < hd; ++d) dv[d] += p[j] * go[d];
            }
          }
          const Real* qi = Qv + (b * lq + i) * width + h * hd;
          for (std::int64_t j = 0; j < lk; ++j) {
            const Real dz = p[j] * (dp[static_cast<std::size_t>(j)] - dot);
            if (gb) (*gb)[b * lk + j] += dz;
            const Real ds = dz * inv_sqrt;
            if (ds == Real(0)) continue;
            const Real* kj = Kv + (b * lk + j) * width + h * hd;
            if (gq) {
              Real* dq = gq->raw() + (b * lq + i) * width + h * hd;
              for (std::int64_t d = 0; d < hd; ++d) dq[d] += ds * kj[d];
            }
            if (gk) {
              Real* dk = gk->raw() + (b * lk + j) * width + h * hd;
              for (std::int64_t d = 0; d < hd; ++d) dk[d] += ds * qi[d];
            }
          }
        }
      }
    }
  });
}

template <typename Real>
Var<Real> corrupt_grad(const Var<Real>& x, Real factor) {
  return make_op(x.value(), {x}, [factor](Node<Real>& n) {
    accumulate(n.parent_grad(0), ops::scale(n.grad, factor));
  });
}

#define AVSEG_INSTANTIATE_AD(R)                                                                  \
  template void backward(const Var<R>&);                                                         \
  template Var<R> matmul(const Var<R>&, const Var<R>&);                                          \
  template Var<R> matmul_nt(const Var<R>&, const Var<R>&);                                       \
  template Var<R> add(const Var<R>&, const Var<R>&);                                             \
  template Var<R> sub(const Var<R>&, const Var<R>&);                                             \
  template Var<R> mul(const Var<R>&, const Var<R>&);                                             \
  template Var<R> div(const Var<R>&, const Var<R>&);                                             \
  template Var<R> add_bias(const Var<R>&, const Var<R>&);                                        \
  template Var<R> scale(const Var<R>&, R);                                                       \
  template Var<R> add_scalar(const Var<R>&, R);                                                  \
  template Var<R> gelu(const Var<R>&);                                                           \
  template Var<R> relu(const Var<R>&);                                                           \
  template Var<R> sigmoid(const Var<R>&);                                                        \
  template Var<R> softplus(const Var<R>&);                                                       \
  template Var<R> exp(const Var<R>&);                                                            \
  template Var<R> log(const Var<R>&);                                                            \
  template Var<R> softmax(const Var<R>&, int);                                                   \
  template Var<R> log_softmax(const Var<R>&, int);                                               \
  template Var<R> sum(const Var<R>&);                                                            \
  template Var<R> mean(const Var<R>&);                                                           \
  template Var<R> sum_axis(const Var<R>&, int);                                                  \
  template Var<R> reshape(const Var<R>&, Shape);                                                 \
  template Var<R> permute(const Var<R>&, const std::vector<int>&);                               \
  template Var<R> gather(const Var<R>&, std::vector<std::int64_t>, Shape);                       \
  template Var<R> stack(const std::vector<Var<R>>&);                                             \
  template Var<R> space_to_depth(const Var<R>&, std::int64_t, std::int64_t, std::int64_t);       \
  template Var<R> resize_bilinear(const Var<R>&, std::int64_t, std::int64_t, std::int64_t,       \
                                  std::int64_t, std::int64_t, std::int64_t);                     \
  template Var<R> segment_softmax(const Var<R>&, const std::vector<int>&, int);                  \
  template Var<R> segment_weighted_sum(const Var<R>&, const Var<R>&, const std::vector<int>&,    \
                                       int);                                                     \
  template Var<R> l2_normalize_rows(const Var<R>&);                                              \
  template Var<R> attention(const Var<R>&, const Var<R>&, const Var<R>&, int);                   \
  template Var<R> attention(const Var<R>&, const Var<R>&, const Var<R>&, const Var<R>&, int);    \
  template Var<R> corrupt_grad(const Var<R>&, R);

AVSEG_INSTANTIATE_AD(float)
AVSEG_INSTANTIATE_AD(double)

#undef AVSEG_INSTANTIATE_AD

}  // namespace avseg::ad
