#include "avseg/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "avseg/errors.hpp"
#include "avseg/ops.hpp"

namespace avseg::uncertainty {

namespace {

template <typename Real>
using Var = ad::Var<Real>;

struct Layout {
  std::int64_t frames, classes, pixels;
};

Layout layout(const Shape& s, const char* op) {
  if (s.size() != 4) throw DimensionError(std::string(op) + ": expected [T, C, H, W], got " + shape_str(s));
  return {s[0], s[1], s[2] * s[3]};
}

}  // namespace

template <typename Real>
Var<Real> dirichlet_params(const Var<Real>& logits) {
  return ad::softplus(logits);
}

template <typename Real>
Var<Real> pixel_uncertainty(const Var<Real>& alpha, std::size_t* degenerate) {
  const auto L = layout(alpha.shape(), "pixel_uncertainty");
  BasicTensor<Real> out(alpha.shape());
  if (L.classes == 1) {
    if (degenerate) ++*degenerate;
    return ad::make_op(std::move(out), {alpha}, [](ad::Node<Real>&) {});
  }
  const Real* a = alpha.value().raw();
  for (std::int64_t t = 0; t < L.frames; ++t)
    for (std::int64_t px = 0; px < L.pixels; ++px) {
      const std::int64_t base = t * L.classes * L.pixels + px;
      double s = 0;
      for (std::int64_t c = 0; c < L.classes; ++c) s += a[base + c * L.pixels];
      const double den = s * s * (s + 1);
      for (std::int64_t c = 0; c < L.classes; ++c) {
        const double ac = a[base + c * L.pixels];
        out[base + c * L.pixels] = Real(ac * (s - ac) / den);
      }
    }
  return ad::make_op(std::move(out), {alpha}, [L](ad::Node<Real>& n) {
    auto* g = n.parent_grad(0);
    if (!g) return;
    const Real* a = n.parent_value(0).raw();
    const Real* go = n.grad.raw();
    for (std::int64_t t = 0; t < L.frames; ++t)
      for (std::int64_t px = 0; px < L.pixels; ++px) {
        const std::int64_t base = t * L.classes * L.pixels + px;
        double s = 0;
        for (std::int64_t c = 0; c < L.classes; ++c) s += a[base + c * L.pixels];
        const double den = s * s * (s + 1);
        const double dden = 3 * s * s + 2 * s;
        double shared = 0;
        for (std::int64_t c = 0; c < L.classes; ++c) {
          const double ac = a[base + c * L.pixels], gc = go[base + c * L.pixels];
          shared += gc * ac / den - gc * ac * (s - ac) * dden / (den * den);
        }
        for (std::int64_t j = 0; j < L.classes; ++j) {
          const std::int64_t at = base + j * L.pixels;
          (*g)[at] += Real(shared + double(go[at]) * (s - 2 * double(a[at])) / den);
        }
      }
  });
}

template <typename Real>
Var<Real> normalize_uncertainty(const Var<Real>& delta) {
  const auto L = layout(delta.shape(), "normalize_uncertainty");
  const std::int64_t block = L.classes * L.pixels;
  BasicTensor<Real> out(delta.shape());
  std::vector<std::int64_t> lo(L.frames), hi(L.frames);
  const Real* d = delta.value().raw();
  for (std::int64_t t = 0; t < L.frames; ++t) {
    const Real* f = d + t * block;
    lo[t] = std::min_element(f, f + block) - f;
    hi[t] = std::max_element(f, f + block) - f;
    const Real mn = f[lo[t]], range = f[hi[t]] - mn;
    if (range <= Real(0)) continue;
    for (std::int64_t i = 0; i < block; ++i) out[t * block + i] = (f[i] - mn) / range;
  }
  return ad::make_op(std::move(out), {delta}, [lo, hi, block](ad::Node<Real>& n) {
    auto* g = n.parent_grad(0);
    if (!g) return;
    const Real* d = n.parent_value(0).raw();
    for (std::size_t t = 0; t < lo.size(); ++t) {
      const std::int64_t off = std::int64_t(t) * block;
      const Real range = d[off + hi[t]] - d[off + lo[t]];
      if (range <= Real(0)) continue;
      Real to_min = 0, to_max = 0;
      for (std::int64_t i = 0; i < block; ++i) {
        const Real gi = n.grad[off + i], y = n.value[off + i];
        (*g)[off + i] += gi / range;
        to_min += gi * (y - Real(1)) / range;
        to_max -= gi * y / range;
      }
      (*g)[off + lo[t]] += to_min;
      (*g)[off + hi[t]] += to_max;
    }
  });
}

template <typename Real>
Var<Real> weighted_prediction(const Var<Real>& m, const Var<Real>& delta_norm, double eps,
                              Activation act) {
  layout(m.shape(), "weighted_prediction");
  if (m.shape() != delta_norm.shape()) {
    throw DimensionError("weighted_prediction: logits " + shape_str(m.shape()) + ", uncertainty " +
                         shape_str(delta_norm.shape()));
  }
  auto p = act == Activation::Softmax ? ad::softmax(m, 1) : ad::sigmoid(m);
  return ad::div(p, ad::add_scalar(delta_norm, Real(eps)));
}

template <typename Real>
Var<Real> renormalized_log_probs(const Var<Real>& m, const Var<Real>& delta_norm, double eps) {
  layout(m.shape(), "renormalized_log_probs");
  if (m.shape() != delta_norm.shape()) {
    throw DimensionError("renormalized_log_probs: logits " + shape_str(m.shape()) +
                         ", uncertainty " + shape_str(delta_norm.shape()));
  }
  auto z = ad::sub(ad::log_softmax(m, 1), ad::log(ad::add_scalar(delta_norm, Real(eps))));
  return ad::log_softmax(z, 1);
}

template <typename Real>
UncertainPrediction<Real> uncertain_log_probs(const Var<Real>& m, const Var<Real>& u, double eps) {
  layout(m.shape(), "uncertain_log_probs");
  if (m.shape() != u.shape()) {
    throw DimensionError("uncertain_log_probs: logits " + shape_str(m.shape()) + ", uncertainty logits " +
                         shape_str(u.shape()));
  }
  Tensor64 delta_norm;
  auto lp = ad::promoted<Real>({m, u}, [&](const std::vector<Var<double>>& in) {
    const auto dn = normalize_uncertainty(pixel_uncertainty(dirichlet_params(in[1])));
    delta_norm = dn.value();
    return renormalized_log_probs(in[0], dn, eps);
  });
  return {lp, ad::constant(delta_norm.cast<Real>())};
}

DirichletField estimate(const Tensor& logits, std::size_t* degenerate) {
  auto alpha = dirichlet_params(ad::constant(logits));
  auto delta = pixel_uncertainty(alpha, degenerate);
  auto norm = normalize_uncertainty(delta);
  return {alpha.value(), delta.value(), norm.value()};
}

std::vector<std::int64_t> predicted_labels(const Tensor& scores) {
  return ops::argmax(scores, 1);
}

std::vector<std::uint8_t> uncertainty_image(const Tensor& delta_norm, std::int64_t t) {
  const auto L = layout(delta_norm.shape(), "uncertainty_image");
  if (t < 0 || t >= L.frames) throw ParameterError("uncertainty_image: frame out of range");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(L.pixels));
  for (std::int64_t i = 0; i < L.pixels; ++i) {
    float mx = 0.0f;
    for (std::int64_t c = 0; c < L.classes; ++c)
      mx = std::max(mx, delta_norm[(t * L.classes + c) * L.pixels + i]);
    px[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(double(mx), 0.0, 1.0)));
  }
  return px;
}

void write_pgm(const std::string& path, std::int64_t width, std::int64_t height,
               const std::vector<std::uint8_t>& pixels) {
  if (std::int64_t(pixels.size()) != width * height) {
    throw DimensionError("write_pgm: pixel count does not match " + std::to_string(width) + "x" +
                         std::to_string(height));
  }
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size()));
  if (!out) throw IoError("cannot write " + path);
}

#define AVSEG_INSTANTIATE_UE(R)                                                  \
  template Var<R> dirichlet_params(const Var<R>&);                               \
  template Var<R> pixel_uncertainty(const Var<R>&, std::size_t*);                \
  template Var<R> normalize_uncertainty(const Var<R>&);                          \
  template Var<R> weighted_prediction(const Var<R>&, const Var<R>&, double, Activation); \
  template Var<R> renormalized_log_probs(const Var<R>&, const Var<R>&, double);      \
  template UncertainPrediction<R> uncertain_log_probs(const Var<R>&, const Var<R>&, double);

AVSEG_INSTANTIATE_UE(float)
AVSEG_INSTANTIATE_UE(double)

#undef AVSEG_INSTANTIATE_UE

}  // namespace avseg::uncertainty
