#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avseg/autodiff.hpp"
#include "avseg/tensor.hpp"

/// Dirichlet evidence, per-class marginal variance and uncertainty-weighted
/// prediction. All maps are [T, C, H, W] with the class axis at 1.
namespace avseg::uncertainty {

inline constexpr double kEpsilon = 1e-6;

enum class Activation { Softmax, Sigmoid };

/// alpha = softplus(logits) > 0.
template <typename Real>
ad::Var<Real> dirichlet_params(const ad::Var<Real>& logits);

/// delta_c = alpha_c (S - alpha_c) / (S^2 (S + 1)), S = sum_c alpha_c.
/// With a single class the variance is identically 0 and `degenerate` (if
/// given) is incremented.
template <typename Real>
ad::Var<Real> pixel_uncertainty(const ad::Var<Real>& alpha, std::size_t* degenerate = nullptr);

/// Min-max scaling to [0, 1] per frame over C*H*W; a constant frame maps to
/// zeros. Gradients flow through the first argmin and argmax.
template <typename Real>
ad::Var<Real> normalize_uncertainty(const ad::Var<Real>& delta);

/// sigma(m) / (delta_norm + eps), sigma over the class axis.
template <typename Real>
ad::Var<Real> weighted_prediction(const ad::Var<Real>& m, const ad::Var<Real>& delta_norm,
                                  double eps = kEpsilon, Activation act = Activation::Softmax);

/// Log of the weighted prediction renormalised over classes, evaluated in log
/// space: log_softmax(log_softmax(m) - log(delta_norm + eps)).
template <typename Real>
ad::Var<Real> renormalized_log_probs(const ad::Var<Real>& m, const ad::Var<Real>& delta_norm,
                                     double eps = kEpsilon);

template <typename Real>
struct UncertainPrediction {
  ad::Var<Real> log_probs;   ///< renormalized_log_probs(m, delta_norm)
  ad::Var<Real> delta_norm;  ///< constant copy for inspection
};

/// Segmentation logits m and uncertainty logits u to the renormalised log
/// prediction, the chain softplus -> variance -> normalisation -> weighting
/// evaluated in 64-bit. With eps = 1e-6 the float32 gradient of that chain
/// is dominated by cancellation.
template <typename Real>
UncertainPrediction<Real> uncertain_log_probs(const ad::Var<Real>& m, const ad::Var<Real>& u,
                                              double eps = kEpsilon);

struct DirichletField {
  Tensor alpha;
  Tensor delta;
  Tensor delta_norm;
};

/// Forward-only evaluation of the whole chain from uncertainty logits.
DirichletField estimate(const Tensor& logits, std::size_t* degenerate = nullptr);

/// Per-pixel argmax over classes of [T, C, H, W] scores: [T, H, W].
std::vector<std::int64_t> predicted_labels(const Tensor& scores);

/// 8-bit image of frame t: round(255 * max_c delta_norm), row-major H x W.
std::vector<std::uint8_t> uncertainty_image(const Tensor& delta_norm, std::int64_t t);

/// Binary PGM (P5). Throws IoError on failure.
void write_pgm(const std::string& path, std::int64_t width, std::int64_t height,
               const std::vector<std::uint8_t>& pixels);

}  // namespace avseg::uncertainty
