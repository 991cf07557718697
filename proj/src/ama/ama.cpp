#include "avseg/ama.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "avseg/errors.hpp"
#include "avseg/ops.hpp"

namespace avseg::ama {

namespace {

template <typename Real>
using Var = ad::Var<Real>;

// Views a [N, D] map as one frame; `squeeze` restores the caller's rank.
template <typename Real>
struct Batched {
  Var<Real> x;
  bool squeeze;
};

template <typename Real>
Batched<Real> batched(const Var<Real>& x, std::size_t rank) {
  if (x.value().rank() == rank - 1) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    return {ad::reshape(x, s), true};
  }
  if (x.value().rank() != rank) {
    throw DimensionError("ama: expected rank " + std::to_string(rank) + " input, got " +
                         shape_str(x.shape()));
  }
  return {x, false};
}

template <typename Real>
Var<Real> unbatched(const Var<Real>& x, bool squeeze) {
  if (!squeeze) return x;
  return ad::reshape(x, Shape(x.shape().begin() + 1, x.shape().end()));
}

void check_groups(const std::vector<grouping::GroupAssignment>& groups, std::int64_t frames,
                  std::int64_t tokens) {
  if (static_cast<std::int64_t>(groups.size()) != frames) {
    throw DimensionError("ama: " + std::to_string(groups.size()) + " group assignments for " +
                         std::to_string(frames) + " frames");
  }
  for (const auto& ga : groups) {
    if (static_cast<std::int64_t>(ga.labels.size()) != tokens) {
      throw DimensionError("ama: group assignment covers " + std::to_string(ga.labels.size()) +
                           " tokens, feature map has " + std::to_string(tokens));
    }
    if (ga.num_groups != groups.front().num_groups) {
      throw DimensionError("ama: frames disagree on the group count");
    }
  }
}

}  // namespace

void LevelConfig::validate() const {
  if (dim <= 0 || audio_dim <= 0) throw ConfigError("ama: dimensions must be positive");
  if (groups < 1) throw ConfigError("ama: group count must be at least 1");
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("ama: dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (depth < 1) throw ConfigError("ama: update depth must be at least 1");
}

void ContrastiveConfig::validate() const {
  if (!(tau > 0)) throw ConfigError("contrastive: tau must be positive");
  if (!(sigma_p > 0)) throw ConfigError("contrastive: sigma_p must be positive");
  if (!(epsilon_a > 0 && epsilon_a < 1)) throw ConfigError("contrastive: epsilon_a must lie in (0, 1)");
}

void init_params(ParamStore& store, const std::string& prefix, const LevelConfig& cfg, Rng& rng) {
  cfg.validate();
  init_linear(store, prefix + ".audio", cfg.audio_dim, cfg.dim, rng);
  for (const char* name : {".q", ".k", ".v", ".o"}) init_linear(store, prefix + name, cfg.dim, cfg.dim, rng);
  init_linear(store, prefix + ".rel1", cfg.dim, cfg.dim, rng);
  init_linear(store, prefix + ".rel2", cfg.dim, 1, rng);
}

template <typename Real>
Fusion<Real> cross_attend(const Bound<Real>& p, const std::string& prefix, const Var<Real>& f_v,
                          const Var<Real>& f_a, int heads) {
  const auto v = batched(f_v, 3);
  const auto a = batched(f_a, 2);
  const auto frames = v.x.dim(0), dim = v.x.dim(2);
  if (a.x.dim(0) != frames) {
    throw DimensionError("cross_attend: " + std::to_string(a.x.dim(0)) + " audio rows for " +
                         std::to_string(frames) + " frames");
  }
  const auto& wa = p(prefix + ".audio.w");
  if (wa.dim(0) != a.x.dim(1) || wa.dim(1) != dim) {
    throw ConfigError("cross_attend: audio projection " + shape_str(wa.shape()) +
                      " cannot map audio " + shape_str(f_a.shape()) + " onto features " +
                      shape_str(f_v.shape()));
  }
  auto audio = linear(p, prefix + ".audio", a.x);
  auto q = linear(p, prefix + ".q", v.x);
  auto k = ad::reshape(linear(p, prefix + ".k", audio), {frames, 1, dim});
  auto val = ad::reshape(linear(p, prefix + ".v", audio), {frames, 1, dim});
  auto att = ad::attention(q, k, val, heads);
  auto fused = ad::add(v.x, linear(p, prefix + ".o", att));
  return {unbatched(fused, v.squeeze), unbatched(audio, a.squeeze)};
}

template <typename Real>
Var<Real> relevance_scores(const Bound<Real>& p, const std::string& prefix, const Var<Real>& fused) {
  auto h = ad::gelu(linear(p, prefix + ".rel1", fused));
  auto s = linear(p, prefix + ".rel2", h);
  return ad::reshape(s, Shape(fused.shape().begin(), fused.shape().end() - 1));
}

template <typename Real>
Var<Real> merge_groups(const Var<Real>& fused, const Var<Real>& scores,
                       const std::vector<grouping::GroupAssignment>& groups) {
  const auto v = batched(fused, 3);
  const auto frames = v.x.dim(0), tokens = v.x.dim(1), dim = v.x.dim(2);
  if (static_cast<std::int64_t>(scores.size()) != frames * tokens) {
    throw DimensionError("merge_groups: scores " + shape_str(scores.shape()) + " for features " +
                         shape_str(fused.shape()));
  }
  check_groups(groups, frames, tokens);
  const int per_frame = groups.front().num_groups;
  std::vector<int> labels(static_cast<std::size_t>(frames * tokens));
  for (std::int64_t b = 0; b < frames; ++b)
    for (std::int64_t i = 0; i < tokens; ++i)
      labels[b * tokens + i] = int(b) * per_frame + groups[b].labels[i];
  const int total = int(frames) * per_frame;
  auto w = ad::segment_softmax(ad::reshape(scores, {frames * tokens}), labels, total);
  auto g = ad::segment_weighted_sum(w, ad::reshape(v.x, {frames * tokens, dim}), labels, total);
  return unbatched(ad::reshape(g, {frames, per_frame, dim}), v.squeeze);
}

template <typename Real>
Var<Real> update_compact(const Var<Real>& g, const Var<Real>& f_v, const Var<Real>& scores,
                         int depth) {
  if (depth < 1) throw ConfigError("update_compact: depth must be at least 1");
  const auto gb = batched(g, 3);
  const auto v = batched(f_v, 3);
  auto s = ad::reshape(scores, {v.x.dim(0), v.x.dim(1)});
  auto out = gb.x;
  for (int layer = 0; layer < depth; ++layer) out = ad::add(out, ad::attention(out, v.x, v.x, s, 1));
  return unbatched(out, gb.squeeze);
}

template <typename Real>
Var<Real> remap(const Var<Real>& g, const std::vector<grouping::GroupAssignment>& groups,
                const Var<Real>& f_v) {
  const auto gb = batched(g, 3);
  const auto v = batched(f_v, 3);
  const auto frames = v.x.dim(0), tokens = v.x.dim(1), dim = v.x.dim(2);
  check_groups(groups, frames, tokens);
  const auto per_frame = gb.x.dim(1);
  std::vector<std::int64_t> index(static_cast<std::size_t>(frames * tokens * dim));
  for (std::int64_t b = 0; b < frames; ++b)
    for (std::int64_t i = 0; i < tokens; ++i)
      for (std::int64_t d = 0; d < dim; ++d)
        index[(b * tokens + i) * dim + d] = (b * per_frame + groups[b].labels[i]) * dim + d;
  auto retrieved = ad::gather(gb.x, std::move(index), v.x.shape());
  return unbatched(ad::add(v.x, retrieved), v.squeeze);
}

template <typename Real>
Var<Real> alignment_similarity(const Var<Real>& g, const Var<Real>& audio) {
  const auto gb = batched(g, 3);
  const auto a = batched(audio, 2);
  const auto frames = gb.x.dim(0), rows = gb.x.dim(1), dim = gb.x.dim(2);
  if (a.x.dim(0) != frames || a.x.dim(1) != dim) {
    throw DimensionError("alignment_similarity: compact " + shape_str(g.shape()) + ", audio " +
                         shape_str(audio.shape()));
  }
  auto g_hat = ad::l2_normalize_rows(gb.x);
  auto a_hat = ad::l2_normalize_rows(a.x);
  std::vector<std::int64_t> index(static_cast<std::size_t>(frames * rows * dim));
  for (std::int64_t b = 0; b < frames; ++b)
    for (std::int64_t p = 0; p < rows; ++p)
      for (std::int64_t d = 0; d < dim; ++d) index[(b * rows + p) * dim + d] = b * dim + d;
  auto a_rows = ad::gather(a_hat, std::move(index), gb.x.shape());
  return unbatched(ad::sum_axis(ad::mul(g_hat, a_rows), 2), gb.squeeze);
}

Partition partition(const std::vector<double>& similarity, const ContrastiveConfig& cfg) {
  Partition part;
  part.response.reserve(similarity.size());
  for (std::size_t i = 0; i < similarity.size(); ++i) {
    const double r = 1.0 / (1.0 + std::exp(-cfg.sigma_p * similarity[i]));
    part.response.push_back(r);
    if (r > cfg.epsilon_a) part.positive.push_back(int(i));
    if (r < cfg.epsilon_a) part.negative.push_back(int(i));
  }
  return part;
}

namespace {

double log_sum_exp(const std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double acc = 0;
  for (double v : z) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

// Mean over rows of the per-row loss; rows with an empty positive or negative
// set contribute zero.
template <typename Real>
Var<Real> contrastive_rows(const Var<Real>& a, std::vector<Partition> parts, std::int64_t width,
                           double tau) {
  const auto rows = static_cast<std::int64_t>(parts.size());
  double total = 0;
  for (std::int64_t b = 0; b < rows; ++b) {
    const auto& part = parts[b];
    if (part.positive.empty() || part.negative.empty()) continue;
    std::vector<double> pos, all;
    for (int i : part.positive) pos.push_back(double(a.value()[b * width + i]) / tau);
    all = pos;
    for (int j : part.negative) all.push_back(double(a.value()[b * width + j]) / tau);
    total += log_sum_exp(all) - log_sum_exp(pos);
  }
  const double inv_rows = 1.0 / double(rows);
  auto value = BasicTensor<Real>::scalar(Real(total * inv_rows));
  return ad::make_op(std::move(value), {a}, [parts = std::move(parts), width, tau,
                                             inv_rows](ad::Node<Real>& n) {
    auto* g = n.parent_grad(0);
    if (!g) return;
    const double up = double(n.grad[0]) * inv_rows / tau;
    const auto& av = n.parent_value(0);
    for (std::size_t b = 0; b < parts.size(); ++b) {
      const auto& part = parts[b];
      if (part.positive.empty() || part.negative.empty()) continue;
      std::vector<double> pos, all;
      for (int i : part.positive) pos.push_back(double(av[b * width + i]) / tau);
      all = pos;
      for (int j : part.negative) all.push_back(double(av[b * width + j]) / tau);
      const double lse_pos = log_sum_exp(pos), lse_all = log_sum_exp(all);
      for (std::size_t m = 0; m < part.positive.size(); ++m) {
        const double d = std::exp(pos[m] - lse_all) - std::exp(pos[m] - lse_pos);
        (*g)[b * width + part.positive[m]] += Real(up * d);
      }
      for (std::size_t m = 0; m < part.negative.size(); ++m) {
        const double d = std::exp(all[part.positive.size() + m] - lse_all);
        (*g)[b * width + part.negative[m]] += Real(up * d);
      }
    }
  });
}

}  // namespace

template <typename Real>
Var<Real> contrastive_loss(const Var<Real>& a, const Partition& part, double tau) {
  if (part.response.size() != a.size()) {
    throw DimensionError("contrastive_loss: partition of " + std::to_string(part.response.size()) +
                         " for " + std::to_string(a.size()) + " similarities");
  }
  if (!(tau > 0)) throw ConfigError("contrastive_loss: tau must be positive");
  return contrastive_rows(a, {part}, std::int64_t(a.size()), tau);
}

template <typename Real>
Var<Real> contrastive_loss_frames(const Var<Real>& a, const ContrastiveConfig& cfg,
                                  ContrastiveStats* stats) {
  cfg.validate();
  const auto b = batched(a, 2);
  const auto frames = b.x.dim(0), width = b.x.dim(1);
  std::vector<Partition> parts;
  for (std::int64_t f = 0; f < frames; ++f) {
    std::vector<double> sim(static_cast<std::size_t>(width));
    for (std::int64_t p = 0; p < width; ++p) sim[p] = double(b.x.value()[f * width + p]);
    parts.push_back(partition(sim, cfg));
    if (stats) {
      ++stats->frames;
      if (parts.back().positive.empty()) ++stats->empty_positive;
      else if (parts.back().negative.empty()) ++stats->empty_negative;
    }
  }
  return contrastive_rows(b.x, std::move(parts), width, cfg.tau);
}

template <typename Real>
BlockOutput<Real> ama_block(const Bound<Real>& p, const std::string& prefix, const Var<Real>& f_v,
                            const Var<Real>& f_a, const LevelConfig& cfg, bool merge,
                            const std::vector<grouping::GroupAssignment>* frozen) {
  cfg.validate();
  const auto v = batched(f_v, 3);
  const auto a = batched(f_a, 2);
  auto fusion = cross_attend(p, prefix, v.x, a.x, cfg.heads);
  BlockOutput<Real> out;
  out.audio = unbatched(fusion.audio, a.squeeze);
  if (!merge) {
    out.next = unbatched(fusion.fused, v.squeeze);
    return out;
  }
  const auto frames = v.x.dim(0), tokens = v.x.dim(1), dim = v.x.dim(2);
  if (frozen) {
    out.groups = *frozen;
  } else {
    const auto& values = v.x.value();
    for (std::int64_t b = 0; b < frames; ++b) {
      Tensor frame(Shape{tokens, dim});
      for (std::int64_t i = 0; i < tokens * dim; ++i)
        frame[i] = static_cast<float>(values[b * tokens * dim + i]);
      out.groups.push_back(grouping::group_tokens(frame, cfg.groups, cfg.knn));
    }
  }
  auto scores = relevance_scores(p, prefix, fusion.fused);
  auto g = merge_groups(fusion.fused, scores, out.groups);
  g = update_compact(g, v.x, scores, cfg.depth);
  out.next = unbatched(remap(g, out.groups, v.x), v.squeeze);
  out.compact = unbatched(g, v.squeeze);
  out.scores = unbatched(scores, v.squeeze);
  return out;
}

#define AVSEG_INSTANTIATE_AMA(R)                                                                \
  template Fusion<R> cross_attend(const Bound<R>&, const std::string&, const Var<R>&,           \
                                  const Var<R>&, int);                                          \
  template Var<R> relevance_scores(const Bound<R>&, const std::string&, const Var<R>&);         \
  template Var<R> merge_groups(const Var<R>&, const Var<R>&,                                    \
                               const std::vector<grouping::GroupAssignment>&);                  \
  template Var<R> update_compact(const Var<R>&, const Var<R>&, const Var<R>&, int);             \
  template Var<R> remap(const Var<R>&, const std::vector<grouping::GroupAssignment>&,           \
                        const Var<R>&);                                                         \
  template Var<R> alignment_similarity(const Var<R>&, const Var<R>&);                           \
  template Var<R> contrastive_loss(const Var<R>&, const Partition&, double);                    \
  template Var<R> contrastive_loss_frames(const Var<R>&, const ContrastiveConfig&,              \
                                          ContrastiveStats*);                                   \
  template BlockOutput<R> ama_block(const Bound<R>&, const std::string&, const Var<R>&,         \
                                    const Var<R>&, const LevelConfig&, bool,                    \
                                    const std::vector<grouping::GroupAssignment>*);

AVSEG_INSTANTIATE_AMA(float)
AVSEG_INSTANTIATE_AMA(double)

#undef AVSEG_INSTANTIATE_AMA

}  // namespace avseg::ama
