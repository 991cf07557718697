#include "avseg/gradient_suite.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "avseg/grad_check.hpp"
#include "avseg/model.hpp"
#include "avseg/uncertainty.hpp"

namespace avseg::model {

namespace {

constexpr double kComponentTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;
// log(delta_norm + 1e-6) is sharply curved near delta_norm = 0, so checks
// through the uncertainty weighting use a smaller central-difference step.
constexpr double kCurvedStep = 1e-5;

Tensor randn(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = float(rng.normal() * scale);
  return t;
}

template <typename R>
ad::Var<R> lift(const Tensor& t) {
  return ad::constant(t.cast<R>());
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.height = c.width = 16;
  c.frames = 2;
  c.classes = 3;
  c.audio_dim = 4;
  c.audio_embed = 8;
  c.level_dims = {8, 8, 8};
  c.groups = {4, 2, 1};
  c.heads = 2;
  c.depth = 1;
  c.decoder_dim = 8;
  c.temporal_heads = 2;
  return c;
}

}  // namespace

std::vector<SuiteEntry> gradient_suite(std::uint64_t seed, const ama::ContrastiveConfig& contrastive,
                                       bool corrupt) {
  contrastive.validate();
  Rng rng(seed);
  std::vector<SuiteEntry> out;
  auto in = [corrupt](auto x) {
    using R = typename decltype(x)::value_type;
    return corrupt ? ad::corrupt_grad(x, R(1.5)) : x;
  };
  auto record = [&](const std::string& name, const GradCheckResult& r, double tol) {
    out.push_back({name, r.max_error, tol, r.checked});
  };

  {
    // similarities kept away from 0 so the partition is stable under the step
    Tensor a({2, 6});
    for (auto& v : a.data()) {
      const double u = rng.uniform();
      v = float((u < 0.5 ? -1 : 1) * (0.1 + 0.8 * rng.uniform()));
    }
    record("contrastive_loss",
           grad_check([&](auto x) { return ama::contrastive_loss_frames(in(x), contrastive); }, a),
           kComponentTolerance);
  }

  {
    const Tensor logits = randn(rng, {2, 3, 4, 4});
    std::vector<std::int32_t> gt(32);
    for (auto& g : gt) g = std::int32_t(rng.uniform_int(3));
    const Tensor w = randn(rng, {3});
    record("seg_loss",
           grad_check(
               [&](auto x) {
                 using R = typename decltype(x)::value_type;
                 const auto terms = seg_loss_terms(ad::log_softmax(in(x), 1), gt);
                 return ad::sum(ad::mul(terms, lift<R>(w)));
               },
               logits),
           kComponentTolerance);
  }

  {
    const Tensor m = randn(rng, {2, 3, 3, 3});
    const Tensor u = randn(rng, {2, 3, 3, 3});
    const Tensor w = randn(rng, {2, 3, 3, 3});
    record("uncertainty",
           grad_check(
               [&](auto x) {
                 using R = typename decltype(x)::value_type;
                 const auto lp = uncertainty::uncertain_log_probs(lift<R>(m), in(x)).log_probs;
                 return ad::sum(ad::mul(lp, lift<R>(w)));
               },
               u, {kCurvedStep}),
           kComponentTolerance);
  }

  {
    ama::LevelConfig lc;
    lc.dim = 8;
    lc.audio_dim = 6;
    lc.groups = 3;
    lc.heads = 2;
    lc.depth = 2;
    ParamStore store;
    ama::init_params(store, "ama", lc, rng);
    // resample until every frame has both positive and negative groups
    Tensor fv, fa;
    for (int attempt = 0; attempt < 100; ++attempt) {
      fv = randn(rng, {2, 12, 8});
      fa = randn(rng, {2, 6});
      const Bound<float> p(store, false);
      const auto b = ama::ama_block(p, "ama", ad::constant(fv), ad::constant(fa), lc);
      ama::ContrastiveStats stats;
      ama::contrastive_loss_frames(ama::alignment_similarity(b.compact, b.audio), contrastive, &stats);
      if (stats.empty_positive == 0 && stats.empty_negative == 0) break;
    }
    const Tensor w_next = randn(rng, {2, 12, 8});
    const Tensor w_compact = randn(rng, {2, 3, 8});
    const Bound<float> p0(store, false);
    const auto groups = ama::ama_block(p0, "ama", ad::constant(fv), ad::constant(fa), lc).groups;
    record("ama_block",
           grad_check(
               [&](auto x) {
                 using R = typename decltype(x)::value_type;
                 const Bound<R> p(store, false);
                 const auto b = ama::ama_block(p, "ama", in(x), lift<R>(fa), lc, true, &groups);
                 return ad::add(ad::sum(ad::mul(b.next, lift<R>(w_next))),
                                ad::sum(ad::mul(b.compact, lift<R>(w_compact))));
               },
               fv),
           kComponentTolerance);
    record("ama_contrastive",
           grad_check(
               [&](auto x) {
                 using R = typename decltype(x)::value_type;
                 const Bound<R> p(store, false);
                 const auto b = ama::ama_block(p, "ama", in(x), lift<R>(fa), lc, true, &groups);
                 return ama::contrastive_loss_frames(ama::alignment_similarity(b.compact, b.audio),
                                                     contrastive);
               },
               fv),
           kComponentTolerance);
  }

  {
    ParamStore store;
    for (const char* n : {"t.q", "t.k", "t.v", "t.o"}) init_linear(store, n, 8, 8, rng);
    const Tensor x0 = randn(rng, {3, 5, 8});
    const Tensor w = randn(rng, {3, 5, 8});
    record("temporal_attention",
           grad_check(
               [&](auto x) {
                 using R = typename decltype(x)::value_type;
                 const Bound<R> p(store, false);
                 return ad::sum(ad::mul(temporal_attention(p, "t", in(x), 2), lift<R>(w)));
               },
               x0),
           kComponentTolerance);
  }

  {
    auto cfg = tiny_model();
    cfg.seed = seed;
    cfg.contrastive = contrastive;
    const auto store = init_params(cfg);
    Tensor frames({cfg.frames, cfg.height, cfg.width, 3});
    for (auto& v : frames.data()) v = float(rng.uniform());
    const Tensor audio = randn(rng, {cfg.frames, cfg.audio_dim});
    std::vector<std::int32_t> gt(std::size_t(cfg.frames * cfg.height * cfg.width));
    for (auto& g : gt) g = std::int32_t(rng.uniform_int(std::uint64_t(cfg.classes)));
    const Bound<float> p0(store, false);
    const auto frozen = forward(p0, cfg, ad::constant(frames), ad::constant(audio)).groups;
    GradCheckResult worst;
    for (const auto& name : store.names()) {
      if (name.size() < 2 || name.compare(name.size() - 2, 2, ".w") != 0) continue;
      const auto r = grad_check(
          [&](auto x) {
            using R = typename decltype(x)::value_type;
            Bound<R> p(store, false);
            p.replace(name, in(x));
            const auto fw = forward(p, cfg, lift<R>(frames), lift<R>(audio), &frozen);
            return compute_loss(fw, gt, cfg, nullptr).total;
          },
          store.at(name), {kCurvedStep, 4, seed});
      worst.checked += r.checked;
      if (!(r.max_error <= worst.max_error)) worst.max_error = r.max_error;
    }
    record("full_model", worst, kModelTolerance);
  }
  return out;
}

std::string format_suite(const std::vector<SuiteEntry>& entries) {
  std::ostringstream os;
  os << "component\tcoords\tmax_error\ttolerance\tstatus\n";
  char line[160];
  for (const auto& e : entries) {
    std::snprintf(line, sizeof line, "%s\t%zu\t%.3e\t%.0e\t%s\n", e.component.c_str(), e.checked,
                  e.max_error, e.tolerance, e.pass() ? "PASS" : "FAIL");
    os << line;
  }
  return os.str();
}

}  // namespace avseg::model
