#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <algorithm>

#include "avseg/errors.hpp"
#include "avseg/grad_check.hpp"
#include "avseg/gradient_suite.hpp"
#include "avseg/model.hpp"
#include "avseg/ops.hpp"
#include "avseg/tensor_file.hpp"
#include "doctest.h"

using namespace avseg;
using model::ModelConfig;

namespace {

Tensor randn(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = float(rng.normal() * scale);
  return t;
}

Tensor uniform(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = float(rng.uniform());
  return t;
}

ModelConfig tiny(int classes = 3) {
  ModelConfig c;
  c.height = c.width = 16;
  c.frames = 2;
  c.classes = classes;
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

// 32x32 clips with small objects, for quick training runs.
synth::Dataset small_dataset(std::uint64_t seed, int clips) {
  synth::SynthConfig sc;
  sc.height = sc.width = 32;
  sc.frames = 3;
  sc.audio_dim = 4;
  sc.classes = 3;
  sc.radius_min = 3;
  sc.radius_max = 5;
  return synth::generate_dataset(seed, clips, {0.4, 0.3, 0.3}, sc);
}

ModelConfig small_model() {
  ModelConfig c = tiny();
  c.height = c.width = 32;
  c.frames = 3;
  c.steps = 50;
  c.batch = 2;
  c.eval_every = 1000;
  c.learning_rate = 3e-3;
  return c;
}

model::ClipBatch random_clip(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  model::ClipBatch b{uniform(rng, {c.frames, c.height, c.width, 3}), randn(rng, {c.frames, c.audio_dim}), {}};
  for (std::int64_t i = 0; i < c.frames * c.height * c.width; ++i)
    b.gt.push_back(std::int32_t(rng.uniform_int(std::uint64_t(c.classes))));
  return b;
}

// Plain double evaluation of CE + Dice + IoU over foreground channels.
std::array<double, 3> seg_oracle(const Tensor64& lp, const std::vector<std::int32_t>& gt) {
  const auto T = lp.dim(0), C = lp.dim(1), HW = lp.dim(2) * lp.dim(3);
  double ce = 0, dice = 0, iou = 0;
  for (std::int64_t t = 0; t < T; ++t) {
    double inter = 0, pred = 0, truth = 0;
    for (std::int64_t px = 0; px < HW; ++px) {
      const int g = gt[t * HW + px];
      ce -= lp[(t * C + g) * HW + px];
      for (std::int64_t c = 1; c < C; ++c) {
        const double p = std::exp(lp[(t * C + c) * HW + px]);
        pred += p;
        if (c == g) {
          inter += p;
          truth += 1;
        }
      }
    }
    dice += 1 - 2 * inter / (pred + truth + 1);
    iou += 1 - inter / (pred + truth - inter + 1);
  }
  return {ce / double(T * HW), dice / double(T), iou / double(T)};
}

template <typename A, typename B>
bool same(const A& a, const B& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

TEST_CASE("config: defaults validate and survive a JSON round trip") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.ablation = model::Ablation::NoCst;
  c.groups = {10, 6, 3};
  const auto back = model::config_from_json(model::to_json(c));
  CHECK(model::to_json(back) == model::to_json(c));
  CHECK(back.ablation == model::Ablation::NoCst);
}

TEST_CASE("config: unknown keys, bad types and impossible group counts are rejected") {
  CHECK_THROWS_AS(model::config_from_json({{"groupz", 3}}), ConfigError);
  CHECK_THROWS_AS(model::config_from_json({{"steps", "many"}}), ConfigError);
  CHECK_THROWS_AS(model::config_from_json({{"ablation", "no-audio"}}), ConfigError);
  CHECK_THROWS_AS(model::config_from_json({{"groups", {14, 7, 17}}}), ConfigError);
  CHECK_THROWS_AS(model::config_from_json({{"height", 40}}), ConfigError);
}

TEST_CASE("ablation switches") {
  ModelConfig c;
  CHECK((c.merge() && c.contrastive_on() && c.uncertainty_on()));
  c.ablation = model::Ablation::NoUe;
  CHECK((c.merge() && c.contrastive_on() && !c.uncertainty_on()));
  c.ablation = model::Ablation::NoCst;
  CHECK((c.merge() && !c.contrastive_on() && !c.uncertainty_on()));
  c.ablation = model::Ablation::NoSgsm;
  CHECK((!c.merge() && !c.contrastive_on() && !c.uncertainty_on()));
  c = ModelConfig{};
  c.lambda_cst = 0;
  CHECK_FALSE(c.contrastive_on());
  for (auto a : {model::Ablation::None, model::Ablation::NoUe, model::Ablation::NoCst, model::Ablation::NoSgsm})
    CHECK(model::ablation_from(model::to_string(a)) == a);
}

TEST_CASE("init_params is seeded and complete") {
  const auto c = tiny();
  const auto a = model::init_params(c), b = model::init_params(c);
  REQUIRE(a.names() == b.names());
  for (const auto& n : a.names()) CHECK(same(a.at(n).data(), b.at(n).data()));
  for (const char* n : {"audio_enc.w", "enc1.w", "enc3.b", "ama2.rel2.w", "lat3.w", "temporal.o.w",
                        "seg2.w", "unc2.b"})
    CHECK(a.contains(n));
  CHECK(a.at("enc1.w").shape() == Shape{48, 8});
  CHECK(a.at("seg2.w").shape() == Shape{8, 3});
  auto other = c;
  other.seed = 8;
  const auto reseeded = model::init_params(other);
  CHECK_FALSE(same(reseeded.at("enc1.w").data(), a.at("enc1.w").data()));
}

TEST_CASE("audio encoder is a rectified affine map") {
  ParamStore s;
  s.add("audio_enc.w", Tensor({2, 2}, {1, -1, 2, 0}));
  s.add("audio_enc.b", Tensor({2}, {0.5f, 0}));
  const Bound<float> p(s, false);
  const auto y = model::audio_encoder(p, ad::constant(Tensor({2, 2}, {1, 1, -1, 0}))).value();
  CHECK(same(y.data(), std::vector<float>{3.5f, 0, 0, 1}));

  const auto c = tiny();
  auto store = model::init_params(c);
  const Bound<float> q(store, false);
  const auto z = model::audio_encoder(q, ad::constant(Tensor({2, 4}))).value();
  for (float v : z.data()) CHECK(v == 0.0f);
}

TEST_CASE("encode_level: a black frame with zero biases embeds to zeros") {
  const auto c = tiny();
  const auto store = model::init_params(c);
  const Bound<float> p(store, false);
  const auto f = model::encode_level(p, c, 0, ad::constant(Tensor({2, 16, 16, 3})));
  CHECK(f.shape() == Shape{2, 16, 8});
  for (float v : f.value().data()) CHECK(v == 0.0f);
}

TEST_CASE("forward: shapes, normalisation and determinism") {
  const auto c = tiny();
  const auto store = model::init_params(c);
  const Bound<float> p(store, false);
  const auto clip = random_clip(c, 3);
  const auto a = model::forward(p, c, ad::constant(clip.frames), ad::constant(clip.audio));
  const auto b = model::forward(p, c, ad::constant(clip.frames), ad::constant(clip.audio));
  CHECK(a.logits.shape() == Shape{2, 3, 16, 16});
  CHECK(a.delta_norm.shape() == Shape{2, 3, 16, 16});
  CHECK(a.compact.shape() == Shape{2, 1, 8});
  CHECK(a.audio.shape() == Shape{2, 8});
  CHECK(a.groups[0].size() == 2);
  CHECK(a.groups[0][0].num_groups == 4);
  CHECK(a.groups[0][0].labels.size() == 16);
  CHECK(same(a.logits.value().data(), b.logits.value().data()));
  CHECK(same(a.log_probs.value().data(), b.log_probs.value().data()));
  for (float v : a.delta_norm.value().data()) CHECK((v >= 0.0f && v <= 1.0f));
  const auto& lp = a.log_probs.value();
  for (std::int64_t t = 0; t < 2; ++t)
    for (std::int64_t px = 0; px < 256; ++px) {
      double s = 0;
      for (std::int64_t k = 0; k < 3; ++k) s += std::exp(double(lp[(t * 3 + k) * 256 + px]));
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("forward rejects mismatched inputs") {
  const auto c = tiny();
  const auto store = model::init_params(c);
  const Bound<float> p(store, false);
  CHECK_THROWS_AS(model::forward(p, c, ad::constant(Tensor({2, 8, 16, 3})), ad::constant(Tensor({2, 4}))),
                  DimensionError);
  CHECK_THROWS_AS(model::forward(p, c, ad::constant(Tensor({2, 16, 16, 3})), ad::constant(Tensor({3, 4}))),
                  DimensionError);
}

TEST_CASE("without uncertainty the prediction is the argmax of the logits") {
  auto c = tiny();
  c.ablation = model::Ablation::NoUe;
  const auto store = model::init_params(c);
  const Bound<float> p(store, false);
  const auto clip = random_clip(c, 5);
  const auto out = model::forward(p, c, ad::constant(clip.frames), ad::constant(clip.audio));
  for (float v : out.delta_norm.value().data()) CHECK(v == 0.0f);
  const auto pred = model::predict(store, c, clip);
  const auto ref = ops::argmax(ops::sigmoid(out.logits.value()), 1);
  REQUIRE(pred.size() == ref.size());
  for (std::size_t i = 0; i < pred.size(); ++i) CHECK(pred[i] == ref[i]);
}

TEST_CASE("temporal attention: one frame reduces to out(value(x)) plus x") {
  Rng rng(11);
  ParamStore s;
  for (const char* n : {"t.q", "t.k", "t.v", "t.o"}) init_linear(s, n, 4, 4, rng);
  s.at("t.o.b") = randn(rng, {4});
  const Bound<float> p(s, false);
  const Tensor x = randn(rng, {1, 5, 4});
  const auto y = model::temporal_attention(p, "t", ad::constant(x), 2).value();
  const auto expect = ops::add(x, linear(p, "t.o", linear(p, "t.v", ad::constant(x))).value());
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-5));
}

TEST_CASE("temporal attention matches a naive per-pixel oracle") {
  Rng rng(12);
  ParamStore s;
  const int D = 4, H = 2, T = 3, N = 2, dh = D / H;
  for (const char* n : {"t.q", "t.k", "t.v", "t.o"}) {
    init_linear(s, n, D, D, rng);
    s.at(std::string(n) + ".b") = randn(rng, {D}, 0.3);
  }
  const Bound<float> p(s, false);
  const Tensor x = randn(rng, {T, N, D});
  const auto y = model::temporal_attention(p, "t", ad::constant(x), H).value();

  auto affine = [&](const std::string& name, const std::vector<double>& in) {
    std::vector<double> out(D);
    for (int o = 0; o < D; ++o) {
      double acc = s.at(name + ".b")[o];
      for (int i = 0; i < D; ++i) acc += in[i] * s.at(name + ".w").at(i, o);
      out[o] = acc;
    }
    return out;
  };
  for (int n = 0; n < N; ++n) {
    std::vector<std::vector<double>> q(T), k(T), v(T), xs(T);
    for (int t = 0; t < T; ++t) {
      xs[t].resize(D);
      for (int d = 0; d < D; ++d) xs[t][d] = x[(t * N + n) * D + d];
      q[t] = affine("t.q", xs[t]);
      k[t] = affine("t.k", xs[t]);
      v[t] = affine("t.v", xs[t]);
    }
    for (int t = 0; t < T; ++t) {
      std::vector<double> ctx(D, 0.0);
      for (int h = 0; h < H; ++h) {
        std::vector<double> z(T);
        for (int u = 0; u < T; ++u) {
          double dot = 0;
          for (int d = 0; d < dh; ++d) dot += q[t][h * dh + d] * k[u][h * dh + d];
          z[u] = dot / std::sqrt(double(dh));
        }
        const double mx = *std::max_element(z.begin(), z.end());
        double den = 0;
        for (auto& e : z) den += (e = std::exp(e - mx));
        for (int u = 0; u < T; ++u)
          for (int d = 0; d < dh; ++d) ctx[h * dh + d] += z[u] / den * v[u][h * dh + d];
      }
      const auto o = affine("t.o", ctx);
      for (int d = 0; d < D; ++d) CHECK(y[(t * N + n) * D + d] == doctest::Approx(xs[t][d] + o[d]).epsilon(1e-5));
    }
  }
}

TEST_CASE("temporal attention is equivariant to frame and pixel permutations") {
  Rng rng(13);
  ParamStore s;
  for (const char* n : {"t.q", "t.k", "t.v", "t.o"}) init_linear(s, n, 4, 4, rng);
  const Bound<float> p(s, false);
  const Tensor x = randn(rng, {3, 2, 4});
  const auto y = model::temporal_attention(p, "t", ad::constant(x), 2).value();
  const std::vector<int> tp{2, 0, 1}, np{1, 0};
  Tensor xp({3, 2, 4});
  for (int t = 0; t < 3; ++t)
    for (int n = 0; n < 2; ++n)
      for (int d = 0; d < 4; ++d) xp[(t * 2 + n) * 4 + d] = x[(tp[t] * 2 + np[n]) * 4 + d];
  const auto yp = model::temporal_attention(p, "t", ad::constant(xp), 2).value();
  for (int t = 0; t < 3; ++t)
    for (int n = 0; n < 2; ++n)
      for (int d = 0; d < 4; ++d)
        CHECK(yp[(t * 2 + n) * 4 + d] == doctest::Approx(y[(tp[t] * 2 + np[n]) * 4 + d]).epsilon(1e-5));
}

TEST_CASE("seg loss: uniform two-class prediction costs ln 2 in cross-entropy") {
  Tensor64 lp({1, 2, 2, 2}, std::vector<double>(8, std::log(0.5)));
  const std::vector<std::int32_t> gt{0, 1, 1, 0};
  const auto terms = model::seg_loss_terms(ad::constant(lp), gt).value();
  CHECK(terms[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // two foreground pixels: I = 1, P = 2, G = 2
  CHECK(terms[1] == doctest::Approx(1 - 2.0 / 5.0).epsilon(1e-12));
  CHECK(terms[2] == doctest::Approx(1 - 1.0 / 4.0).epsilon(1e-12));
}

TEST_CASE("seg loss: a confident correct prediction is nearly free") {
  const std::vector<std::int32_t> gt{0, 1, 2, 1, 0, 0, 2, 2, 1};
  Tensor64 lp({1, 3, 3, 3});
  for (int px = 0; px < 9; ++px)
    for (int c = 0; c < 3; ++c) lp[c * 9 + px] = c == gt[px] ? std::log(1 - 2e-12) : std::log(1e-12);
  const auto terms = model::seg_loss_terms(ad::constant(lp), gt).value();
  CHECK(terms[0] < 1e-9);
  // only the smoothing term remains: 1 - 2G/(2G+1), 1 - G/(G+1) with G = 6
  CHECK(terms[1] == doctest::Approx(1.0 / 13.0).epsilon(1e-9));
  CHECK(terms[2] == doctest::Approx(1.0 / 7.0).epsilon(1e-9));
}

TEST_CASE("seg loss matches a double oracle on random predictions") {
  Rng rng(21);
  const Tensor64 logits = randn(rng, {3, 4, 5, 6}, 2.0).cast<double>();
  const auto lp = ops::log_softmax(logits, 1);
  std::vector<std::int32_t> gt(3 * 30);
  for (auto& g : gt) g = std::int32_t(rng.uniform_int(4));
  const auto want = seg_oracle(lp, gt);
  const auto got = model::seg_loss_terms(ad::constant(lp.cast<float>()), gt).value();
  for (int i = 0; i < 3; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
}

TEST_CASE("seg loss rejects bad labels and shapes") {
  Tensor lp({1, 2, 2, 2});
  CHECK_THROWS_AS(model::seg_loss_terms(ad::constant(lp), {0, 1, 2, 0}), DataError);
  CHECK_THROWS_AS(model::seg_loss_terms(ad::constant(lp), {0, 1, 1}), DimensionError);
}

TEST_CASE("seg loss gradient passes a finite-difference check") {
  Rng rng(22);
  const Tensor logits = randn(rng, {2, 3, 4, 4});
  std::vector<std::int32_t> gt(32);
  for (auto& g : gt) g = std::int32_t(rng.uniform_int(3));
  const Tensor w = randn(rng, {3});
  const auto r = grad_check(
      [&](auto x) {
        using R = typename decltype(x)::value_type;
        const auto terms = model::seg_loss_terms(ad::log_softmax(x, 1), gt);
        return ad::sum(ad::mul(terms, ad::constant(w.cast<R>())));
      },
      logits);
  CHECK(r.max_error < 1e-4);
}

TEST_CASE("loss weighting examples") {
  ModelConfig c;
  const auto one = ad::constant(Tensor64({1}, {1.0}));
  CHECK(model::weighted_total(one, one, c).item() == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(model::weighted_total(one, ad::constant(Tensor64({1}, {0.0})), c).item() == 1.0);
  CHECK(model::weighted_total(one, ad::Var<double>(), c).item() == 1.0);
}

TEST_CASE("total loss is the weighted sum of its parts") {
  auto c = tiny();
  c.lambda_seg = 1.0;
  c.lambda_cst = 0.1;
  const auto store = model::init_params(c);
  const Bound<double> p(store, false);
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto clip = random_clip(c, seed);
    const auto out = model::forward(p, c, ad::constant(clip.frames.cast<double>()),
                                    ad::constant(clip.audio.cast<double>()));
    ama::ContrastiveStats stats;
    const auto parts = model::compute_loss(out, clip.gt, c, &stats);
    CHECK(stats.frames == 2);
    CHECK(parts.total.item() == doctest::Approx(parts.seg + 0.1 * parts.cst).epsilon(1e-12));
  }
}

TEST_CASE("a zero contrastive weight never evaluates the contrastive loss") {
  auto c = tiny();
  c.lambda_cst = 0;
  const auto store = model::init_params(c);
  const Bound<float> p(store, false);
  const auto clip = random_clip(c, 9);
  const auto out = model::forward(p, c, ad::constant(clip.frames), ad::constant(clip.audio));
  ama::ContrastiveStats stats;
  const auto parts = model::compute_loss(out, clip.gt, c, &stats);
  CHECK(stats.frames == 0);
  CHECK(parts.cst == 0.0);
  CHECK(parts.total.item() == doctest::Approx(parts.seg).epsilon(1e-6));
}

TEST_CASE("full model gradient passes a finite-difference check") {
  auto c = tiny();
  const auto store = model::init_params(c);
  const auto clip = random_clip(c, 31);
  const Bound<float> p0(store, false);
  const auto frozen = model::forward(p0, c, ad::constant(clip.frames), ad::constant(clip.audio)).groups;
  for (const std::string name : {"enc1.w", "audio_enc.w", "ama1.q.w", "ama2.rel1.w", "ama3.o.w", "lat2.w",
                           "temporal.v.w", "seg2.w", "unc1.w", "unc2.b"}) {
    CAPTURE(name);
    const auto r = grad_check(
        [&](auto x) {
          using R = typename decltype(x)::value_type;
          Bound<R> p(store, false);
          p.replace(name, x);
          const auto out = model::forward(p, c, ad::constant(clip.frames.cast<R>()),
                                          ad::constant(clip.audio.cast<R>()), &frozen);
          return model::compute_loss(out, clip.gt, c, nullptr).total;
        },
        store.at(name), {1e-3, 12, 5});
    CHECK(r.max_error < 1e-3);
  }
}

TEST_CASE("training lowers the loss and is reproducible") {
  const auto data = small_dataset(3, 12);
  const auto c = small_model();
  const auto a = model::train(data, c);
  REQUIRE(a.losses.size() == 50);
  auto window = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 10; ++i) s += a.losses[i].total;
    return s / 10;
  };
  CHECK(window(40) < window(0));
  const auto b = model::train(data, c);
  CHECK(model::loss_csv(a.losses) == model::loss_csv(b.losses));
  for (const auto& n : a.params.names()) CHECK(same(a.params.at(n).data(), b.params.at(n).data()));
  CHECK(a.validation.size() == 1);
  CHECK(a.validation.back().jf == a.final_val.jf);
}

TEST_CASE("training without the contrastive term never touches it") {
  const auto data = small_dataset(4, 10);
  auto c = small_model();
  c.steps = 4;
  c.lambda_cst = 0;
  const auto r = model::train(data, c);
  CHECK(r.contrastive.frames == 0);
  for (const auto& row : r.losses) CHECK(row.cst == 0.0);
  c.lambda_cst = 0.1;
  CHECK(model::train(data, c).contrastive.frames == 4 * 2 * 3);
}

TEST_CASE("loss_csv layout") {
  const auto csv = model::loss_csv({{1, 1.5, 1.25, 2.5}});
  CHECK(csv == "step,total,seg,cst\n1,1.5,1.25,2.5\n");
}

TEST_CASE("checkpoints round trip and refuse mismatched parameters") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "avseg_test_ckpt";
  fs::remove_all(dir);
  const auto c = tiny();
  const auto store = model::init_params(c);
  model::save_checkpoint(dir.string(), store, c);
  const auto ck = model::load_checkpoint(dir.string());
  CHECK(model::to_json(ck.config) == model::to_json(c));
  REQUIRE(ck.params.names().size() == store.names().size());
  for (const auto& n : store.names()) CHECK(same(ck.params.at(n).data(), store.at(n).data()));

  save_tensor(dir / "seg2.w.avtk", Tensor({8, 4}));
  CHECK_THROWS_AS(model::load_checkpoint(dir.string()), ArtifactMismatch);
  fs::remove(dir / "seg2.w.avtk");
  CHECK_THROWS_AS(model::load_checkpoint(dir.string()), IoError);
  fs::remove_all(dir);
  CHECK_THROWS_AS(model::load_checkpoint(dir.string()), IoError);
}

TEST_CASE("gradient suite passes and rejects a corrupted adjoint") {
  const auto good = model::gradient_suite(1);
  REQUIRE(good.size() == 7);
  for (const auto& e : good) {
    CAPTURE(e.component);
    CHECK(e.pass());
    CHECK(e.checked > 0);
  }
  const auto again = model::gradient_suite(1);
  CHECK(model::format_suite(good) == model::format_suite(again));
  for (const auto& e : model::gradient_suite(1, {}, true)) {
    CAPTURE(e.component);
    CHECK_FALSE(e.pass());
  }
}
