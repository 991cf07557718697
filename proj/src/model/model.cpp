#include "avseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "avseg/errors.hpp"
#include "avseg/ops.hpp"
#include "avseg/tensor_file.hpp"
#include "avseg/uncertainty.hpp"

namespace avseg::model {

namespace fs = std::filesystem;

namespace {

template <typename Real>
using Var = ad::Var<Real>;

constexpr int kConfigVersion = 1;

std::string level_name(const char* stem, int level) { return stem + std::to_string(level + 1); }

template <typename Real>
Var<Real> mlp_head(const Bound<Real>& p, const std::string& prefix, const Var<Real>& x) {
  return linear(p, prefix + "2", ad::gelu(linear(p, prefix + "1", x)));
}

}  // namespace

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoUe: return "no-ue";
    case Ablation::NoCst: return "no-cst";
    case Ablation::NoSgsm: return "no-sgsm";
  }
  return "none";
}

Ablation ablation_from(const std::string& s) {
  if (s == "none") return Ablation::None;
  if (s == "no-ue") return Ablation::NoUe;
  if (s == "no-cst") return Ablation::NoCst;
  if (s == "no-sgsm") return Ablation::NoSgsm;
  throw ConfigError("unknown ablation '" + s + "' (expected none, no-sgsm, no-cst or no-ue)");
}

ama::LevelConfig ModelConfig::level(int l) const {
  ama::LevelConfig lc;
  lc.dim = level_dims[l];
  lc.audio_dim = audio_embed;
  lc.groups = groups[l];
  lc.heads = heads;
  lc.depth = depth;
  lc.knn = knn;
  return lc;
}

void ModelConfig::validate() const {
  if (height < 16 || width < 16 || height % 16 || width % 16) {
    throw ConfigError("model: image size " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be positive multiples of 16");
  }
  if (frames < 1) throw ConfigError("model: frames must be at least 1");
  if (classes < 2) throw ConfigError("model: at least two classes are required");
  if (audio_dim < 1 || audio_embed < 1 || decoder_dim < 1) throw ConfigError("model: dimensions must be positive");
  for (int l = 0; l < 3; ++l) {
    level(l).validate();
    const auto tokens = (height / kStrides[l]) * (width / kStrides[l]);
    if (groups[l] > tokens) {
      throw ConfigError("model: level " + std::to_string(l + 1) + " has " + std::to_string(tokens) +
                        " tokens but " + std::to_string(groups[l]) + " groups");
    }
  }
  if (temporal_heads < 1 || decoder_dim % temporal_heads) {
    throw ConfigError("model: decoder_dim not divisible by temporal_heads");
  }
  if (!(lambda_seg > 0) || !(lambda_cst >= 0)) throw ConfigError("model: loss weights out of range");
  contrastive.validate();
  if (!(learning_rate > 0)) throw ConfigError("model: learning_rate must be positive");
  if (steps < 0 || batch < 1 || eval_every < 0) throw ConfigError("model: bad optimiser schedule");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"frames", c.frames},
          {"classes", c.classes},
          {"audio_dim", c.audio_dim},
          {"audio_embed", c.audio_embed},
          {"level_dims", c.level_dims},
          {"groups", c.groups},
          {"heads", c.heads},
          {"depth", c.depth},
          {"knn", c.knn},
          {"decoder_dim", c.decoder_dim},
          {"temporal_heads", c.temporal_heads},
          {"lambda_seg", c.lambda_seg},
          {"lambda_cst", c.lambda_cst},
          {"sigma_p", c.contrastive.sigma_p},
          {"tau", c.contrastive.tau},
          {"epsilon_a", c.contrastive.epsilon_a},
          {"learning_rate", c.learning_rate},
          {"steps", c.steps},
          {"batch", c.batch},
          {"eval_every", c.eval_every},
          {"seed", c.seed},
          {"ablation", to_string(c.ablation)}};
}

ModelConfig config_from_json(const nlohmann::json& j, ModelConfig c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "height") c.height = v.get<std::int64_t>();
      else if (key == "width") c.width = v.get<std::int64_t>();
      else if (key == "frames") c.frames = v.get<std::int64_t>();
      else if (key == "classes") c.classes = v.get<int>();
      else if (key == "audio_dim") c.audio_dim = v.get<std::int64_t>();
      else if (key == "audio_embed") c.audio_embed = v.get<std::int64_t>();
      else if (key == "level_dims") c.level_dims = v.get<std::array<std::int64_t, 3>>();
      else if (key == "groups") c.groups = v.get<std::array<int, 3>>();
      else if (key == "heads") c.heads = v.get<int>();
      else if (key == "depth") c.depth = v.get<int>();
      else if (key == "knn") c.knn = v.get<std::int64_t>();
      else if (key == "decoder_dim") c.decoder_dim = v.get<std::int64_t>();
      else if (key == "temporal_heads") c.temporal_heads = v.get<int>();
      else if (key == "lambda_seg") c.lambda_seg = v.get<double>();
      else if (key == "lambda_cst") c.lambda_cst = v.get<double>();
      else if (key == "sigma_p") c.contrastive.sigma_p = v.get<double>();
      else if (key == "tau") c.contrastive.tau = v.get<double>();
      else if (key == "epsilon_a") c.contrastive.epsilon_a = v.get<double>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "steps") c.steps = v.get<int>();
      else if (key == "batch") c.batch = v.get<int>();
      else if (key == "eval_every") c.eval_every = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "ablation") c.ablation = ablation_from(v.get<std::string>());
      else throw ConfigError("model config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

ParamStore init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ParamStore s;
  init_linear(s, "audio_enc", cfg.audio_dim, cfg.audio_embed, rng);
  std::int64_t in = 3 * kStrides[0] * kStrides[0];
  for (int l = 0; l < 3; ++l) {
    init_linear(s, level_name("enc", l), in, cfg.level_dims[l], rng);
    in = cfg.level_dims[l] * 4;
  }
  for (int l = 0; l < 3; ++l) ama::init_params(s, level_name("ama", l), cfg.level(l), rng);
  for (int l = 0; l < 3; ++l) init_linear(s, level_name("lat", l), cfg.level_dims[l], cfg.decoder_dim, rng);
  for (const char* n : {"temporal.q", "temporal.k", "temporal.v", "temporal.o"})
    init_linear(s, n, cfg.decoder_dim, cfg.decoder_dim, rng);
  for (const char* head : {"seg", "unc"}) {
    init_linear(s, std::string(head) + "1", cfg.decoder_dim, cfg.decoder_dim, rng);
    init_linear(s, std::string(head) + "2", cfg.decoder_dim, cfg.classes, rng);
  }
  return s;
}

ClipBatch make_batch(const synth::SyntheticSample& s) {
  ClipBatch b{s.frames, s.audio, {}};
  b.gt.reserve(s.gt.size());
  for (float v : s.gt.data()) b.gt.push_back(static_cast<std::int32_t>(v));
  return b;
}

template <typename Real>
Var<Real> audio_encoder(const Bound<Real>& p, const Var<Real>& audio) {
  return ad::relu(linear(p, "audio_enc", audio));
}

template <typename Real>
Var<Real> encode_level(const Bound<Real>& p, const ModelConfig& cfg, int level, const Var<Real>& input) {
  const auto T = input.dim(0);
  const auto factor = level == 0 ? kStrides[0] : 2;
  const auto in_h = level == 0 ? cfg.height : cfg.height / kStrides[level - 1];
  const auto in_w = level == 0 ? cfg.width : cfg.width / kStrides[level - 1];
  const auto channels = input.shape().back();
  auto flat = ad::reshape(input, {T * in_h * in_w, channels});
  auto blocks = ad::space_to_depth(flat, T * in_h, in_w, factor);
  auto f = ad::gelu(linear(p, level_name("enc", level), blocks));
  return ad::reshape(f, {T, (in_h / factor) * (in_w / factor), cfg.level_dims[level]});
}

template <typename Real>
Var<Real> mask_decoder(const Bound<Real>& p, const ModelConfig& cfg,
                       const std::array<Var<Real>, 3>& levels) {
  const auto T = levels[0].dim(0);
  const auto fh = cfg.height / kStrides[0], fw = cfg.width / kStrides[0];
  Var<Real> sum;
  for (int l = 0; l < 3; ++l) {
    auto lat = linear(p, level_name("lat", l), levels[l]);
    if (l > 0) {
      lat = ad::resize_bilinear(lat, T, cfg.height / kStrides[l], cfg.width / kStrides[l],
                                cfg.decoder_dim, fh, fw);
      lat = ad::reshape(lat, {T, fh * fw, cfg.decoder_dim});
    }
    sum = l == 0 ? lat : ad::add(sum, lat);
  }
  return sum;
}

template <typename Real>
Var<Real> temporal_attention(const Bound<Real>& p, const std::string& prefix, const Var<Real>& x,
                             int heads) {
  auto xt = ad::permute(x, {1, 0, 2});
  auto q = linear(p, prefix + ".q", xt);
  auto k = linear(p, prefix + ".k", xt);
  auto v = linear(p, prefix + ".v", xt);
  auto o = linear(p, prefix + ".o", ad::attention(q, k, v, heads));
  return ad::permute(ad::add(xt, o), {1, 0, 2});
}

template <typename Real>
ForwardResult<Real> forward(const Bound<Real>& p, const ModelConfig& cfg, const Var<Real>& frames,
                            const Var<Real>& audio, const std::array<FrameGroups, 3>* frozen) {
  if (frames.value().rank() != 4 || frames.dim(1) != cfg.height || frames.dim(2) != cfg.width ||
      frames.dim(3) != 3) {
    throw DimensionError("forward: frames " + shape_str(frames.shape()) + " do not match a " +
                         std::to_string(cfg.height) + "x" + std::to_string(cfg.width) + " RGB model");
  }
  const auto T = frames.dim(0);
  if (audio.shape() != Shape{T, cfg.audio_dim}) {
    throw DimensionError("forward: audio " + shape_str(audio.shape()) + " for " + std::to_string(T) +
                         " frames of dimension " + std::to_string(cfg.audio_dim));
  }
  ForwardResult<Real> out;
  const auto fa = audio_encoder(p, audio);
  std::array<Var<Real>, 3> levels;
  Var<Real> x = frames;
  for (int l = 0; l < 3; ++l) {
    const auto fv = encode_level(p, cfg, l, x);
    auto blk = ama::ama_block(p, level_name("ama", l), fv, fa, cfg.level(l), cfg.merge(),
                              frozen ? &(*frozen)[l] : nullptr);
    levels[l] = blk.next;
    out.groups[l] = std::move(blk.groups);
    if (l == 2) {
      out.compact = blk.compact;
      out.audio = blk.audio;
    }
    x = blk.next;
  }
  auto fused = temporal_attention(p, "temporal", mask_decoder(p, cfg, levels), cfg.temporal_heads);

  const auto fh = cfg.height / kStrides[0], fw = cfg.width / kStrides[0];
  auto full_res = [&](const Var<Real>& small) {
    auto up = ad::resize_bilinear(small, T, fh, fw, cfg.classes, cfg.height, cfg.width);
    return ad::permute(up, {0, 3, 1, 2});
  };
  out.logits = full_res(mlp_head(p, "seg", fused));
  if (cfg.uncertainty_on()) {
    auto ue = uncertainty::uncertain_log_probs(out.logits, full_res(mlp_head(p, "unc", fused)));
    out.log_probs = ue.log_probs;
    out.delta_norm = ue.delta_norm;
  } else {
    out.delta_norm = ad::constant(BasicTensor<Real>(out.logits.shape()));
    out.log_probs = uncertainty::renormalized_log_probs(out.logits, out.delta_norm);
  }
  return out;
}

template <typename Real>
Var<Real> seg_loss_terms(const Var<Real>& log_probs, const std::vector<std::int32_t>& gt) {
  if (log_probs.value().rank() != 4) {
    throw DimensionError("seg_loss: expected [T, C, H, W], got " + shape_str(log_probs.shape()));
  }
  const auto T = log_probs.dim(0), C = log_probs.dim(1), HW = log_probs.dim(2) * log_probs.dim(3);
  if (std::int64_t(gt.size()) != T * HW) {
    throw DimensionError("seg_loss: " + std::to_string(gt.size()) + " labels for " +
                         shape_str(log_probs.shape()));
  }
  for (auto g : gt)
    if (g < 0 || g >= C) throw DataError("seg_loss: label " + std::to_string(g) + " outside [0, " + std::to_string(C) + ")");

  struct FrameSums {
    double inter, pred, truth;
  };
  const Real* lp = log_probs.value().raw();
  std::vector<FrameSums> sums(T, FrameSums{0, 0, 0});
  double ce = 0, dice = 0, iou = 0;
  for (std::int64_t t = 0; t < T; ++t) {
    auto& s = sums[t];
    for (std::int64_t px = 0; px < HW; ++px) {
      const auto g = gt[t * HW + px];
      ce -= lp[(t * C + g) * HW + px];
      if (g > 0) s.truth += 1;
      for (std::int64_t c = 1; c < C; ++c) {
        const double pc = std::exp(double(lp[(t * C + c) * HW + px]));
        s.pred += pc;
        if (c == g) s.inter += pc;
      }
    }
    dice += 1 - 2 * s.inter / (s.pred + s.truth + kDiceSmoothing);
    iou += 1 - s.inter / (s.pred + s.truth - s.inter + kDiceSmoothing);
  }
  BasicTensor<Real> out(Shape{3});
  out[0] = Real(ce / double(T * HW));
  out[1] = Real(dice / double(T));
  out[2] = Real(iou / double(T));
  return ad::make_op(std::move(out), {log_probs}, [sums, gt, T, C, HW](ad::Node<Real>& n) {
    auto* g = n.parent_grad(0);
    if (!g) return;
    const Real* lp = n.parent_value(0).raw();
    const double g_ce = double(n.grad[0]) / double(T * HW);
    const double g_dice = double(n.grad[1]) / double(T);
    const double g_iou = double(n.grad[2]) / double(T);
    for (std::int64_t t = 0; t < T; ++t) {
      const auto& s = sums[t];
      const double d = s.pred + s.truth + kDiceSmoothing;
      const double u = s.pred + s.truth - s.inter + kDiceSmoothing;
      for (std::int64_t px = 0; px < HW; ++px) {
        const auto label = gt[t * HW + px];
        (*g)[(t * C + label) * HW + px] -= Real(g_ce);
        for (std::int64_t c = 1; c < C; ++c) {
          const std::int64_t at = (t * C + c) * HW + px;
          const double ind = c == label ? 1.0 : 0.0;
          const double d_dice = -2 * (ind * d - s.inter) / (d * d);
          const double d_iou = -(ind * u - s.inter * (1 - ind)) / (u * u);
          const double dp = g_dice * d_dice + g_iou * d_iou;
          (*g)[at] += Real(dp * std::exp(double(lp[at])));
        }
      }
    }
  });
}

template <typename Real>
Var<Real> weighted_total(const Var<Real>& seg, const Var<Real>& cst, const ModelConfig& cfg) {
  auto total = ad::scale(seg, Real(cfg.lambda_seg));
  return cst.defined() ? ad::add(total, ad::scale(cst, Real(cfg.lambda_cst))) : total;
}

template <typename Real>
LossParts<Real> compute_loss(const ForwardResult<Real>& out, const std::vector<std::int32_t>& gt,
                             const ModelConfig& cfg, ama::ContrastiveStats* stats) {
  const auto seg = ad::sum(seg_loss_terms(out.log_probs, gt));
  LossParts<Real> parts;
  parts.seg = double(seg.item());
  Var<Real> cst;
  if (cfg.contrastive_on()) {
    cst = ama::contrastive_loss_frames(ama::alignment_similarity(out.compact, out.audio), cfg.contrastive, stats);
    parts.cst = double(cst.item());
  }
  parts.total = weighted_total(seg, cst, cfg);
  return parts;
}

std::vector<std::int32_t> predict(const ParamStore& params, const ModelConfig& cfg,
                                  const ClipBatch& clip) {
  const Bound<float> p(params, false);
  const auto out = forward(p, cfg, ad::constant(clip.frames), ad::constant(clip.audio));
  const auto labels = ops::argmax(out.log_probs.value(), 1);
  return std::vector<std::int32_t>(labels.begin(), labels.end());
}

metrics::EvalReport evaluate(const ParamStore& params, const ModelConfig& cfg,
                             const std::vector<const synth::ClipEntry*>& clips) {
  std::vector<metrics::ClipLabels> labelled;
  for (const auto* c : clips) {
    const auto batch = make_batch(c->sample);
    labelled.push_back({c->name, synth::to_string(c->kind), batch.frames.dim(0),
                        predict(params, cfg, batch), batch.gt});
  }
  return metrics::evaluate(labelled, cfg.classes);
}

namespace {

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::map<std::string, std::pair<Tensor64, Tensor64>> moments;
  int t = 0;

  void step(ParamStore& params, const Bound<float>& bound, double lr) {
    ++t;
    const double c1 = 1 - std::pow(beta1, t), c2 = 1 - std::pow(beta2, t);
    for (const auto& name : params.names()) {
      Tensor& w = params.at(name);
      const Tensor g = bound(name).grad();
      auto [it, fresh] = moments.try_emplace(name);
      if (fresh) it->second = {Tensor64(w.shape()), Tensor64(w.shape())};
      auto& [m, v] = it->second;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = beta1 * m[i] + (1 - beta1) * gi;
        v[i] = beta2 * v[i] + (1 - beta2) * gi * gi;
        w[i] = float(double(w[i]) - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps));
      }
    }
  }
};

}  // namespace

TrainResult train(const synth::Dataset& data, const ModelConfig& cfg,
                  const std::function<void(const std::string&)>& log) {
  cfg.validate();
  const auto train_clips = data.split("train");
  const auto val_clips = data.split("val");
  if (train_clips.empty()) throw DataError("train: the training split is empty");
  std::vector<ClipBatch> batches;
  for (const auto* c : train_clips) {
    batches.push_back(make_batch(c->sample));
    const auto& b = batches.back();
    if (!b.frames.all_finite() || !b.audio.all_finite()) throw DataError("train: " + c->name + " has non-finite inputs");
    for (auto g : b.gt)
      if (g < 0 || g >= cfg.classes) throw DataError("train: " + c->name + " has a label outside the class range");
  }

  TrainResult result;
  result.params = init_params(cfg);
  Adam adam;
  Rng order_rng(splitmix64(cfg.seed ^ 0x0DDBA11ULL));
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  const int epoch = int((batches.size() + cfg.batch - 1) / cfg.batch);
  const int eval_every = cfg.eval_every > 0 ? cfg.eval_every : epoch;

  for (int step = 1; step <= cfg.steps; ++step) {
    Bound<float> p(result.params, true);
    Var<float> total;
    LossRow row{step};
    try {
      for (int b = 0; b < cfg.batch; ++b) {
        if (cursor == order.size()) {
          order.resize(batches.size());
          for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
          for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[order_rng.uniform_int(i + 1)]);
          cursor = 0;
        }
        const auto& clip = batches[order[cursor++]];
        const auto out = forward(p, cfg, ad::constant(clip.frames), ad::constant(clip.audio));
        const auto loss = compute_loss(out, clip.gt, cfg, &result.contrastive);
        total = b == 0 ? loss.total : ad::add(total, loss.total);
        row.seg += loss.seg / cfg.batch;
        row.cst += loss.cst / cfg.batch;
      }
    } catch (const DataError& e) {
      // inputs were validated above, so this is blown-up activations
      throw DivergenceError("step " + std::to_string(step) + ": " + e.what());
    }
    total = ad::scale(total, 1.0f / float(cfg.batch));
    row.total = total.item();
    if (!std::isfinite(row.total)) {
      char msg[160];
      std::snprintf(msg, sizeof msg, "step %d: non-finite loss (total=%g, seg=%g, cst=%g)", step,
                    row.total, row.seg, row.cst);
      throw DivergenceError(msg);
    }
    ad::backward(total);
    adam.step(result.params, p, cfg.learning_rate);
    if (!result.params.all_finite()) {
      throw DivergenceError("step " + std::to_string(step) + ": non-finite parameter after update");
    }
    result.losses.push_back(row);
    if (!val_clips.empty() && (step % eval_every == 0 || step == cfg.steps)) {
      const auto rep = evaluate(result.params, cfg, val_clips);
      result.validation.push_back({step, rep.jf});
      if (step == cfg.steps) result.final_val = rep;
      if (log) {
        char msg[160];
        std::snprintf(msg, sizeof msg, "step %d loss %.5f seg %.5f cst %.5f val J&F %.4f", step,
                      row.total, row.seg, row.cst, rep.jf);
        log(msg);
      }
    }
  }
  if (cfg.steps == 0 && !val_clips.empty()) result.final_val = evaluate(result.params, cfg, val_clips);
  return result;
}

std::string loss_csv(const std::vector<LossRow>& rows) {
  std::ostringstream os;
  os << "step,total,seg,cst\n";
  char line[128];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g\n", r.step, r.total, r.seg, r.cst);
    os << line;
  }
  return os.str();
}

void save_checkpoint(const std::string& dir, const ParamStore& params, const ModelConfig& cfg) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  std::ostringstream listing;
  for (const auto& name : params.names()) {
    const std::string file = name + ".avtk";
    save_tensor(fs::path(dir) / file, params.at(name));
    listing << name << '\t' << shape_str(params.at(name).shape()) << '\t' << file << '\n';
  }
  auto write = [&](const char* file, const std::string& text) {
    std::ofstream out(fs::path(dir) / file, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + (fs::path(dir) / file).string());
  };
  write("params.txt", listing.str());
  nlohmann::json j{{"schema_version", kConfigVersion}, {"model", to_json(cfg)}};
  write("config.json", j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream cj(fs::path(dir) / "config.json");
  if (!cj) throw IoError("cannot open " + (fs::path(dir) / "config.json").string());
  Checkpoint ck;
  try {
    const auto j = nlohmann::json::parse(cj);
    if (j.at("schema_version") != kConfigVersion) throw ArtifactMismatch("checkpoint: unsupported schema_version");
    ck.config = config_from_json(j.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactMismatch(std::string("checkpoint config: ") + e.what());
  } catch (const ConfigError& e) {
    throw ArtifactMismatch(std::string("checkpoint config: ") + e.what());
  }
  const ParamStore expected = init_params(ck.config);

  std::ifstream listing(fs::path(dir) / "params.txt");
  if (!listing) throw IoError("cannot open " + (fs::path(dir) / "params.txt").string());
  std::map<std::string, std::pair<std::string, std::string>> entries;
  std::string line;
  while (std::getline(listing, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string name, shape, file;
    if (!std::getline(is, name, '\t') || !std::getline(is, shape, '\t') || !std::getline(is, file)) {
      throw ArtifactMismatch("checkpoint: malformed params.txt line '" + line + "'");
    }
    entries[name] = {shape, file};
  }
  if (entries.size() != expected.names().size()) {
    throw ArtifactMismatch("checkpoint: " + std::to_string(entries.size()) + " parameters listed, config needs " +
                           std::to_string(expected.names().size()));
  }
  for (const auto& name : expected.names()) {
    auto it = entries.find(name);
    if (it == entries.end()) throw ArtifactMismatch("checkpoint: parameter '" + name + "' missing");
    Tensor t = load_tensor(fs::path(dir) / it->second.second);
    if (t.shape() != expected.at(name).shape() || shape_str(t.shape()) != it->second.first) {
      throw ArtifactMismatch("checkpoint: parameter '" + name + "' is " + shape_str(t.shape()) +
                             ", config expects " + shape_str(expected.at(name).shape()));
    }
    ck.params.add(name, std::move(t));
  }
  return ck;
}

#define AVSEG_INSTANTIATE_MODEL(R)                                                              \
  template Var<R> audio_encoder(const Bound<R>&, const Var<R>&);                                \
  template Var<R> encode_level(const Bound<R>&, const ModelConfig&, int, const Var<R>&);        \
  template Var<R> mask_decoder(const Bound<R>&, const ModelConfig&, const std::array<Var<R>, 3>&); \
  template Var<R> temporal_attention(const Bound<R>&, const std::string&, const Var<R>&, int);  \
  template ForwardResult<R> forward(const Bound<R>&, const ModelConfig&, const Var<R>&,         \
                                    const Var<R>&, const std::array<FrameGroups, 3>*);          \
  template Var<R> seg_loss_terms(const Var<R>&, const std::vector<std::int32_t>&);              \
  template Var<R> weighted_total(const Var<R>&, const Var<R>&, const ModelConfig&);             \
  template LossParts<R> compute_loss(const ForwardResult<R>&, const std::vector<std::int32_t>&, \
                                     const ModelConfig&, ama::ContrastiveStats*);

AVSEG_INSTANTIATE_MODEL(float)
AVSEG_INSTANTIATE_MODEL(double)

#undef AVSEG_INSTANTIATE_MODEL

}  // namespace avseg::model
