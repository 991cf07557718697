#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "avseg/ama.hpp"
#include "avseg/autodiff.hpp"
#include "avseg/metrics.hpp"
#include "avseg/params.hpp"
#include "avseg/synthdata.hpp"

/// Miniature audio-visual segmentation network: a three-level patch pyramid
/// with an AMA block per level, an upsample-and-sum decoder, attention across
/// frames, and segmentation / uncertainty heads.
namespace avseg::model {

/// Rungs of the ablation ladder. Each rung removes one more component:
/// NoUe keeps merging and the contrastive loss, NoCst keeps merging only,
/// NoSgsm is plain cross-attention.
enum class Ablation { None, NoUe, NoCst, NoSgsm };

std::string to_string(Ablation a);
Ablation ablation_from(const std::string& s);

struct ModelConfig {
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t frames = 4;
  int classes = 5;
  std::int64_t audio_dim = 16;
  std::int64_t audio_embed = 32;
  std::array<std::int64_t, 3> level_dims{16, 32, 32};
  std::array<int, 3> groups{14, 7, 5};
  int heads = 4;
  int depth = 2;
  std::int64_t knn = 0;
  std::int64_t decoder_dim = 16;
  int temporal_heads = 4;
  double lambda_seg = 1.0;
  double lambda_cst = 0.1;
  ama::ContrastiveConfig contrastive;
  double learning_rate = 1e-3;
  int steps = 3000;
  int batch = 2;
  /// Validation interval in steps; 0 means once per epoch.
  int eval_every = 0;
  std::uint64_t seed = 7;
  Ablation ablation = Ablation::None;

  bool merge() const { return ablation != Ablation::NoSgsm; }
  bool contrastive_on() const {
    return (ablation == Ablation::None || ablation == Ablation::NoUe) && lambda_cst > 0;
  }
  bool uncertainty_on() const { return ablation == Ablation::None; }
  ama::LevelConfig level(int l) const;

  void validate() const;
};

static constexpr std::array<std::int64_t, 3> kStrides{4, 8, 16};

nlohmann::json to_json(const ModelConfig& cfg);
/// Reads the keys present in `j` over the defaults; unknown keys throw ConfigError.
ModelConfig config_from_json(const nlohmann::json& j, ModelConfig base = {});

ParamStore init_params(const ModelConfig& cfg);

struct ClipBatch {
  Tensor frames;                    ///< [T, H, W, 3]
  Tensor audio;                     ///< [T, D_a]
  std::vector<std::int32_t> gt;     ///< T*H*W labels
};

ClipBatch make_batch(const synth::SyntheticSample& s);

using FrameGroups = std::vector<grouping::GroupAssignment>;

template <typename Real>
struct ForwardResult {
  ad::Var<Real> logits;      ///< m, [T, C, H, W]
  ad::Var<Real> delta_norm;  ///< [T, C, H, W]; zeros without uncertainty
  ad::Var<Real> log_probs;   ///< renormalised log of the weighted prediction
  ad::Var<Real> compact;     ///< last-level compact representation [T, P, D]
  ad::Var<Real> audio;       ///< last-level projected audio [T, D]
  std::array<FrameGroups, 3> groups;
};

template <typename Real>
ad::Var<Real> audio_encoder(const Bound<Real>& p, const ad::Var<Real>& audio);

/// Level l (0-based) patch embedding: [T, N_{l-1}, D] (or frames for l = 0)
/// to [T, N_l, D_l].
template <typename Real>
ad::Var<Real> encode_level(const Bound<Real>& p, const ModelConfig& cfg, int level,
                           const ad::Var<Real>& input);

/// Lateral projections to decoder_dim, bilinear upsampling to 1/4 scale and
/// a sum: [T, H/4 * W/4, decoder_dim].
template <typename Real>
ad::Var<Real> mask_decoder(const Bound<Real>& p, const ModelConfig& cfg,
                           const std::array<ad::Var<Real>, 3>& levels);

/// Self-attention across frames at every location, plus a residual; x is
/// [T, N, D].
template <typename Real>
ad::Var<Real> temporal_attention(const Bound<Real>& p, const std::string& prefix,
                                 const ad::Var<Real>& x, int heads);

/// `frozen` pins the group assignments of every level (finite differences).
template <typename Real>
ForwardResult<Real> forward(const Bound<Real>& p, const ModelConfig& cfg,
                            const ad::Var<Real>& frames, const ad::Var<Real>& audio,
                            const std::array<FrameGroups, 3>* frozen = nullptr);

inline constexpr double kDiceSmoothing = 1.0;

/// Returns [ce, dice, iou] from log-probabilities [T, C, H, W]: cross-entropy
/// averaged over pixels and frames; soft Dice and soft IoU per frame over the
/// foreground channels, averaged over frames.
template <typename Real>
ad::Var<Real> seg_loss_terms(const ad::Var<Real>& log_probs, const std::vector<std::int32_t>& gt);

template <typename Real>
struct LossParts {
  ad::Var<Real> total;
  double seg = 0;
  double cst = 0;
};

/// lambda_seg * seg + lambda_cst * cst; an undefined cst contributes nothing.
template <typename Real>
ad::Var<Real> weighted_total(const ad::Var<Real>& seg, const ad::Var<Real>& cst, const ModelConfig& cfg);

template <typename Real>
LossParts<Real> compute_loss(const ForwardResult<Real>& out, const std::vector<std::int32_t>& gt,
                             const ModelConfig& cfg, ama::ContrastiveStats* stats = nullptr);

/// Per-pixel argmax of the weighted prediction, T*H*W labels.
std::vector<std::int32_t> predict(const ParamStore& params, const ModelConfig& cfg,
                                  const ClipBatch& clip);

metrics::EvalReport evaluate(const ParamStore& params, const ModelConfig& cfg,
                             const std::vector<const synth::ClipEntry*>& clips);

struct LossRow {
  int step = 0;
  double total = 0, seg = 0, cst = 0;
};

struct ValRow {
  int step = 0;
  double jf = 0;
};

struct TrainResult {
  ParamStore params;
  std::vector<LossRow> losses;
  std::vector<ValRow> validation;
  metrics::EvalReport final_val;
  ama::ContrastiveStats contrastive;
};

/// Adam on mini-batches of training clips drawn with the config seed. Throws
/// DivergenceError on a non-finite loss or parameter.
TrainResult train(const synth::Dataset& data, const ModelConfig& cfg,
                  const std::function<void(const std::string&)>& log = {});

std::string loss_csv(const std::vector<LossRow>& rows);

/// Directory of one TensorFile per parameter, `params.txt` (name, shape,
/// file per line) and `config.json`.
void save_checkpoint(const std::string& dir, const ParamStore& params, const ModelConfig& cfg);

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};

/// Throws IoError when unreadable and ArtifactMismatch when the stored
/// parameters do not fit the stored configuration.
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace avseg::model
