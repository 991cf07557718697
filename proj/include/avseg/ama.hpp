#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avseg/autodiff.hpp"
#include "avseg/grouping.hpp"
#include "avseg/params.hpp"
#include "avseg/rng.hpp"

/// Audio-guided modality alignment for one feature level.
///
/// Feature maps are batched as [B, N, D] (B frames of N tokens); audio as
/// [B, D_a]. Every frame is grouped independently, and each frame has the
/// same group count P.
namespace avseg::ama {

struct LevelConfig {
  std::int64_t dim = 16;
  std::int64_t audio_dim = 16;
  int groups = 5;
  int heads = 4;
  /// Number of compact-representation update layers.
  int depth = 2;
  /// Neighbour count for the density estimate; <= 0 selects the default.
  std::int64_t knn = 0;

  void validate() const;
};

struct ContrastiveConfig {
  double sigma_p = 5.0;
  double tau = 0.1;
  double epsilon_a = 0.5;

  void validate() const;
};

/// Registers `prefix.audio`, `prefix.q|k|v|o` and `prefix.rel1|rel2`.
void init_params(ParamStore& store, const std::string& prefix, const LevelConfig& cfg, Rng& rng);

template <typename Real>
struct Fusion {
  ad::Var<Real> fused;  ///< [B, N, D]
  ad::Var<Real> audio;  ///< projected audio token, [B, D]
};

/// Multi-head cross-attention of the visual tokens (queries) on the single
/// projected audio token (key and value), plus a residual connection.
template <typename Real>
Fusion<Real> cross_attend(const Bound<Real>& p, const std::string& prefix,
                          const ad::Var<Real>& f_v, const ad::Var<Real>& f_a, int heads);

/// Two-layer per-token MLP D -> D -> 1 with GELU; returns [B, N].
template <typename Real>
ad::Var<Real> relevance_scores(const Bound<Real>& p, const std::string& prefix,
                               const ad::Var<Real>& fused);

/// Softmax of the scores within each group, then the weighted sum of the
/// group's fused tokens: [B, P, D].
template <typename Real>
ad::Var<Real> merge_groups(const ad::Var<Real>& fused, const ad::Var<Real>& scores,
                           const std::vector<grouping::GroupAssignment>& groups);

/// `depth` times: G += softmax(G f_v^T / sqrt(D) + S) f_v, with S added to
/// every query row.
template <typename Real>
ad::Var<Real> update_compact(const ad::Var<Real>& g, const ad::Var<Real>& f_v,
                             const ad::Var<Real>& scores, int depth);

/// Token i of frame b becomes f_v[b, i] + g[b, label_b(i)].
template <typename Real>
ad::Var<Real> remap(const ad::Var<Real>& g, const std::vector<grouping::GroupAssignment>& groups,
                    const ad::Var<Real>& f_v);

/// Cosine similarities a_p between each compact row and the audio token of
/// the same frame: [B, P].
template <typename Real>
ad::Var<Real> alignment_similarity(const ad::Var<Real>& g, const ad::Var<Real>& audio);

struct Partition {
  std::vector<double> response;  ///< sigmoid(sigma_p * a)
  std::vector<int> positive;     ///< response > epsilon_a
  std::vector<int> negative;     ///< response < epsilon_a
};

Partition partition(const std::vector<double>& similarity, const ContrastiveConfig& cfg);

struct ContrastiveStats {
  std::size_t frames = 0;
  std::size_t empty_positive = 0;
  std::size_t empty_negative = 0;
};

/// -log( sum_P exp(a/tau) / sum_{P u N} exp(a/tau) ) for one similarity
/// vector [P] at a fixed partition. An empty positive or negative set gives 0.
template <typename Real>
ad::Var<Real> contrastive_loss(const ad::Var<Real>& a, const Partition& part, double tau);

/// Per-frame contrastive loss of similarities [B, P], averaged over frames.
template <typename Real>
ad::Var<Real> contrastive_loss_frames(const ad::Var<Real>& a, const ContrastiveConfig& cfg,
                                      ContrastiveStats* stats = nullptr);

template <typename Real>
struct BlockOutput {
  ad::Var<Real> next;     ///< feature map passed to the next level, [B, N, D]
  ad::Var<Real> compact;  ///< [B, P, D]; undefined without merging
  ad::Var<Real> audio;    ///< projected audio token, [B, D]
  ad::Var<Real> scores;   ///< [B, N]; undefined without merging
  std::vector<grouping::GroupAssignment> groups;
};

/// cross_attend -> grouping -> relevance_scores -> merge_groups ->
/// update_compact -> remap. Grouping runs on the incoming features unless
/// `frozen` supplies the assignments. With `merge` false the block reduces
/// to the cross-attention output.
template <typename Real>
BlockOutput<Real> ama_block(const Bound<Real>& p, const std::string& prefix,
                            const ad::Var<Real>& f_v, const ad::Var<Real>& f_a,
                            const LevelConfig& cfg, bool merge = true,
                            const std::vector<grouping::GroupAssignment>* frozen = nullptr);

}  // namespace avseg::ama
