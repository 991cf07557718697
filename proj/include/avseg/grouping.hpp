#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avseg/tensor.hpp"

/// k-nearest-neighbour density peaks clustering of feature-map tokens.
///
/// Tie rules, applied everywhere so results are reproducible exactly:
///   - neighbours are ordered by (distance, index);
///   - "higher density" is strict, and the nearest higher-density token is
///     chosen by (distance, index);
///   - among tokens sharing the global maximum density the lowest index is
///     the root; the others point at it;
///   - centres are the root plus the P-1 largest gamma = rho * d among the
///     remaining tokens, ordered by (gamma descending, index).
namespace avseg::grouping {

struct GroupAssignment {
  /// Group of each token, in [0, num_groups).
  std::vector<int> labels;
  /// Centre token of each group, ascending by token index.
  std::vector<std::int64_t> peaks;
  std::vector<double> densities;
  /// Nearest higher-density token; -1 for the root.
  std::vector<std::int64_t> nearest_higher;
  int num_groups = 0;
};

/// max(2, N/16), clamped to N-1 so that it is always valid for N >= 2.
std::int64_t default_k(std::int64_t n);

/// rho_i = sum over the k nearest other tokens of exp(-||f_i - f_j||), summed
/// in neighbour order. features is [N, D]; requires 1 <= k < N.
std::vector<double> local_density(const Tensor& features, std::int64_t k);

GroupAssignment assign_clusters(const Tensor& features, const std::vector<double>& densities,
                                int num_groups);

/// local_density followed by assign_clusters. k <= 0 selects default_k(N).
/// A single token forms one group with density 1.
GroupAssignment group_tokens(const Tensor& features, int num_groups, std::int64_t k = 0);

/// Text table with columns token_index, label, density, is_peak.
std::string format_table(const GroupAssignment& ga);

}  // namespace avseg::grouping
