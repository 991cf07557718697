#include "avseg/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "avseg/errors.hpp"

namespace avseg::grouping {

namespace {

// Row-major N x N Euclidean distances, computed in double.
std::vector<double> pairwise_distances(const Tensor& f) {
  const auto n = f.dim(0), d = f.dim(1);
  std::vector<double> dist(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = i + 1; j < n; ++j) {
      const float* a = f.raw() + i * d;
      const float* b = f.raw() + j * d;
      double acc = 0.0;
      for (std::int64_t c = 0; c < d; ++c) {
        const double diff = double(a[c]) - double(b[c]);
        acc += diff * diff;
      }
      const double r = std::sqrt(acc);
      dist[i * n + j] = r;
      dist[j * n + i] = r;
    }
  }
  return dist;
}

void check_features(const Tensor& features) {
  if (features.rank() != 2 || features.dim(0) < 1) {
    throw DimensionError("grouping: expected features [N, D], got " + shape_str(features.shape()));
  }
  if (!features.all_finite()) throw DataError("grouping: non-finite features");
}

std::vector<double> density_from(const std::vector<double>& dist, std::int64_t n, std::int64_t k) {
  std::vector<double> rho(n, 0.0);
  std::vector<std::pair<double, std::int64_t>> order;
  order.reserve(n - 1);
  for (std::int64_t i = 0; i < n; ++i) {
    order.clear();
    const double* row = &dist[i * n];
    for (std::int64_t j = 0; j < n; ++j)
      if (j != i) order.emplace_back(row[j], j);
    std::nth_element(order.begin(), order.begin() + (k - 1), order.end());
    std::sort(order.begin(), order.begin() + k);
    double acc = 0.0;
    for (std::int64_t m = 0; m < k; ++m) acc += std::exp(-order[m].first);
    rho[i] = acc;
  }
  return rho;
}

GroupAssignment assign_from(const std::vector<double>& dist, std::int64_t n,
                            const std::vector<double>& densities, int num_groups) {
  std::int64_t root = 0;
  for (std::int64_t i = 1; i < n; ++i)
    if (densities[i] > densities[root]) root = i;

  GroupAssignment ga;
  ga.densities = densities;
  ga.num_groups = num_groups;
  ga.nearest_higher.assign(n, -1);
  std::vector<double> delta(n, 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    if (i == root) continue;
    if (densities[i] == densities[root]) {
      ga.nearest_higher[i] = root;
      delta[i] = dist[i * n + root];
      continue;
    }
    std::int64_t best = -1;
    for (std::int64_t j = 0; j < n; ++j) {
      if (densities[j] <= densities[i]) continue;
      if (best < 0 || dist[i * n + j] < dist[i * n + best]) best = j;
    }
    ga.nearest_higher[i] = best;
    delta[i] = dist[i * n + best];
  }
  delta[root] = n > 1 ? *std::max_element(delta.begin(), delta.end()) : 0.0;

  std::vector<std::int64_t> order;
  for (std::int64_t i = 0; i < n; ++i)
    if (i != root) order.push_back(i);
  auto ranks_before = [&](std::int64_t a, std::int64_t b) {
    const double ga_ = densities[a] * delta[a], gb = densities[b] * delta[b];
    return ga_ > gb || (ga_ == gb && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + (num_groups - 1), order.end(), ranks_before);
  ga.peaks.assign(order.begin(), order.begin() + (num_groups - 1));
  ga.peaks.push_back(root);
  std::sort(ga.peaks.begin(), ga.peaks.end());

  ga.labels.assign(n, -1);
  for (int p = 0; p < num_groups; ++p) ga.labels[ga.peaks[p]] = p;
  std::vector<std::int64_t> chain;
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t j = i;
    chain.clear();
    while (ga.labels[j] < 0) {
      chain.push_back(j);
      j = ga.nearest_higher[j];
    }
    for (auto c : chain) ga.labels[c] = ga.labels[j];
  }
  return ga;
}

}  // namespace

std::int64_t default_k(std::int64_t n) {
  return std::max<std::int64_t>(1, std::min(std::max<std::int64_t>(2, n / 16), n - 1));
}

std::vector<double> local_density(const Tensor& features, std::int64_t k) {
  check_features(features);
  const auto n = features.dim(0);
  if (k < 1 || k >= n) {
    throw ParameterError("local_density: k must satisfy 1 <= k < N (k=" + std::to_string(k) +
                         ", N=" + std::to_string(n) + ")");
  }
  return density_from(pairwise_distances(features), n, k);
}

GroupAssignment assign_clusters(const Tensor& features, const std::vector<double>& densities,
                                int num_groups) {
  check_features(features);
  const auto n = features.dim(0);
  if (static_cast<std::int64_t>(densities.size()) != n) {
    throw DimensionError("assign_clusters: " + std::to_string(densities.size()) +
                         " densities for " + std::to_string(n) + " tokens");
  }
  if (num_groups < 1 || num_groups > n) {
    throw ParameterError("assign_clusters: P must satisfy 1 <= P <= N (P=" +
                         std::to_string(num_groups) + ", N=" + std::to_string(n) + ")");
  }
  return assign_from(pairwise_distances(features), n, densities, num_groups);
}

GroupAssignment group_tokens(const Tensor& features, int num_groups, std::int64_t k) {
  check_features(features);
  const auto n = features.dim(0);
  if (n == 1) {
    if (num_groups != 1) throw ParameterError("group_tokens: P must be 1 for a single token");
    GroupAssignment ga;
    ga.labels = {0};
    ga.peaks = {0};
    ga.densities = {1.0};
    ga.nearest_higher = {-1};
    ga.num_groups = 1;
    return ga;
  }
  if (k <= 0) k = default_k(n);
  if (k < 1 || k >= n || num_groups < 1 || num_groups > n) {
    return assign_clusters(features, local_density(features, k), num_groups);  // throws
  }
  const auto dist = pairwise_distances(features);
  return assign_from(dist, n, density_from(dist, n, k), num_groups);
}

std::string format_table(const GroupAssignment& ga) {
  std::ostringstream os;
  os << "token_index\tlabel\tdensity\tis_peak\n";
  char buf[64];
  for (std::size_t i = 0; i < ga.labels.size(); ++i) {
    const bool peak = ga.peaks[ga.labels[i]] == static_cast<std::int64_t>(i);
    std::snprintf(buf, sizeof buf, "%.9g", ga.densities[i]);
    os << i << '\t' << ga.labels[i] << '\t' << buf << '\t' << (peak ? 1 : 0) << '\n';
  }
  return os.str();
}

}  // namespace avseg::grouping
