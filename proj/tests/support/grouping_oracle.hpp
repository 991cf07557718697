#pragma once

// Brute-force density peaks reference: full sorts everywhere, no shared code
// with the library beyond the tensor type.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "avseg/rng.hpp"
#include "avseg/tensor.hpp"

namespace oracle {

struct Grouping {
  std::vector<double> rho;
  std::vector<int> labels;
  std::vector<std::int64_t> peaks;
};

inline double euclid(const avseg::Tensor& f, std::int64_t i, std::int64_t j) {
  double s = 0;
  for (std::int64_t c = 0; c < f.dim(1); ++c) {
    const double t = double(f.at(i, c)) - double(f.at(j, c));
    s += t * t;
  }
  return std::sqrt(s);
}

inline std::vector<double> density(const avseg::Tensor& f, std::int64_t k) {
  const auto n = f.dim(0);
  std::vector<double> rho(n);
  for (std::int64_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::int64_t>> all;
    for (std::int64_t j = 0; j < n; ++j)
      if (j != i) all.emplace_back(euclid(f, i, j), j);
    std::sort(all.begin(), all.end());
    double s = 0;
    for (std::int64_t m = 0; m < k; ++m) s += std::exp(-all[m].first);
    rho[i] = s;
  }
  return rho;
}

inline Grouping group(const avseg::Tensor& f, std::int64_t k, int p) {
  const auto n = f.dim(0);
  Grouping g;
  g.rho = density(f, k);
  const double top = *std::max_element(g.rho.begin(), g.rho.end());
  std::int64_t root = std::find(g.rho.begin(), g.rho.end(), top) - g.rho.begin();

  std::vector<std::int64_t> h(n, -1);
  std::vector<double> d(n, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    if (i == root) continue;
    std::vector<std::pair<double, std::int64_t>> cand;
    for (std::int64_t j = 0; j < n; ++j)
      if (g.rho[j] > g.rho[i] || (g.rho[i] == top && j == root)) cand.emplace_back(euclid(f, i, j), j);
    std::sort(cand.begin(), cand.end());
    h[i] = cand.front().second;
    d[i] = cand.front().first;
  }
  double dmax = 0;
  for (std::int64_t i = 0; i < n; ++i)
    if (i != root) dmax = std::max(dmax, d[i]);
  d[root] = dmax;

  std::vector<std::pair<double, std::int64_t>> gamma;
  for (std::int64_t i = 0; i < n; ++i)
    if (i != root) gamma.emplace_back(-(g.rho[i] * d[i]), i);
  std::sort(gamma.begin(), gamma.end());
  g.peaks.push_back(root);
  for (int m = 0; m + 1 < p; ++m) g.peaks.push_back(gamma[m].second);
  std::sort(g.peaks.begin(), g.peaks.end());

  g.labels.assign(n, -1);
  std::function<int(std::int64_t)> resolve = [&](std::int64_t i) -> int {
    auto it = std::find(g.peaks.begin(), g.peaks.end(), i);
    if (it != g.peaks.end()) return int(it - g.peaks.begin());
    return resolve(h[i]);
  };
  for (std::int64_t i = 0; i < n; ++i) g.labels[i] = resolve(i);
  return g;
}

/// Random instance; `grid` > 0 snaps coordinates to multiples of 1/grid so
/// distance and density ties actually occur.
inline avseg::Tensor random_points(avseg::Rng& rng, std::int64_t n, std::int64_t d, int grid) {
  avseg::Tensor f(avseg::Shape{n, d});
  for (auto& v : f.data()) {
    const double x = rng.normal();
    v = grid > 0 ? float(std::round(x * grid) / grid) : float(x);
  }
  return f;
}

}  // namespace oracle
