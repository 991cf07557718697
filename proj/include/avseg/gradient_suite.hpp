#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avseg/ama.hpp"

namespace avseg::model {

struct SuiteEntry {
  std::string component;
  double max_error = 0;
  double tolerance = 0;
  std::size_t checked = 0;

  bool pass() const { return max_error <= tolerance; }
};

/// Finite-difference checks of each differentiable component at tiny shapes
/// with seeded random inputs and parameters. With `corrupt` every component
/// routes its input through a backward map scaled by 1.5, which the checks
/// must reject.
std::vector<SuiteEntry> gradient_suite(std::uint64_t seed, const ama::ContrastiveConfig& contrastive = {},
                                       bool corrupt = false);

std::string format_suite(const std::vector<SuiteEntry>& entries);

}  // namespace avseg::model
