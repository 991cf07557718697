#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

/// Region Jaccard J, precision/recall F-measure and their mean over label
/// maps (0 = background).
namespace avseg::metrics {

using LabelMap = std::span<const std::int32_t>;

struct JaccardResult {
  /// Per class c >= 1; NaN where the class is absent from both maps.
  std::vector<double> per_class;
  /// Mean over the classes that are present; 1 when none is.
  double mean = 1.0;
};

JaccardResult jaccard(LabelMap pred, LabelMap gt, int classes);

/// Foreground F-measure micro-averaged over classes with weight beta_sq.
/// Empty prediction and empty ground truth score 1.
double fbeta(LabelMap pred, LabelMap gt, double beta_sq = 0.3);

struct ClipLabels {
  std::string name;
  std::string kind;  ///< easy, case1 or case2
  std::int64_t frames = 0;
  std::vector<std::int32_t> pred;  ///< frames x pixels, row-major
  std::vector<std::int32_t> gt;
};

struct ClipScore {
  std::string name;
  std::string kind;
  double j = 0, f = 0, jf = 0;
};

struct Summary {
  std::size_t clips = 0;
  double j = 0, f = 0, jf = 0;
};

struct EvalReport {
  /// Mean J per foreground class over the frames where it is present; NaN if never.
  std::vector<double> class_j;
  double j = 0, f = 0, jf = 0;
  double beta_sq = 0.3;
  std::vector<ClipScore> clips;
  /// Slices by clip kind.
  std::map<std::string, Summary> slices;
};

/// Per-frame J and F, averaged over the frames of a clip and then over clips.
EvalReport evaluate(const std::vector<ClipLabels>& clips, int classes, double beta_sq = 0.3);

nlohmann::json to_json(const EvalReport& report);
std::string format_table(const EvalReport& report);

}  // namespace avseg::metrics
