#include "avseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "avseg/errors.hpp"

namespace avseg::metrics {

namespace {

void check_maps(LabelMap pred, LabelMap gt, int classes) {
  if (pred.size() != gt.size()) {
    throw DimensionError("metrics: prediction has " + std::to_string(pred.size()) +
                         " pixels, ground truth " + std::to_string(gt.size()));
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= classes || gt[i] < 0 || gt[i] >= classes) {
      throw DataError("metrics: label outside [0, " + std::to_string(classes) + ")");
    }
  }
}

}  // namespace

JaccardResult jaccard(LabelMap pred, LabelMap gt, int classes) {
  check_maps(pred, gt, classes);
  std::vector<std::int64_t> inter(classes, 0), in_pred(classes, 0), in_gt(classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ++in_pred[pred[i]];
    ++in_gt[gt[i]];
    if (pred[i] == gt[i]) ++inter[pred[i]];
  }
  JaccardResult r;
  double total = 0;
  int present = 0;
  for (int c = 1; c < classes; ++c) {
    const auto uni = in_pred[c] + in_gt[c] - inter[c];
    if (uni == 0) {
      r.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double v = double(inter[c]) / double(uni);
    r.per_class.push_back(v);
    total += v;
    ++present;
  }
  r.mean = present ? total / present : 1.0;
  return r;
}

double fbeta(LabelMap pred, LabelMap gt, double beta_sq) {
  if (pred.size() != gt.size()) {
    throw DimensionError("fbeta: prediction has " + std::to_string(pred.size()) +
                         " pixels, ground truth " + std::to_string(gt.size()));
  }
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] > 0 && pred[i] == gt[i]) ++tp;
    else {
      if (pred[i] > 0) ++fp;
      if (gt[i] > 0) ++fn;
    }
  }
  if (tp + fp == 0 && tp + fn == 0) return 1.0;
  if (tp == 0) return 0.0;
  const double precision = double(tp) / double(tp + fp);
  const double recall = double(tp) / double(tp + fn);
  return (1 + beta_sq) * precision * recall / (beta_sq * precision + recall);
}

EvalReport evaluate(const std::vector<ClipLabels>& clips, int classes, double beta_sq) {
  if (clips.empty()) throw DataError("evaluate: empty split");
  EvalReport report;
  report.beta_sq = beta_sq;
  std::vector<double> class_sum(classes - 1, 0.0);
  std::vector<std::int64_t> class_count(classes - 1, 0);
  for (const auto& clip : clips) {
    if (clip.frames <= 0 || clip.pred.size() != clip.gt.size() ||
        clip.pred.size() % std::size_t(clip.frames) != 0) {
      throw DimensionError("evaluate: inconsistent label maps for clip " + clip.name);
    }
    const std::size_t pixels = clip.pred.size() / std::size_t(clip.frames);
    ClipScore score{clip.name, clip.kind};
    for (std::int64_t t = 0; t < clip.frames; ++t) {
      const LabelMap p(clip.pred.data() + t * pixels, pixels);
      const LabelMap g(clip.gt.data() + t * pixels, pixels);
      const auto jr = jaccard(p, g, classes);
      for (int c = 0; c + 1 < classes; ++c)
        if (!std::isnan(jr.per_class[c])) class_sum[c] += jr.per_class[c], ++class_count[c];
      score.j += jr.mean;
      score.f += fbeta(p, g, beta_sq);
    }
    score.j /= double(clip.frames);
    score.f /= double(clip.frames);
    score.jf = (score.j + score.f) / 2;
    report.j += score.j;
    report.f += score.f;
    auto& slice = report.slices[clip.kind];
    ++slice.clips;
    slice.j += score.j;
    slice.f += score.f;
    report.clips.push_back(std::move(score));
  }
  report.j /= double(clips.size());
  report.f /= double(clips.size());
  report.jf = (report.j + report.f) / 2;
  for (auto& [_, s] : report.slices) {
    s.j /= double(s.clips);
    s.f /= double(s.clips);
    s.jf = (s.j + s.f) / 2;
  }
  for (int c = 0; c + 1 < classes; ++c)
    report.class_j.push_back(class_count[c] ? class_sum[c] / double(class_count[c])
                                            : std::numeric_limits<double>::quiet_NaN());
  return report;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["J"] = report.j;
  j["F"] = report.f;
  j["JF"] = report.jf;
  j["beta_sq"] = report.beta_sq;
  auto& cls = j["class_J"] = nlohmann::json::array();
  for (double v : report.class_j) cls.push_back(std::isnan(v) ? nlohmann::json() : nlohmann::json(v));
  auto& slices = j["slices"] = nlohmann::json::object();
  for (const auto& [kind, s] : report.slices)
    slices[kind] = {{"clips", s.clips}, {"J", s.j}, {"F", s.f}, {"JF", s.jf}};
  auto& per_clip = j["clips"] = nlohmann::json::array();
  for (const auto& c : report.clips)
    per_clip.push_back({{"name", c.name}, {"kind", c.kind}, {"J", c.j}, {"F", c.f}, {"JF", c.jf}});
  return j;
}

std::string format_table(const EvalReport& report) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-8s %6s %8s %8s %8s\n", "slice", "clips", "J", "F", "J&F");
  os << line;
  std::snprintf(line, sizeof line, "%-8s %6zu %8.4f %8.4f %8.4f\n", "all", report.clips.size(),
                report.j, report.f, report.jf);
  os << line;
  for (const auto& [kind, s] : report.slices) {
    std::snprintf(line, sizeof line, "%-8s %6zu %8.4f %8.4f %8.4f\n", kind.c_str(), s.clips, s.j,
                  s.f, s.jf);
    os << line;
  }
  for (std::size_t c = 0; c < report.class_j.size(); ++c) {
    if (std::isnan(report.class_j[c])) continue;
    std::snprintf(line, sizeof line, "class %zu J %8.4f\n", c + 1, report.class_j[c]);
    os << line;
  }
  return os.str();
}

}  // namespace avseg::metrics
