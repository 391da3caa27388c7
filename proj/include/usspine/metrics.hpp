#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "usspine/annotations.hpp"
#include "usspine/error.hpp"
#include "usspine/types.hpp"

namespace usspine {

inline constexpr double kPckRealThreshold = 15.0;
inline constexpr double kPckFakeThreshold = 30.0;

// Percentage of landmarks within T of the truth; T depends on whether the
// landmark's structure is labeled real.
inline double compute_pck(const std::vector<LandmarkSet>& predicted, const std::vector<SliceAnnotation>& truth,
                          double t_real = kPckRealThreshold, double t_fake = kPckFakeThreshold) {
  if (predicted.size() != truth.size()) throw ShapeError("compute_pck: prediction and truth counts differ");
  if (predicted.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < predicted.size(); ++k)
    for (int i = 0; i < kNumLandmarks; ++i) {
      const double t = truth[k].real(structure_of(i)) ? t_real : t_fake;
      if (distance(predicted[k][i], truth[k].landmarks[i]) <= t) ++hits;
    }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(predicted.size() * kNumLandmarks);
}

struct ConfusionCounts {
  long tp = 0, fp = 0, fn = 0, tn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
    return *this;
  }
  long total() const { return tp + fp + fn + tn; }
  // Ratios in [0,1]; an empty denominator yields 0.
  double accuracy() const { return total() ? static_cast<double>(tp + tn) / total() : 0.0; }
  double precision() const { return tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0; }
  double recall() const { return tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct DetectionMetrics {
  std::array<ConfusionCounts, kNumStructures> per_structure{};

  const ConfusionCounts& operator[](Structure s) const { return per_structure[static_cast<int>(s)]; }
  ConfusionCounts laminae() const {
    ConfusionCounts c = per_structure[1];
    c += per_structure[2];
    return c;
  }
};

// Positional error of a structure: the SP point, or the worse lamina endpoint.
inline double structure_error(const LandmarkSet& pred, const LandmarkSet& truth, Structure s) {
  switch (s) {
    case Structure::SpinousProcess: return distance(pred[Landmark::SP], truth[Landmark::SP]);
    case Structure::LeftLamina:
      return std::max(distance(pred[Landmark::L0], truth[Landmark::L0]), distance(pred[Landmark::L1], truth[Landmark::L1]));
    case Structure::RightLamina:
      return std::max(distance(pred[Landmark::L2], truth[Landmark::L2]), distance(pred[Landmark::L3], truth[Landmark::L3]));
  }
  return 0.0;
}

// TP: real, predicted real and within T. FN: real and not TP. TN: fake and
// predicted fake. FP: fake predicted real, plus real predicted real but
// farther than T.
inline DetectionMetrics compute_detection_metrics(const std::vector<DetectionResult>& results,
                                                  const std::vector<SliceAnnotation>& truth, double t = kPckRealThreshold) {
  if (results.size() != truth.size()) throw ShapeError("compute_detection_metrics: result and truth counts differ");
  DetectionMetrics m;
  for (std::size_t k = 0; k < results.size(); ++k)
    for (int s = 0; s < kNumStructures; ++s) {
      auto& c = m.per_structure[s];
      const bool y = truth[k].labels[s], pred = results[k].predicted_labels[s];
      if (y) {
        const bool close = structure_error(results[k].landmarks, truth[k].landmarks, static_cast<Structure>(s)) <= t;
        if (pred && close) ++c.tp;
        else ++c.fn;
        if (pred && !close) ++c.fp;
      } else {
        if (pred) ++c.fp;
        else ++c.tn;
      }
    }
  return m;
}

inline constexpr std::string_view kMetricsHeader = "structure,accuracy,precision,recall,f1,tp,fp,fn,tn";

namespace detail {
inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}
}  // namespace detail

// CSV with percentages to one decimal; rows sp, left_lamina, right_lamina, laminae.
inline std::string format_metrics_csv(const DetectionMetrics& m) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  auto row = [&](const char* name, const ConfusionCounts& c) {
    os << name << ',' << detail::percent(c.accuracy()) << ',' << detail::percent(c.precision()) << ','
       << detail::percent(c.recall()) << ',' << detail::percent(c.f1()) << ',' << c.tp << ',' << c.fp << ',' << c.fn
       << ',' << c.tn << '\n';
  };
  for (int s = 0; s < kNumStructures; ++s) row(structure_name(static_cast<Structure>(s)), m.per_structure[s]);
  row("laminae", m.laminae());
  return os.str();
}

inline std::string format_metrics_table(const DetectionMetrics& m) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-14s %9s %9s %9s %9s\n", "structure", "accuracy", "precision", "recall", "f1");
  os << buf;
  auto row = [&](const char* name, const ConfusionCounts& c) {
    std::snprintf(buf, sizeof buf, "%-14s %9.1f %9.1f %9.1f %9.1f\n", name, 100 * c.accuracy(), 100 * c.precision(),
                  100 * c.recall(), 100 * c.f1());
    os << buf;
  };
  for (int s = 0; s < kNumStructures; ++s) row(structure_name(static_cast<Structure>(s)), m.per_structure[s]);
  row("laminae", m.laminae());
  return os.str();
}

}  // namespace usspine
