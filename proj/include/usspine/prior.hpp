#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "usspine/error.hpp"
#include "usspine/types.hpp"

namespace usspine {

// Rotation direction of L0 -> L1 -> SP -> L2 -> L3 as swept around the
// vertebral reference point (see order_reference_point), as seen on screen
// (x right, y down).
enum class Orientation { Clockwise, CounterClockwise };

struct Range {
  double min = 0.0;
  double max = 0.0;
  bool contains(double v) const { return v >= min && v <= max; }
  friend bool operator==(const Range&, const Range&) = default;
};

struct PriorConfig {
  double max_angle_deg = 90.0;
  double iso_ratio_tol = 0.25;
  Range D_range{0.0, 1e9};
  Range d_lam_range{0.0, 1e9};
  Orientation orientation = Orientation::Clockwise;

  void validate() const {
    if (!(max_angle_deg > 0.0 && max_angle_deg < 180.0)) throw ConfigError("prior.max_angle_deg must be in (0,180)");
    if (!(iso_ratio_tol >= 0.0)) throw ConfigError("prior.iso_ratio_tol must be >= 0");
    if (!(D_range.min >= 0.0 && D_range.max >= D_range.min)) throw ConfigError("prior.D_range must be a non-empty range with min >= 0");
    if (!(d_lam_range.min >= 0.0 && d_lam_range.max >= d_lam_range.min))
      throw ConfigError("prior.d_lam_range must be a non-empty range with min >= 0");
  }

  friend bool operator==(const PriorConfig&, const PriorConfig&) = default;
};

enum class PriorRule { Degenerate, Acute, Isosceles, Order, DistanceRange, LaminaRange };

inline const char* rule_name(PriorRule r) {
  switch (r) {
    case PriorRule::Degenerate: return "degenerate";
    case PriorRule::Acute: return "acute";
    case PriorRule::Isosceles: return "isosceles";
    case PriorRule::Order: return "order";
    case PriorRule::DistanceRange: return "D_range";
    case PriorRule::LaminaRange: return "d_lam_range";
  }
  return "?";
}

struct PriorVerdict {
  bool accepted = false;
  std::vector<PriorRule> violated;

  bool violates(PriorRule r) const { return std::find(violated.begin(), violated.end(), r) != violated.end(); }
};

// Distance from p to the closed segment [a, b].
inline double point_segment_distance(Point2 p, Point2 a, Point2 b) {
  const Point2 ab = b - a;
  const double len2 = ab.x * ab.x + ab.y * ab.y;
  double t = len2 > 0.0 ? ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return distance(p, a + t * ab);
}

// Interior angle at vertex `at` of triangle (at, p, q), degrees.
inline double vertex_angle_deg(Point2 at, Point2 p, Point2 q) {
  const Point2 u = p - at, w = q - at;
  const double c = (u.x * w.x + u.y * w.y) / (std::hypot(u.x, u.y) * std::hypot(w.x, w.y));
  return std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

// Point on the far side of the lamina line, mirroring SP through the
// midpoint of the two lamina centers. Seen from here the five landmarks fan
// out L0, L1, SP, L2, L3 for a well-formed vertebra.
inline Point2 order_reference_point(const LandmarkSet& l) {
  const Point2 m = midpoint(l.left_mid(), l.right_mid());
  return m + (m - l.sp());
}

// True when the cyclic angular order of the five landmarks around the
// reference point is L0, L1, SP, L2, L3 in the requested direction.
inline bool cyclic_order_matches(const LandmarkSet& l, Orientation orientation) {
  const Point2 c = order_reference_point(l);
  std::array<std::pair<double, int>, kNumLandmarks> by_angle{};
  for (int i = 0; i < kNumLandmarks; ++i) {
    const Point2 d = l[i] - c;
    if (d.x == 0.0 && d.y == 0.0) return false;
    by_angle[static_cast<std::size_t>(i)] = {std::atan2(d.y, d.x), i};
  }
  std::sort(by_angle.begin(), by_angle.end());
  for (int i = 0; i + 1 < kNumLandmarks; ++i)
    if (by_angle[i].first == by_angle[i + 1].first) return false;
  // Ascending atan2 in image coordinates (y down) sweeps clockwise on screen.
  int start = 0;
  while (by_angle[static_cast<std::size_t>(start)].second != 0) ++start;
  for (int k = 0; k < kNumLandmarks; ++k) {
    const int step = orientation == Orientation::Clockwise ? k : -k;
    const int idx = ((start + step) % kNumLandmarks + kNumLandmarks) % kNumLandmarks;
    if (by_angle[static_cast<std::size_t>(idx)].second != k) return false;
  }
  return true;
}

inline PriorVerdict validate_prior(const LandmarkSet& l, const PriorConfig& config) {
  PriorVerdict out;
  const Point2 sp = l.sp(), ml = l.left_mid(), mr = l.right_mid();

  const bool degenerate = sp == ml || sp == mr || ml == mr;
  if (degenerate) {
    out.violated.push_back(PriorRule::Degenerate);
  } else {
    const double a_sp = vertex_angle_deg(sp, ml, mr);
    const double a_l = vertex_angle_deg(ml, sp, mr);
    const double a_r = vertex_angle_deg(mr, sp, ml);
    if (!(a_sp < config.max_angle_deg && a_l < config.max_angle_deg && a_r < config.max_angle_deg))
      out.violated.push_back(PriorRule::Acute);
    const double ratio = distance(sp, ml) / distance(sp, mr);
    if (!(ratio >= 1.0 - config.iso_ratio_tol && ratio <= 1.0 + config.iso_ratio_tol))
      out.violated.push_back(PriorRule::Isosceles);
  }

  if (!cyclic_order_matches(l, config.orientation)) out.violated.push_back(PriorRule::Order);

  if (!degenerate && !config.D_range.contains(point_segment_distance(sp, ml, mr)))
    out.violated.push_back(PriorRule::DistanceRange);
  if (!config.d_lam_range.contains(distance(l[0], l[1])) || !config.d_lam_range.contains(distance(l[3], l[4])))
    out.violated.push_back(PriorRule::LaminaRange);

  out.accepted = out.violated.empty();
  return out;
}

// Linear-interpolated percentile (q in [0,100]) of an unsorted sample.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline Range fit_range(const std::vector<double>& sample) {
  const double p5 = percentile(sample, 5.0);
  const double p95 = percentile(sample, 95.0);
  const double margin = 0.1 * (p95 - p5);
  return {std::max(0.0, p5 - margin), p95 + margin};
}

inline constexpr std::size_t kMinPriorFitAnnotations = 10;

// Fits the D and lamina-length ranges to labeled all-real slices. Angle and
// isosceles tolerances and the orientation are copied from `base`.
inline PriorConfig fit_prior_ranges(const std::vector<SliceAnnotation>& annotations, PriorConfig base = {}) {
  std::vector<double> d_sp, d_lam;
  for (const auto& a : annotations) {
    if (!a.all_real()) continue;
    const auto& l = a.landmarks;
    d_sp.push_back(point_segment_distance(l.sp(), l.left_mid(), l.right_mid()));
    d_lam.push_back(distance(l[0], l[1]));
    d_lam.push_back(distance(l[3], l[4]));
  }
  if (d_sp.size() < kMinPriorFitAnnotations)
    throw ConfigError("fit_prior_ranges needs at least " + std::to_string(kMinPriorFitAnnotations) +
                      " all-real annotations, got " + std::to_string(d_sp.size()));
  base.D_range = fit_range(d_sp);
  base.d_lam_range = fit_range(d_lam);
  return base;
}

}  // namespace usspine
