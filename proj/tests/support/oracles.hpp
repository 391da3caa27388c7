#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library's geometry or loss code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "usspine/prior.hpp"
#include "usspine/types.hpp"

namespace oracle {

using usspine::LandmarkSet;
using usspine::Point2;
using usspine::PriorConfig;

inline double sq(double v) { return v * v; }
inline double dist2(Point2 a, Point2 b) { return sq(a.x - b.x) + sq(a.y - b.y); }

// Interior angle opposite side `a` from the three side lengths.
inline double law_of_cosines_deg(double a2, double b2, double c2) {
  const double c = (b2 + c2 - a2) / (2.0 * std::sqrt(b2) * std::sqrt(c2));
  return std::acos(std::max(-1.0, std::min(1.0, c))) * 180.0 / std::numbers::pi;
}

// Minimum over the endpoints and, when the foot of the perpendicular lies on
// the segment, the perpendicular distance.
inline double segment_distance(Point2 p, Point2 a, Point2 b) {
  double best = std::min(std::sqrt(dist2(p, a)), std::sqrt(dist2(p, b)));
  const double abx = b.x - a.x, aby = b.y - a.y;
  const double len = std::hypot(abx, aby);
  if (len == 0.0) return best;
  const bool past_a = (p.x - a.x) * abx + (p.y - a.y) * aby >= 0.0;
  const bool before_b = (p.x - b.x) * abx + (p.y - b.y) * aby <= 0.0;
  if (past_a && before_b) best = std::min(best, std::abs(abx * (p.y - a.y) - aby * (p.x - a.x)) / len);
  return best;
}

// Sweep angle from direction u to direction w, measured in the direction of
// increasing atan2 (clockwise on screen with y down), in [0, 2pi).
inline double sweep(Point2 u, Point2 w) {
  double a = std::atan2(u.x * w.y - u.y * w.x, u.x * w.x + u.y * w.y);
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  return a;
}

// The five points, visited L0 L1 SP L2 L3 and back to L0, wind exactly once
// around the reference point iff they appear in that cyclic order.
inline bool cyclic_order(const LandmarkSet& l, bool clockwise) {
  const Point2 ml{(l[0].x + l[1].x) / 2, (l[0].y + l[1].y) / 2};
  const Point2 mr{(l[3].x + l[4].x) / 2, (l[3].y + l[4].y) / 2};
  const Point2 m{(ml.x + mr.x) / 2, (ml.y + mr.y) / 2};
  const Point2 ref{2 * m.x - l[2].x, 2 * m.y - l[2].y};
  const int seq[5] = {0, 1, 2, 3, 4};
  double total = 0.0;
  for (int i = 0; i < 5; ++i) {
    const Point2 a = l[seq[i]], b = l[seq[(i + 1) % 5]];
    const Point2 u{a.x - ref.x, a.y - ref.y}, w{b.x - ref.x, b.y - ref.y};
    if ((u.x == 0 && u.y == 0) || (w.x == 0 && w.y == 0)) return false;
    const double s = clockwise ? sweep(u, w) : sweep(w, u);
    if (s == 0.0) return false;
    total += s;
  }
  return std::abs(total - 2.0 * std::numbers::pi) < 1e-6;
}

struct Verdict {
  bool degenerate = false, acute = true, isosceles = true, order = true, d_range = true, lam_range = true;
  bool accepted() const { return !degenerate && acute && isosceles && order && d_range && lam_range; }
};

inline Verdict prior(const LandmarkSet& l, const PriorConfig& c) {
  Verdict v;
  const Point2 sp = l[2];
  const Point2 ml{(l[0].x + l[1].x) / 2, (l[0].y + l[1].y) / 2};
  const Point2 mr{(l[3].x + l[4].x) / 2, (l[3].y + l[4].y) / 2};
  const double s_l = dist2(sp, ml), s_r = dist2(sp, mr), base = dist2(ml, mr);
  v.degenerate = s_l == 0 || s_r == 0 || base == 0;
  if (!v.degenerate) {
    const double at_sp = law_of_cosines_deg(base, s_l, s_r);
    const double at_l = law_of_cosines_deg(s_r, s_l, base);
    const double at_r = law_of_cosines_deg(s_l, s_r, base);
    v.acute = at_sp < c.max_angle_deg && at_l < c.max_angle_deg && at_r < c.max_angle_deg;
    const double ratio = std::sqrt(s_l / s_r);
    v.isosceles = std::abs(ratio - 1.0) <= c.iso_ratio_tol;
    const double d = segment_distance(sp, ml, mr);
    v.d_range = d >= c.D_range.min && d <= c.D_range.max;
  }
  v.order = cyclic_order(l, c.orientation == usspine::Orientation::Clockwise);
  for (const auto& [a, b] : {std::pair{0, 1}, std::pair{3, 4}}) {
    const double d = std::sqrt(dist2(l[a], l[b]));
    v.lam_range = v.lam_range && d >= c.d_lam_range.min && d <= c.d_lam_range.max;
  }
  return v;
}

// Landmark sets around a plausible vertebra, perturbed enough that every
// rule fires on a sizeable share of samples.
class LandmarkGenerator {
 public:
  explicit LandmarkGenerator(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }

  LandmarkSet vertebra(double jitter) {
    const double cx = uniform(110, 210), y_line = uniform(120, 180);
    const double half = uniform(25, 50), depth = uniform(20, 90);
    const double len_l = uniform(15, 55), len_r = uniform(15, 55);
    LandmarkSet l;
    l[0] = {cx - half - len_l / 2, y_line};
    l[1] = {cx - half + len_l / 2, y_line};
    l[2] = {cx + uniform(-10, 10), y_line - depth};
    l[3] = {cx + half - len_r / 2, y_line};
    l[4] = {cx + half + len_r / 2, y_line};
    for (auto& p : l.points) p = {p.x + uniform(-jitter, jitter), p.y + uniform(-jitter, jitter)};
    return l;
  }

  LandmarkSet scattered(double w, double h) {
    LandmarkSet l;
    for (auto& p : l.points) p = {uniform(0, w), uniform(0, h)};
    return l;
  }

  LandmarkSet mixed() {
    const double r = uniform(0, 1);
    if (r < 0.5) return vertebra(uniform(0, 6));
    if (r < 0.85) return vertebra(uniform(6, 40));
    return scattered(320, 240);
  }

 private:
  std::mt19937_64 eng_;
};

inline PriorConfig test_prior_config() {
  PriorConfig c;
  c.max_angle_deg = 89.9;
  c.iso_ratio_tol = 0.15;
  c.D_range = {30, 120};
  c.d_lam_range = {20, 60};
  return c;
}

struct GradCheck {
  std::size_t checked = 0, passed = 0;
  double worst = 0.0;
  double pass_fraction() const { return checked ? static_cast<double>(passed) / checked : 0.0; }
};

// Central differences on every parameter. A parameter passes when the
// relative error is within `tol`; values whose magnitudes are both under
// `zero` count as agreeing.
inline GradCheck check_gradient(std::span<double> params, const std::vector<double>& analytic,
                                const std::function<double()>& loss, double h = 1e-6, double tol = 1e-4,
                                double zero = 1e-10) {
  GradCheck r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + h;
    const double lp = loss();
    params[i] = orig - h;
    const double lm = loss();
    params[i] = orig;
    const double fd = (lp - lm) / (2 * h), an = analytic[i];
    const double scale = std::max(std::abs(fd), std::abs(an));
    const double rel = scale < zero ? 0.0 : std::abs(fd - an) / scale;
    ++r.checked;
    if (rel <= tol) ++r.passed;
    r.worst = std::max(r.worst, rel);
  }
  return r;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("usspine_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
