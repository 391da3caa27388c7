#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "usspine/annotations.hpp"
#include "usspine/error.hpp"
#include "usspine/volume.hpp"

namespace usspine {

struct ProjectionConfig {
  int band_margin = 8;  // pixels added around the lamina-midpoint rectangle
};

// Coronal image (rows = slices, columns = slice x). Each row is the maximum
// over a depth band around the detected lamina midpoints; slices with a real
// SP get a 3x3 block of 255 at the SP column.
inline Image project_coronal(const Volume& volume, const std::vector<DetectionResult>& detections,
                             const ProjectionConfig& cfg = {}) {
  if (detections.size() != static_cast<std::size_t>(volume.size()))
    throw ShapeError("project_coronal: " + std::to_string(detections.size()) + " detections for " +
                     std::to_string(volume.size()) + " slices");
  const int w = volume.width(), n = volume.size();
  Image out(w, n);
  for (int k = 0; k < n; ++k) {
    const auto& l = detections[k].landmarks;
    const Point2 a = l.left_mid(), b = l.right_mid();
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x))) - cfg.band_margin);
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a.x, b.x))) + cfg.band_margin);
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y))) - cfg.band_margin);
    const int y1 = std::min(volume.height() - 1, static_cast<int>(std::ceil(std::max(a.y, b.y))) + cfg.band_margin);
    const auto& s = volume[k];
    for (int x = x0; x <= x1; ++x) {
      std::uint8_t m = 0;
      for (int y = y0; y <= y1; ++y) m = std::max(m, s.at(x, y));
      out.at(x, k) = m;
    }
  }
  for (int k = 0; k < n; ++k) {
    if (!detections[k].predicted_labels[0]) continue;
    const int cx = static_cast<int>(std::lround(detections[k].landmarks.sp().x));
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if (out.contains(cx + dx, k + dy)) out.at(cx + dx, k + dy) = 255;
  }
  return out;
}

inline std::string encode_pgm(const Image& img) {
  std::string s = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  s.append(reinterpret_cast<const char*>(img.pixels().data()), img.size());
  return s;
}

inline void write_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto s = encode_pgm(img);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

struct SpCurve {
  std::vector<double> slice;    // sorted, distinct
  std::vector<double> lateral;  // SP x, pixels
  double spacing_z = 1.0;       // mm between slices
  double spacing_xy = 1.0;      // mm per pixel
};

inline SpCurve sp_curve(const std::vector<DetectionResult>& detections, double spacing_z, double spacing_xy) {
  SpCurve c{{}, {}, spacing_z, spacing_xy};
  for (std::size_t k = 0; k < detections.size(); ++k)
    if (detections[k].predicted_labels[0]) {
      c.slice.push_back(static_cast<double>(k));
      c.lateral.push_back(detections[k].landmarks.sp().x);
    }
  return c;
}

struct SpaConfig {
  int min_points = 8;
  int min_vertebrae = 3;        // runs of SP slices separated by gaps
  double min_swing_deg = 5.0;   // smaller tangent swings are not curve segments
  int samples_per_slice = 4;
};

// Natural cubic smoothing spline (Reinsch form) with the smoothing parameter
// picked by generalized cross-validation.
class SmoothingSpline {
 public:
  SmoothingSpline(std::vector<double> t, const std::vector<double>& y) : t_(std::move(t)) {
    const int n = static_cast<int>(t_.size());
    if (n < 3 || y.size() != t_.size()) throw MeasurementError("smoothing spline needs at least 3 points");
    for (int i = 0; i + 1 < n; ++i)
      if (!(t_[i + 1] > t_[i])) throw MeasurementError("spline knots must be strictly increasing");
    Eigen::VectorXd h(n - 1);
    for (int i = 0; i + 1 < n; ++i) h[i] = t_[i + 1] - t_[i];
    q_ = Eigen::MatrixXd::Zero(n, n - 2);
    r_ = Eigen::MatrixXd::Zero(n - 2, n - 2);
    for (int j = 1; j + 1 < n; ++j) {
      q_(j - 1, j - 1) = 1.0 / h[j - 1];
      q_(j, j - 1) = -1.0 / h[j - 1] - 1.0 / h[j];
      q_(j + 1, j - 1) = 1.0 / h[j];
      r_(j - 1, j - 1) = (h[j - 1] + h[j]) / 3.0;
      if (j + 1 < n - 1) r_(j - 1, j) = r_(j, j - 1) = h[j] / 6.0;
    }
    const Eigen::MatrixXd k = q_ * r_.ldlt().solve(q_.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (k + k.transpose()));
    const Eigen::VectorXd kappa = eig.eigenvalues().cwiseMax(0.0);
    const Eigen::MatrixXd& u = eig.eigenvectors();
    const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
    const Eigen::VectorXd coef = u.transpose() * yv;

    // GCV(lambda) = n RSS / (n - tr A)^2, searched on a log grid then refined.
    auto gcv = [&](double log_lambda) {
      const double lambda = std::exp(log_lambda);
      double rss = 0.0, tr = 0.0;
      for (int i = 0; i < n; ++i) {
        const double a = 1.0 / (1.0 + lambda * kappa[i]);
        tr += a;
        const double r = (1.0 - a) * coef[i];
        rss += r * r;
      }
      const double denom = n - tr;
      return denom <= 1e-9 ? std::numeric_limits<double>::infinity() : n * rss / (denom * denom);
    };
    double best = -10.0, best_v = gcv(best);
    for (double l = -10.0; l <= 16.0; l += 0.25) {
      const double v = gcv(l);
      if (v < best_v) best_v = v, best = l;
    }
    double lo = best - 0.25, hi = best + 0.25;
    for (int it = 0; it < 60; ++it) {  // golden-section refinement
      const double m1 = hi - 0.618 * (hi - lo), m2 = lo + 0.618 * (hi - lo);
      if (gcv(m1) < gcv(m2)) hi = m2;
      else lo = m1;
    }
    lambda_ = std::exp(0.5 * (lo + hi));
    Eigen::VectorXd shrink(n);
    for (int i = 0; i < n; ++i) shrink[i] = 1.0 / (1.0 + lambda_ * kappa[i]);
    g_ = u * shrink.asDiagonal() * coef;
    const Eigen::VectorXd inner = r_.ldlt().solve(q_.transpose() * g_);
    gamma_ = Eigen::VectorXd::Zero(n);
    gamma_.segment(1, n - 2) = inner;
  }

  double lambda() const { return lambda_; }
  double front() const { return t_.front(); }
  double back() const { return t_.back(); }

  double value(double t) const {
    const auto [i, a, b, h] = locate(t);
    return (a * g_[i + 1] + b * g_[i]) / h - a * b / 6.0 * ((1.0 + a / h) * gamma_[i + 1] + (1.0 + b / h) * gamma_[i]);
  }

  double derivative(double t) const {
    const auto [i, a, b, h] = locate(t);
    return (g_[i + 1] - g_[i]) / h -
           ((b - a) * ((1.0 + a / h) * gamma_[i + 1] + (1.0 + b / h) * gamma_[i]) + a * b * (gamma_[i + 1] - gamma_[i]) / h) / 6.0;
  }

 private:
  struct Piece {
    int i;
    double a, b, h;
  };
  Piece locate(double t) const {
    t = std::clamp(t, t_.front(), t_.back());
    auto it = std::upper_bound(t_.begin(), t_.end(), t);
    int i = static_cast<int>(it - t_.begin()) - 1;
    i = std::clamp(i, 0, static_cast<int>(t_.size()) - 2);
    return {i, t - t_[i], t_[i + 1] - t, t_[i + 1] - t_[i]};
  }

  std::vector<double> t_;
  Eigen::MatrixXd q_, r_;
  Eigen::VectorXd g_, gamma_;
  double lambda_ = 0.0;
};

inline int count_runs(const std::vector<double>& sorted_slices) {
  if (sorted_slices.empty()) return 0;
  int runs = 1;
  for (std::size_t i = 1; i < sorted_slices.size(); ++i) runs += sorted_slices[i] - sorted_slices[i - 1] > 1.5;
  return runs;
}

// Tangent-angle swings of the spline through per-vertebra SP centroids,
// between successive turning points of the angle (inflection points of the
// curve). Absolute degrees.
inline std::vector<double> measure_spa(const SpCurve& curve, const SpaConfig& cfg = {}) {
  if (static_cast<int>(curve.slice.size()) < cfg.min_points)
    throw MeasurementError("SPA needs at least " + std::to_string(cfg.min_points) + " SP points, got " +
                           std::to_string(curve.slice.size()));
  if (count_runs(curve.slice) < cfg.min_vertebrae)
    throw MeasurementError("SP points must span at least " + std::to_string(cfg.min_vertebrae) + " vertebrae");
  // One centroid per run of SP slices: the SP of a rotated vertebra sits off
  // the midline for the whole run, so raw points form a staircase.
  std::vector<double> t, x;
  for (std::size_t i = 0; i < curve.slice.size();) {
    std::size_t j = i + 1;
    while (j < curve.slice.size() && curve.slice[j] - curve.slice[j - 1] <= 1.5) ++j;
    double st = 0.0, sx = 0.0;
    for (std::size_t k = i; k < j; ++k) st += curve.slice[k], sx += curve.lateral[k];
    t.push_back(st / static_cast<double>(j - i));
    x.push_back(sx / static_cast<double>(j - i));
    i = j;
  }
  const SmoothingSpline spline(t, x);
  const double scale = curve.spacing_xy / curve.spacing_z;
  const int samples = std::max(2, static_cast<int>((spline.back() - spline.front()) * cfg.samples_per_slice) + 1);
  std::vector<double> theta(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    const double t = spline.front() + (spline.back() - spline.front()) * i / (samples - 1);
    theta[i] = std::atan(spline.derivative(t) * scale) * 180.0 / std::numbers::pi;
  }
  // Zig-zag extrema: a turning point is confirmed once the angle retreats
  // from it by min_swing_deg.
  std::vector<double> pivots;
  double lo = theta.front(), hi = theta.front(), ext = 0.0;
  int dir = 0;
  for (double v : theta) {
    if (dir == 0) {
      lo = std::min(lo, v), hi = std::max(hi, v);
      if (v - lo >= cfg.min_swing_deg) pivots.push_back(lo), dir = 1, ext = v;
      else if (hi - v >= cfg.min_swing_deg) pivots.push_back(hi), dir = -1, ext = v;
    } else if (dir == 1) {
      if (v > ext) ext = v;
      else if (ext - v >= cfg.min_swing_deg) pivots.push_back(ext), dir = -1, ext = v;
    } else {
      if (v < ext) ext = v;
      else if (v - ext >= cfg.min_swing_deg) pivots.push_back(ext), dir = 1, ext = v;
    }
  }
  if (dir != 0) pivots.push_back(ext);
  std::vector<double> angles;
  for (std::size_t i = 1; i < pivots.size(); ++i) {
    const double swing = std::abs(pivots[i] - pivots[i - 1]);
    if (swing >= cfg.min_swing_deg) angles.push_back(swing);
  }
  if (angles.empty()) angles.push_back(0.0);
  return angles;
}

struct SpaComparison {
  double mean_abs_diff = 0.0;
  double sd_abs_diff = 0.0;
  double correlation = 0.0;  // Pearson R, 0 when undefined
  std::size_t count = 0;
};

inline SpaComparison compare_spa(const std::vector<double>& measured, const std::vector<double>& reference) {
  if (measured.size() != reference.size()) throw ShapeError("compare_spa: measured and reference counts differ");
  SpaComparison c;
  c.count = measured.size();
  if (measured.empty()) return c;
  const double n = static_cast<double>(measured.size());
  std::vector<double> d(measured.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(measured[i] - reference[i]);
  for (double v : d) c.mean_abs_diff += v / n;
  if (d.size() > 1) {
    double ss = 0.0;
    for (double v : d) ss += (v - c.mean_abs_diff) * (v - c.mean_abs_diff);
    c.sd_abs_diff = std::sqrt(ss / (n - 1.0));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < d.size(); ++i) mx += measured[i] / n, my += reference[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    sxy += (measured[i] - mx) * (reference[i] - my);
    sxx += (measured[i] - mx) * (measured[i] - mx);
    syy += (reference[i] - my) * (reference[i] - my);
  }
  if (sxx > 0 && syy > 0) c.correlation = sxy / std::sqrt(sxx * syy);
  return c;
}

inline std::string format_spa_csv(const std::vector<double>& angles) {
  std::ostringstream os;
  os << "curve,angle_deg\n";
  for (std::size_t i = 0; i < angles.size(); ++i) os << i << ',' << format_number(angles[i]) << '\n';
  return os.str();
}

}  // namespace usspine
