#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "usspine/error.hpp"

namespace usspine {

// 8-bit grayscale grid, row-major. Used for transverse slices and patches.
class Image {
 public:
  Image() = default;
  Image(int width, int height, std::uint8_t fill = 0)
      : width_(width), height_(height) {
    if (width <= 0 || height <= 0)
      throw ValidationError("image dimensions must be positive, got " + std::to_string(width) +
                            "x" + std::to_string(height));
    pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }
  Image(int width, int height, std::vector<std::uint8_t> pixels)
      : Image(width, height) {
    if (pixels.size() != pixels_.size())
      throw ValidationError("pixel buffer size does not match image dimensions");
    pixels_ = std::move(pixels);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return pixels_.empty(); }
  std::size_t size() const noexcept { return pixels_.size(); }

  std::uint8_t& at(int x, int y) { return pixels_[index(x, y)]; }
  std::uint8_t at(int x, int y) const { return pixels_[index(x, y)]; }

  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<std::uint8_t> pixels() noexcept { return pixels_; }

  double mean() const {
    double s = 0.0;
    for (auto v : pixels_) s += v;
    return pixels_.empty() ? 0.0 : s / static_cast<double>(pixels_.size());
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

using Slice = Image;

inline std::uint8_t clamp_u8(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v));
}

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }
inline Point2 midpoint(Point2 a, Point2 b) { return {0.5 * (a.x + b.x), 0.5 * (a.y + b.y)}; }

// Positional landmark order on a transverse slice.
enum class Landmark : int { L0 = 0, L1 = 1, SP = 2, L2 = 3, L3 = 4 };
inline constexpr int kNumLandmarks = 5;

// The three structures a slice may or may not contain.
enum class Structure : int { SpinousProcess = 0, LeftLamina = 1, RightLamina = 2 };
inline constexpr int kNumStructures = 3;

inline constexpr const char* structure_name(Structure s) {
  switch (s) {
    case Structure::SpinousProcess: return "sp";
    case Structure::LeftLamina: return "left_lamina";
    case Structure::RightLamina: return "right_lamina";
  }
  return "?";
}

// Which structure's real/fake label governs a landmark.
inline constexpr Structure structure_of(int landmark) {
  if (landmark == 2) return Structure::SpinousProcess;
  return landmark < 2 ? Structure::LeftLamina : Structure::RightLamina;
}

struct LandmarkSet {
  std::array<Point2, kNumLandmarks> points{};

  Point2& operator[](Landmark l) { return points[static_cast<int>(l)]; }
  const Point2& operator[](Landmark l) const { return points[static_cast<int>(l)]; }
  Point2& operator[](int i) { return points[static_cast<std::size_t>(i)]; }
  const Point2& operator[](int i) const { return points[static_cast<std::size_t>(i)]; }

  Point2 sp() const { return points[2]; }
  Point2 left_mid() const { return midpoint(points[0], points[1]); }
  Point2 right_mid() const { return midpoint(points[3], points[4]); }

  bool in_bounds(int width, int height) const {
    for (const auto& p : points)
      if (!(p.x >= 0.0 && p.y >= 0.0 && p.x < width && p.y < height)) return false;
    return true;
  }

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;
};

inline void require_in_bounds(const LandmarkSet& l, int width, int height) {
  if (!l.in_bounds(width, height))
    throw ValidationError("landmark outside " + std::to_string(width) + "x" + std::to_string(height) +
                          " slice");
}

struct SliceAnnotation {
  LandmarkSet landmarks;
  // Indexed by Structure: sp_real, left_lamina_real, right_lamina_real.
  std::array<bool, kNumStructures> labels{};

  bool all_real() const { return labels[0] && labels[1] && labels[2]; }
  bool real(Structure s) const { return labels[static_cast<int>(s)]; }

  friend bool operator==(const SliceAnnotation&, const SliceAnnotation&) = default;
};

struct DetectionResult {
  LandmarkSet landmarks;
  std::array<bool, kNumStructures> predicted_labels{};
  // Probability that each structure is real.
  std::array<double, kNumStructures> confidences{};

  friend bool operator==(const DetectionResult&, const DetectionResult&) = default;
};

}  // namespace usspine
