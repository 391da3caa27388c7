#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "usspine/error.hpp"
#include "usspine/types.hpp"

namespace usspine {

// Five activation maps at 1/d_ds of the slice resolution, in landmark order.
class HeatmapSet {
 public:
  HeatmapSet() = default;
  HeatmapSet(int map_width, int map_height, int d_ds)
      : width_(map_width), height_(map_height), d_ds_(d_ds),
        values_(static_cast<std::size_t>(kNumLandmarks) * map_width * map_height, 0.0f) {
    if (map_width <= 0 || map_height <= 0) throw ShapeError("heatmap dimensions must be positive");
    if (d_ds <= 0) throw ShapeError("downsampling ratio must be positive");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int d_ds() const noexcept { return d_ds_; }
  std::size_t channel_size() const noexcept { return static_cast<std::size_t>(width_) * height_; }

  std::span<float> channel(int i) {
    return std::span<float>(values_).subspan(static_cast<std::size_t>(i) * channel_size(), channel_size());
  }
  std::span<const float> channel(int i) const {
    return std::span<const float>(values_).subspan(static_cast<std::size_t>(i) * channel_size(), channel_size());
  }
  float& at(int c, int u, int v) { return values_[static_cast<std::size_t>(c) * channel_size() + v * width_ + u]; }
  float at(int c, int u, int v) const {
    return values_[static_cast<std::size_t>(c) * channel_size() + v * width_ + u];
  }

  std::span<float> values() noexcept { return values_; }
  std::span<const float> values() const noexcept { return values_; }

  bool same_shape(const HeatmapSet& o) const { return width_ == o.width_ && height_ == o.height_; }

  friend bool operator==(const HeatmapSet&, const HeatmapSet&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int d_ds_ = 1;
  std::vector<float> values_;
};

struct Cell {
  int u = 0;  // column
  int v = 0;  // row
  float value = 0.0f;
};

// Row-major scan keeping the first strict maximum, so ties resolve to the
// smallest (row, column).
inline Cell channel_argmax(const HeatmapSet& h, int c) {
  const auto ch = h.channel(c);
  std::size_t best = 0;
  for (std::size_t i = 1; i < ch.size(); ++i)
    if (ch[i] > ch[best]) best = i;
  return {static_cast<int>(best % h.width()), static_cast<int>(best / h.width()), ch[best]};
}

// Heatmap cell -> full-resolution pixel, using cell centers.
inline double cell_to_pixel(int cell, int d_ds) { return (cell + 0.5) * d_ds - 0.5; }

// Full-resolution pixel -> nearest heatmap cell (inverse of cell_to_pixel).
inline int pixel_to_cell(double pixel, int d_ds, int cells) {
  const int c = static_cast<int>(std::lround((pixel + 0.5) / d_ds - 0.5));
  return std::clamp(c, 0, cells - 1);
}

inline bool valid_downsampling(int d_ds) { return d_ds == 1 || d_ds == 2 || d_ds == 4 || d_ds == 8; }

// Gaussian per landmark, centered on the landmark's nearest cell so the peak
// is exactly 1.
inline HeatmapSet encode_heatmaps(const LandmarkSet& landmarks, int width, int height, int d_ds, double sigma) {
  if (!valid_downsampling(d_ds)) throw ValidationError("d_ds must be one of 1, 2, 4, 8");
  if (!(sigma > 0.0)) throw ValidationError("sigma must be positive");
  if (width % d_ds != 0 || height % d_ds != 0) throw ValidationError("d_ds must divide slice dimensions");
  require_in_bounds(landmarks, width, height);
  HeatmapSet h(width / d_ds, height / d_ds, d_ds);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int c = 0; c < kNumLandmarks; ++c) {
    const int cu = pixel_to_cell(landmarks[c].x, d_ds, h.width());
    const int cv = pixel_to_cell(landmarks[c].y, d_ds, h.height());
    for (int v = 0; v < h.height(); ++v) {
      for (int u = 0; u < h.width(); ++u) {
        const double du = u - cu, dv = v - cv;
        h.at(c, u, v) = static_cast<float>(std::clamp(std::exp(-(du * du + dv * dv) * inv), 0.0, 1.0));
      }
    }
  }
  return h;
}

inline LandmarkSet cells_to_landmarks(const std::array<Cell, kNumLandmarks>& cells, int d_ds) {
  LandmarkSet l;
  for (int c = 0; c < kNumLandmarks; ++c) l[c] = {cell_to_pixel(cells[c].u, d_ds), cell_to_pixel(cells[c].v, d_ds)};
  return l;
}

inline std::array<Cell, kNumLandmarks> argmax_cells(const HeatmapSet& h) {
  std::array<Cell, kNumLandmarks> cells{};
  for (int c = 0; c < kNumLandmarks; ++c) cells[c] = channel_argmax(h, c);
  return cells;
}

inline LandmarkSet decode_argmax(const HeatmapSet& h) { return cells_to_landmarks(argmax_cells(h), h.d_ds()); }

// Absent when any channel's maximal activation falls below tau.
inline std::optional<LandmarkSet> decode_thresholded(const HeatmapSet& h, double tau) {
  const auto cells = argmax_cells(h);
  for (const auto& c : cells)
    if (c.value < tau) return std::nullopt;
  return cells_to_landmarks(cells, h.d_ds());
}

inline std::array<float, kNumLandmarks> channel_maxima(const HeatmapSet& h) {
  std::array<float, kNumLandmarks> m{};
  for (int c = 0; c < kNumLandmarks; ++c) m[c] = channel_argmax(h, c).value;
  return m;
}

}  // namespace usspine
