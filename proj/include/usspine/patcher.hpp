#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "usspine/error.hpp"
#include "usspine/rng.hpp"
#include "usspine/types.hpp"

namespace usspine {

struct PatchSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const PatchSize&, const PatchSize&) = default;
};

struct PatchSpec {
  PatchSize sp{110, 140};
  PatchSize lamina{80, 100};
  int jitter_radius = 6;

  PatchSize size_of(Structure s) const { return s == Structure::SpinousProcess ? sp : lamina; }
  // Every patch is zero-padded to this common classifier input.
  PatchSize input() const { return {std::max(sp.width, lamina.width), std::max(sp.height, lamina.height)}; }

  void validate(int slice_width, int slice_height) const {
    for (const auto* p : {&sp, &lamina})
      if (p->width <= 0 || p->height <= 0 || p->width > slice_width || p->height > slice_height)
        throw ConfigError("patch sizes must be positive and fit inside the slice");
    if (jitter_radius < 0) throw ConfigError("patch jitter_radius must be >= 0");
  }

  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

// [SP, middle of the left lamina, middle of the right lamina].
inline std::array<Point2, kNumStructures> patch_centers(const LandmarkSet& l) {
  return {l.sp(), l.left_mid(), l.right_mid()};
}

// Window [cx - w/2, cx - w/2 + w) x [cy - h/2, cy - h/2 + h) around the
// rounded (and, when training, jittered) center; outside pixels are 0.
inline Image crop_patch(const Slice& slice, Point2 center, PatchSize size, int jitter_radius, std::uint64_t seed,
                        bool training) {
  long cx = std::lround(center.x), cy = std::lround(center.y);
  if (training && jitter_radius > 0) {
    Rng rng(seed);
    cx += rng.uniform_int(-jitter_radius, jitter_radius);
    cy += rng.uniform_int(-jitter_radius, jitter_radius);
  }
  const long x0 = cx - size.width / 2, y0 = cy - size.height / 2;
  Image out(size.width, size.height);
  for (int y = 0; y < size.height; ++y) {
    const long sy = y0 + y;
    if (sy < 0 || sy >= slice.height()) continue;
    for (int x = 0; x < size.width; ++x) {
      const long sx = x0 + x;
      if (sx >= 0 && sx < slice.width()) out.at(x, y) = slice.at(static_cast<int>(sx), static_cast<int>(sy));
    }
  }
  return out;
}

// Centers `patch` on a zero canvas of the given size.
inline Image pad_to(const Image& patch, PatchSize size) {
  if (patch.width() > size.width || patch.height() > size.height) throw ShapeError("patch larger than the padded size");
  if (patch.width() == size.width && patch.height() == size.height) return patch;
  Image out(size.width, size.height);
  const int ox = (size.width - patch.width()) / 2, oy = (size.height - patch.height()) / 2;
  for (int y = 0; y < patch.height(); ++y)
    for (int x = 0; x < patch.width(); ++x) out.at(ox + x, oy + y) = patch.at(x, y);
  return out;
}

// Classifier-ready patch for one structure.
inline Image structure_patch(const Slice& slice, const LandmarkSet& landmarks, Structure s, const PatchSpec& spec,
                             std::uint64_t seed, bool training) {
  const auto centers = patch_centers(landmarks);
  return pad_to(crop_patch(slice, centers[static_cast<int>(s)], spec.size_of(s), spec.jitter_radius, seed, training),
                spec.input());
}

}  // namespace usspine
