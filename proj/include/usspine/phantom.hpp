#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "usspine/annotations.hpp"
#include "usspine/augment.hpp"
#include "usspine/error.hpp"
#include "usspine/prior.hpp"
#include "usspine/rng.hpp"
#include "usspine/volume.hpp"

namespace usspine {

enum class CurveShape { Straight, Sine, SingleArc, SCurve };

// Per-subject appearance.
struct PhantomTexture {
  double background = 70.0;     // mean tissue level near the skin
  double depth_falloff = 0.35;  // fractional loss of background at the bottom row
  double speckle = 0.45;        // multiplicative speckle strength
  double speckle_blur = 0.8;    // speckle correlation length, pixels
  double layer_contrast = 18.0; // amplitude of horizontal soft-tissue bands
  double structure_gain = 1.0;  // brightness multiplier for bone echoes
};

struct PhantomSpec {
  int width = 320;
  int height = 240;
  int n_slices = 200;
  float spacing_z_mm = 1.0f;
  float spacing_xy_mm = 0.25f;

  int vertebra_period = 20;  // slices per vertebra
  int junction_gap = 4;      // leading slices of each vertebra with no visible bone
  int phase = 0;             // slice offset of the first vertebra boundary

  Range lamina_length_range{25.0, 45.0};
  Range sp_depth_range{50.0, 80.0};        // D: SP to the lamina-center line
  Range lamina_half_sep_range{36.0, 46.0}; // lateral distance from midline to lamina center
  Range sp_y_range{50.0, 70.0};            // depth of the SP cap
  double rotation_max = 6.0;               // lateral SP offset from the lamina midline, pixels
  double lamina_tilt_max = 3.0;            // rise of a lamina's inner end, pixels
  double structure_thickness = 3.0;

  CurveShape curve = CurveShape::Sine;
  double curve_amplitude = 20.0;    // pixels (Sine)
  double curve_period = 160.0;      // slices (Sine)
  double curve_angle_deg = 20.0;    // SingleArc / first arc of SCurve
  double curve_angle2_deg = 20.0;   // second arc of SCurve

  PhantomTexture texture;
  std::array<double, 3> p_random_missing{0.0, 0.0, 0.0};  // per structure, per vertebra
  bool distractors = true;
  double distractor_strength = 0.45;  // relative brightness of fake remnants
  // Chance that a missing structure is replaced by a bright echo at an
  // anatomically wrong place (deeper bone, neighbouring processes).
  double confuser_probability = 0.5;
  // Chance per vertebra and side that a real lamina casts a deeper
  // reverberation echo of similar brightness.
  double echo_probability = 0.0;

  std::uint64_t seed = 7;

  void validate() const {
    if (width <= 0 || height <= 0) throw ConfigError("phantom size must be positive");
    if (n_slices < 1) throw ConfigError("phantom.n_slices must be >= 1");
    if (vertebra_period < 2) throw ConfigError("phantom.vertebra_period must be >= 2");
    if (junction_gap < 0 || junction_gap >= vertebra_period)
      throw ConfigError("phantom.junction_gap must be in [0, vertebra_period)");
    for (double p : p_random_missing)
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("phantom.p_random_missing must be in [0,1]");
    if (!(confuser_probability >= 0.0 && confuser_probability <= 1.0))
      throw ConfigError("phantom.confuser_probability must be in [0,1]");
    if (!(echo_probability >= 0.0 && echo_probability <= 1.0)) throw ConfigError("phantom.echo_probability must be in [0,1]");
    for (const Range* r : {&lamina_length_range, &sp_depth_range, &lamina_half_sep_range, &sp_y_range})
      if (!(r->min >= 0.0 && r->max >= r->min)) throw ConfigError("phantom ranges must be non-empty and >= 0");
    if (!(spacing_z_mm > 0.0f && spacing_xy_mm > 0.0f)) throw ConfigError("phantom spacings must be positive");
    if (!(std::abs(curve_angle_deg) < 80.0 && std::abs(curve_angle2_deg) < 80.0))
      throw ConfigError("phantom curve angles must be below 80 degrees");
  }
};

struct Phantom {
  Volume volume;
  AnnotationMap annotations;  // every slice
  std::vector<double> lateral;  // curve offset per slice, pixels
};

// Tangent angle (degrees, positive = curving toward +x with depth along the
// scan) of the analytic spine curve at normalized position t in [0,1].
inline double curve_tangent_deg(const PhantomSpec& spec, double t) {
  auto blend = [](double a, double b, double s) {  // cosine ease, zero slope at both ends
    return a + (b - a) * 0.5 * (1.0 - std::cos(std::numbers::pi * std::clamp(s, 0.0, 1.0)));
  };
  switch (spec.curve) {
    case CurveShape::SingleArc: {
      const double a = 0.5 * spec.curve_angle_deg;
      return blend(a, -a, (t - 0.15) / 0.7);
    }
    case CurveShape::SCurve: {
      const double a = 0.5 * spec.curve_angle_deg, b = -a, c = b + spec.curve_angle2_deg;
      return t < 0.5 ? blend(a, b, (t - 0.1) / 0.4) : blend(b, c, (t - 0.5) / 0.4);
    }
    default:
      return 0.0;
  }
}

// Angles an ideal measurement returns for the generated curve.
inline std::vector<double> analytic_spa(const PhantomSpec& spec) {
  switch (spec.curve) {
    case CurveShape::SingleArc: return {std::abs(spec.curve_angle_deg)};
    case CurveShape::SCurve: return {std::abs(spec.curve_angle_deg), std::abs(spec.curve_angle2_deg)};
    default: return {0.0};
  }
}

// Lateral offset (pixels from the image center line) per slice.
inline std::vector<double> lateral_curve(const PhantomSpec& spec) {
  const int n = spec.n_slices;
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  if (spec.curve == CurveShape::Sine) {
    for (int k = 0; k < n; ++k) x[k] = spec.curve_amplitude * std::sin(2.0 * std::numbers::pi * k / spec.curve_period);
    return x;
  }
  if (spec.curve == CurveShape::Straight || n < 2) return x;
  // Integrate tan(theta) along the scan with fine substeps (trapezoid rule).
  constexpr int sub = 16;
  const double dz = spec.spacing_z_mm / sub;
  double pos = 0.0;
  auto slope = [&](double k) { return std::tan(curve_tangent_deg(spec, k / (n - 1)) * std::numbers::pi / 180.0); };
  for (int k = 1; k < n; ++k) {
    for (int s = 0; s < sub; ++s) {
      const double k0 = k - 1 + static_cast<double>(s) / sub, k1 = k0 + 1.0 / sub;
      pos += 0.5 * (slope(k0) + slope(k1)) * dz;
    }
    x[k] = pos / spec.spacing_xy_mm;
  }
  const double mid = 0.5 * (*std::min_element(x.begin(), x.end()) + *std::max_element(x.begin(), x.end()));
  for (auto& v : x) v -= mid;
  return x;
}

namespace detail {

struct VertebraShape {
  double lam_len_left, lam_len_right, depth, half_sep, rotation, tilt_left, tilt_right, sp_y;
  std::array<bool, 3> missing{};
};

inline VertebraShape sample_vertebra(const PhantomSpec& s, std::int64_t v) {
  Rng rng(derive_seed(s.seed, 0x7665727465ULL, static_cast<std::uint64_t>(v + (1LL << 32))));
  VertebraShape g{};
  g.lam_len_left = rng.uniform(s.lamina_length_range.min, s.lamina_length_range.max);
  g.lam_len_right = rng.uniform(s.lamina_length_range.min, s.lamina_length_range.max);
  g.depth = rng.uniform(s.sp_depth_range.min, s.sp_depth_range.max);
  g.half_sep = rng.uniform(s.lamina_half_sep_range.min, s.lamina_half_sep_range.max);
  g.rotation = rng.uniform(-s.rotation_max, s.rotation_max);
  g.tilt_left = rng.uniform(0.0, s.lamina_tilt_max);
  g.tilt_right = rng.uniform(0.0, s.lamina_tilt_max);
  g.sp_y = rng.uniform(s.sp_y_range.min, s.sp_y_range.max);
  for (int i = 0; i < 3; ++i) g.missing[i] = rng.bernoulli(s.p_random_missing[i]);
  return g;
}

inline LandmarkSet vertebra_landmarks(const VertebraShape& g, double center_x) {
  LandmarkSet l;
  const double y_line = g.sp_y + g.depth;
  const Point2 ml{center_x - g.half_sep, y_line}, mr{center_x + g.half_sep, y_line};
  l[Landmark::L0] = {ml.x - 0.5 * g.lam_len_left, ml.y + g.tilt_left};
  l[Landmark::L1] = {ml.x + 0.5 * g.lam_len_left, ml.y - g.tilt_left};
  l[Landmark::SP] = {center_x + g.rotation, g.sp_y};
  l[Landmark::L2] = {mr.x - 0.5 * g.lam_len_right, mr.y - g.tilt_right};
  l[Landmark::L3] = {mr.x + 0.5 * g.lam_len_right, mr.y + g.tilt_right};
  return l;
}

// Adds a bright line segment with a Gaussian cross-profile and darkens the
// region beneath it (acoustic shadow).
inline void draw_lamina(std::vector<double>& img, int w, int h, Point2 a, Point2 b, double peak, double thickness,
                        double shadow) {
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - 2 * thickness)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + 2 * thickness)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - 2 * thickness)));
  const double inv = 1.0 / (2.0 * thickness * thickness / 4.0);
  for (int x = x0; x <= x1; ++x) {
    // Shadow below the segment, fading in over a few pixels.
    const double t = std::clamp((x - a.x) / (b.x - a.x), 0.0, 1.0);
    const double yseg = a.y + t * (b.y - a.y);
    const bool inside = x >= std::min(a.x, b.x) && x <= std::max(a.x, b.x);
    for (int y = y0; y < h; ++y) {
      const double d = point_segment_distance({static_cast<double>(x), static_cast<double>(y)}, a, b);
      auto& p = img[static_cast<std::size_t>(y) * w + x];
      if (inside && y > yseg + thickness) p *= 1.0 - shadow * std::min(1.0, (y - yseg - thickness) / 4.0);
      if (d < 2.5 * thickness) p += peak * std::exp(-d * d * inv);
    }
  }
}

// SP: bright cap with a dark hollow opening downward.
inline void draw_spinous(std::vector<double>& img, int w, int h, Point2 sp, double peak, double scale, double shadow) {
  const double cap_w = 11.0 * scale, cap_h = 3.0 * scale, hollow_h = 30.0 * scale, hollow_w = 8.0 * scale;
  const int x0 = std::max(0, static_cast<int>(sp.x - 3 * cap_w)), x1 = std::min(w - 1, static_cast<int>(sp.x + 3 * cap_w));
  const int y0 = std::max(0, static_cast<int>(sp.y - 4 * cap_h));
  const int y1 = std::min(h - 1, static_cast<int>(sp.y + hollow_h + 4 * cap_h));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - sp.x, dy = y - sp.y;
      auto& p = img[static_cast<std::size_t>(y) * w + x];
      // Hollow: a wedge widening with depth below the cap.
      if (dy > cap_h) {
        const double half = hollow_w * (0.4 + 0.6 * std::min(1.0, dy / hollow_h));
        if (std::abs(dx) < half && dy < hollow_h) p *= 1.0 - shadow * (1.0 - std::abs(dx) / half);
      }
      // Cap: an arc (inverted parabola) thickened by a Gaussian.
      const double arc = sp.y + cap_h * (dx * dx) / (cap_w * cap_w) - cap_h * 0.5;
      const double d = (y - arc);
      if (std::abs(dx) < 1.6 * cap_w) p += peak * std::exp(-d * d / (2.0 * cap_h * cap_h / 2.0)) * std::exp(-dx * dx / (2.0 * cap_w * cap_w));
    }
}

}  // namespace detail

inline Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const int w = spec.width, h = spec.height;
  const double scale = w / 320.0;
  const auto& tex = spec.texture;
  Phantom out;
  out.lateral = lateral_curve(spec);

  // Subject-level tissue layering, fixed across slices.
  Rng subject(derive_seed(spec.seed, 0x5ab1ULL));
  std::vector<double> band_pos(4), band_amp(4), band_width(4);
  for (int i = 0; i < 4; ++i) {
    band_pos[i] = subject.uniform(0.08, 0.9) * h;
    band_amp[i] = subject.uniform(-1.0, 1.0) * tex.layer_contrast;
    band_width[i] = subject.uniform(3.0, 10.0) * scale;
  }
  std::vector<double> base_row(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    double v = tex.background * (1.0 - tex.depth_falloff * y / h);
    for (int i = 0; i < 4; ++i) {
      const double d = (y - band_pos[i]) / band_width[i];
      v += band_amp[i] * std::exp(-0.5 * d * d);
    }
    base_row[y] = v;
  }

  std::vector<Slice> slices;
  slices.reserve(static_cast<std::size_t>(spec.n_slices));
  const double thickness = spec.structure_thickness;
  for (int k = 0; k < spec.n_slices; ++k) {
    const std::int64_t shifted = k + spec.phase;
    const std::int64_t v = shifted >= 0 ? shifted / spec.vertebra_period
                                        : -((-shifted + spec.vertebra_period - 1) / spec.vertebra_period);
    const int pos = static_cast<int>(shifted - v * spec.vertebra_period);
    const auto shape = detail::sample_vertebra(spec, v);
    const double center = 0.5 * w + out.lateral[k];
    const LandmarkSet lm = detail::vertebra_landmarks(shape, center);
    if (!lm.in_bounds(w, h))
      throw ConfigError("phantom geometry places landmarks outside the slice at slice " + std::to_string(k));

    const bool junction = pos < spec.junction_gap;
    SliceAnnotation ann;
    ann.landmarks = lm;
    for (int i = 0; i < 3; ++i) ann.labels[i] = !junction && !shape.missing[i];
    out.annotations.emplace(k, ann);

    // Visible bone brightens toward the middle of its vertebra.
    const int visible = spec.vertebra_period - spec.junction_gap;
    const double frac = junction ? 0.0 : (pos - spec.junction_gap + 0.5) / visible;
    const double presence = 0.65 + 0.35 * std::sin(std::numbers::pi * frac);

    Rng rng(derive_seed(spec.seed, 0x511ceULL, static_cast<std::uint64_t>(k)));
    // Correlated multiplicative speckle.
    std::vector<double> noise(static_cast<std::size_t>(w) * h);
    for (auto& n : noise) n = rng.normal();
    if (tex.speckle_blur > 0.0) noise = usspine::detail::separable_filter(noise, w, h, usspine::detail::gaussian_kernel(tex.speckle_blur));
    const double norm = tex.speckle_blur > 0.0 ? std::sqrt(2.0 * std::sqrt(std::numbers::pi) * tex.speckle_blur) : 1.0;
    std::vector<double> img(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img[static_cast<std::size_t>(y) * w + x] = base_row[y];

    const double bone = 150.0 * tex.structure_gain;
    const double fake = bone * spec.distractor_strength;
    auto lamina = [&](Point2 a, Point2 b, bool real, bool fake_allowed) {
      if (real) {
        detail::draw_lamina(img, w, h, a, b, bone * presence, thickness, 0.3);
      } else if (fake_allowed && spec.distractors && rng.bernoulli(0.6)) {
        // A short faint remnant near the expected position.
        const double t0 = rng.uniform(0.0, 0.4), t1 = t0 + rng.uniform(0.25, 0.5);
        const Point2 off{rng.uniform(-4.0, 4.0) * scale, rng.uniform(-4.0, 4.0) * scale};
        detail::draw_lamina(img, w, h, a + t0 * (b - a) + off, a + std::min(1.0, t1) * (b - a) + off,
                            fake * rng.uniform(0.6, 1.0), thickness * 0.8, 0.25);
      }
      if (!real && fake_allowed && spec.distractors && rng.bernoulli(spec.confuser_probability)) {
        const Point2 off{rng.uniform(-8.0, 8.0) * scale, rng.uniform(24.0, 60.0) * scale};
        detail::draw_lamina(img, w, h, a + off, b + off, bone * rng.uniform(0.7, 1.0), thickness, 0.3);
      }
    };
    lamina(lm[Landmark::L0], lm[Landmark::L1], ann.labels[1], true);
    lamina(lm[Landmark::L2], lm[Landmark::L3], ann.labels[2], true);
    if (spec.echo_probability > 0.0) {
      Rng echo(derive_seed(spec.seed, 0xec0ULL, static_cast<std::uint64_t>(v)));
      for (int side = 0; side < 2; ++side) {
        const bool on = echo.bernoulli(spec.echo_probability);
        const double dy = echo.uniform(18.0, 36.0) * scale, gain = echo.uniform(0.75, 1.0);
        if (on && ann.labels[1 + side]) {
          const Point2 a = lm[side == 0 ? Landmark::L0 : Landmark::L2], b = lm[side == 0 ? Landmark::L1 : Landmark::L3];
          detail::draw_lamina(img, w, h, a + Point2{0.0, dy}, b + Point2{0.0, dy}, bone * presence * gain, thickness, 0.3);
        }
      }
    }
    if (ann.labels[0]) {
      detail::draw_spinous(img, w, h, lm[Landmark::SP], bone * presence, scale, 0.45);
    } else if (spec.distractors && rng.bernoulli(0.5)) {
      const Point2 off{rng.uniform(-5.0, 5.0) * scale, rng.uniform(-5.0, 5.0) * scale};
      detail::draw_spinous(img, w, h, lm[Landmark::SP] + off, fake * rng.uniform(0.4, 0.8), scale * 0.7, 0.2);
    }
    if (!ann.labels[0] && spec.distractors && rng.bernoulli(spec.confuser_probability)) {
      const double dy = rng.uniform(24.0, 50.0) * scale * (rng.bernoulli(0.5) ? 1.0 : -0.6);
      const Point2 at = lm[Landmark::SP] + Point2{rng.uniform(-20.0, 20.0) * scale, dy};
      if (at.y > 2.0) detail::draw_spinous(img, w, h, at, bone * rng.uniform(0.7, 1.0), scale, 0.45);
    }
    // Random speckle-like clutter blobs anywhere.
    if (spec.distractors) {
      const int blobs = static_cast<int>(rng.uniform_int(0, 3));
      for (int b = 0; b < blobs; ++b) {
        const Point2 c{rng.uniform(0.05, 0.95) * w, rng.uniform(0.1, 0.95) * h};
        const double len = rng.uniform(4.0, 10.0) * scale;
        detail::draw_lamina(img, w, h, c, c + Point2{len, rng.uniform(-2.0, 2.0) * scale}, fake * rng.uniform(0.3, 0.7),
                            thickness * 0.7, 0.0);
      }
    }

    Image slice(w, h);
    auto px = slice.pixels();
    for (std::size_t i = 0; i < img.size(); ++i) px[i] = clamp_u8(img[i] * (1.0 + tex.speckle * noise[i] * norm));
    slices.push_back(std::move(slice));
  }
  out.volume = Volume(std::move(slices), spec.spacing_z_mm, spec.spacing_xy_mm);
  return out;
}

}  // namespace usspine
