#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "usspine/error.hpp"
#include "usspine/rng.hpp"
#include "usspine/types.hpp"

namespace usspine {

enum class AugmentKind { WeakDetector, WeakClassifier, Strong };

enum class StrongOp { Brightness, Contrast, Gamma, Blur, Sharpen, Cutout, Translate };

inline const char* op_name(StrongOp op) {
  switch (op) {
    case StrongOp::Brightness: return "brightness";
    case StrongOp::Contrast: return "contrast";
    case StrongOp::Gamma: return "gamma";
    case StrongOp::Blur: return "blur";
    case StrongOp::Sharpen: return "sharpen";
    case StrongOp::Cutout: return "cutout";
    case StrongOp::Translate: return "translate";
  }
  return "?";
}

inline bool is_spatial(StrongOp op) { return op == StrongOp::Translate; }

struct AugmentPolicy {
  AugmentKind kind = AugmentKind::WeakDetector;
  double noise_sigma = 4.0;       // weak detector, intensity units
  double flip_probability = 0.5;  // weak classifier
  int op_count = 2;               // strong
  double magnitude = 5.0;         // strong, in [0, 10]
  bool detector_use = true;       // strong: restrict to intensity-only ops

  static AugmentPolicy weak_detector(double sigma = 4.0) {
    AugmentPolicy p;
    p.kind = AugmentKind::WeakDetector;
    p.noise_sigma = sigma;
    return p;
  }
  static AugmentPolicy weak_classifier() {
    AugmentPolicy p;
    p.kind = AugmentKind::WeakClassifier;
    return p;
  }
  static AugmentPolicy strong(bool for_detector, int ops = 2, double magnitude = 5.0) {
    AugmentPolicy p;
    p.kind = AugmentKind::Strong;
    p.detector_use = for_detector;
    p.op_count = ops;
    p.magnitude = magnitude;
    return p;
  }

  void validate() const {
    if (!(noise_sigma >= 0.0)) throw ConfigError("augment.noise_sigma must be >= 0");
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
      throw ConfigError("augment.flip_probability must be in [0,1]");
    if (op_count < 0) throw ConfigError("augment.op_count must be >= 0");
    if (!(magnitude >= 0.0 && magnitude <= 10.0)) throw ConfigError("augment.magnitude must be in [0,10]");
  }
};

// Candidate operations a strong policy samples from.
inline std::vector<StrongOp> strong_op_list(const AugmentPolicy& policy) {
  std::vector<StrongOp> ops{StrongOp::Brightness, StrongOp::Contrast, StrongOp::Gamma,
                            StrongOp::Blur,       StrongOp::Sharpen,  StrongOp::Cutout};
  if (!policy.detector_use) ops.push_back(StrongOp::Translate);
  return ops;
}

namespace detail {

inline std::vector<double> to_real(const Image& img) {
  return {img.pixels().begin(), img.pixels().end()};
}

inline Image from_real(const std::vector<double>& px, int w, int h) {
  Image out(w, h);
  auto dst = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) dst[i] = clamp_u8(px[i]);
  return out;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= s;
  return k;
}

// Separable convolution with clamp-to-edge borders.
inline std::vector<double> separable_filter(const std::vector<double>& px, int w, int h, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(px.size()), out(px.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * px[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[y * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      out[y * w + x] = s;
    }
  return out;
}

}  // namespace detail

inline Image add_gaussian_noise(const Image& img, double sigma, Rng& rng) {
  if (sigma <= 0.0) return img;
  Image out = img;
  for (auto& p : out.pixels()) p = clamp_u8(p + rng.normal(0.0, sigma));
  return out;
}

inline Image flip_horizontal(const Image& img) {
  Image out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.at(img.width() - 1 - x, y) = img.at(x, y);
  return out;
}

inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  return detail::from_real(detail::separable_filter(detail::to_real(img), img.width(), img.height(),
                                                    detail::gaussian_kernel(sigma)),
                           img.width(), img.height());
}

// Fills the half-open rectangle [x0,x1)x[y0,y1) with the rounded image mean.
inline Image apply_cutout(const Image& img, int x0, int y0, int x1, int y1) {
  Image out = img;
  const auto fill = clamp_u8(img.mean());
  for (int y = std::max(0, y0); y < std::min(img.height(), y1); ++y)
    for (int x = std::max(0, x0); x < std::min(img.width(), x1); ++x) out.at(x, y) = fill;
  return out;
}

// Applies one strong op at fraction f in [0,1] of its full range.
inline Image apply_strong_op(const Image& img, StrongOp op, double f, Rng& rng) {
  const int w = img.width(), h = img.height();
  const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
  switch (op) {
    case StrongOp::Brightness: {
      auto px = detail::to_real(img);
      for (auto& v : px) v += sign * 60.0 * f;
      return detail::from_real(px, w, h);
    }
    case StrongOp::Contrast: {
      auto px = detail::to_real(img);
      const double mean = img.mean(), factor = 1.0 + sign * 0.6 * f;
      for (auto& v : px) v = mean + factor * (v - mean);
      return detail::from_real(px, w, h);
    }
    case StrongOp::Gamma: {
      auto px = detail::to_real(img);
      const double gamma = std::exp(sign * std::log(2.0) * f);
      for (auto& v : px) v = 255.0 * std::pow(v / 255.0, gamma);
      return detail::from_real(px, w, h);
    }
    case StrongOp::Blur:
      return gaussian_blur(img, 2.0 * f);
    case StrongOp::Sharpen: {
      if (f <= 0.0) return img;
      auto px = detail::to_real(img);
      const auto smooth = detail::separable_filter(px, w, h, {1.0 / 3, 1.0 / 3, 1.0 / 3});
      for (std::size_t i = 0; i < px.size(); ++i) px[i] += 2.0 * f * (px[i] - smooth[i]);
      return detail::from_real(px, w, h);
    }
    case StrongOp::Cutout: {
      const int side = static_cast<int>(std::lround(0.4 * f * std::min(w, h)));
      if (side <= 0) return img;
      const int x0 = static_cast<int>(rng.uniform_int(0, std::max(0, w - side)));
      const int y0 = static_cast<int>(rng.uniform_int(0, std::max(0, h - side)));
      return apply_cutout(img, x0, y0, x0 + side, y0 + side);
    }
    case StrongOp::Translate: {
      const int max_shift = static_cast<int>(std::lround(0.15 * f * std::min(w, h)));
      if (max_shift <= 0) return img;
      const int dx = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
      const int dy = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
      Image out(w, h);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (img.contains(x - dx, y - dy)) out.at(x, y) = img.at(x - dx, y - dy);
      return out;
    }
  }
  return img;
}

inline Image augment_weak(const Image& img, const AugmentPolicy& policy, std::uint64_t seed) {
  Rng rng(seed);
  switch (policy.kind) {
    case AugmentKind::WeakDetector:
      return add_gaussian_noise(img, policy.noise_sigma, rng);
    case AugmentKind::WeakClassifier:
      return rng.bernoulli(policy.flip_probability) ? flip_horizontal(img) : img;
    case AugmentKind::Strong:
      break;
  }
  throw ContractError("augment_weak called with a strong policy");
}

// RandAugment-style: op_count ops drawn with replacement, each at a magnitude
// drawn uniformly from [0, magnitude].
inline Image augment_strong(const Image& img, const AugmentPolicy& policy, std::uint64_t seed) {
  if (policy.kind != AugmentKind::Strong) throw ContractError("augment_strong called with a weak policy");
  Rng rng(seed);
  const auto ops = strong_op_list(policy);
  Image out = img;
  for (int i = 0; i < policy.op_count; ++i) {
    const auto op = ops[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(ops.size()) - 1))];
    const double f = rng.uniform() * policy.magnitude / 10.0;
    out = apply_strong_op(out, op, f, rng);
  }
  return out;
}

}  // namespace usspine
