#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "usspine/augment.hpp"

using namespace usspine;

namespace {

Image gradient_image(int w = 40, int h = 30) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(x, y) = static_cast<std::uint8_t>((7 * x + 3 * y) % 256);
  return img;
}

Image noisy_image(std::uint64_t seed) {
  std::mt19937 eng(static_cast<unsigned>(seed));
  Image img(32, 24);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(eng() & 0xff);
  return img;
}

}  // namespace

TEST(AugmentWeak, ZeroNoiseIsIdentity) {
  const auto img = gradient_image();
  EXPECT_EQ(augment_weak(img, AugmentPolicy::weak_detector(0.0), 5), img);
}

TEST(AugmentWeak, Deterministic) {
  const auto img = gradient_image();
  EXPECT_EQ(augment_weak(img, AugmentPolicy::weak_detector(), 9), augment_weak(img, AugmentPolicy::weak_detector(), 9));
  EXPECT_NE(augment_weak(img, AugmentPolicy::weak_detector(), 9), augment_weak(img, AugmentPolicy::weak_detector(), 10));
}

TEST(AugmentWeak, FlipMapsColumns) {
  const auto img = gradient_image();
  auto policy = AugmentPolicy::weak_classifier();
  policy.flip_probability = 1.0;
  const auto out = augment_weak(img, policy, 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) ASSERT_EQ(out.at(img.width() - 1 - x, y), img.at(x, y));
  policy.flip_probability = 0.0;
  EXPECT_EQ(augment_weak(img, policy, 1), img);
}

TEST(AugmentWeak, RejectsStrongPolicy) {
  EXPECT_THROW(augment_weak(gradient_image(), AugmentPolicy::strong(true), 1), ContractError);
  EXPECT_THROW(augment_strong(gradient_image(), AugmentPolicy::weak_detector(), 1), ContractError);
}

TEST(AugmentStrong, ZeroMagnitudeIsIdentity) {
  const auto img = gradient_image();
  for (bool det : {true, false})
    for (std::uint64_t seed = 0; seed < 50; ++seed) ASSERT_EQ(augment_strong(img, AugmentPolicy::strong(det, 3, 0.0), seed), img);
}

TEST(AugmentStrong, Deterministic) {
  const auto img = noisy_image(2);
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    EXPECT_EQ(augment_strong(img, AugmentPolicy::strong(false), seed), augment_strong(img, AugmentPolicy::strong(false), seed));
}

TEST(AugmentStrong, CutoutFillsExactlyTheRectangleWithTheMean) {
  const auto img = noisy_image(3);
  const auto out = apply_cutout(img, 10, 10, 20, 20);
  const auto fill = clamp_u8(img.mean());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const bool inside = x >= 10 && x < 20 && y >= 10 && y < 20;
      ASSERT_EQ(out.at(x, y), inside ? fill : img.at(x, y)) << x << "," << y;
    }
}

TEST(AugmentStrong, DetectorPolicyHasNoGeometricOps) {
  for (auto op : strong_op_list(AugmentPolicy::strong(true))) EXPECT_FALSE(is_spatial(op)) << op_name(op);
  const auto cls = strong_op_list(AugmentPolicy::strong(false));
  EXPECT_TRUE(std::any_of(cls.begin(), cls.end(), is_spatial));
}

TEST(AugmentStrong, OutputsKeepShape) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto img = noisy_image(seed);
    const auto out = augment_strong(img, AugmentPolicy::strong(seed % 2 == 0, 3, 10.0), seed);
    ASSERT_EQ(out.width(), img.width());
    ASSERT_EQ(out.height(), img.height());
    const auto w = augment_weak(img, AugmentPolicy::weak_detector(40.0), seed);
    ASSERT_EQ(w.width(), img.width());
  }
}

// A bright dot must stay where it is under every intensity-only op.
TEST(AugmentStrong, DetectorOpsKeepPixelLocations) {
  Image img(30, 30, 40);
  img.at(12, 17) = 250;
  for (auto op : strong_op_list(AugmentPolicy::strong(true))) {
    if (op == StrongOp::Cutout) continue;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      const auto out = apply_strong_op(img, op, 0.7, rng);
      std::size_t best = 0;
      const auto px = out.pixels();
      for (std::size_t i = 1; i < px.size(); ++i)
        if (px[i] > px[best]) best = i;
      ASSERT_EQ(best, 17u * 30u + 12u) << op_name(op);
    }
  }
}

TEST(AugmentPolicy, Validation) {
  auto p = AugmentPolicy::strong(true);
  p.magnitude = 11;
  EXPECT_THROW(p.validate(), ConfigError);
  p = AugmentPolicy::weak_classifier();
  p.flip_probability = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
}
