#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "usspine/ssl_classifier.hpp"

using namespace usspine;

namespace {

std::vector<Probs> confident(int pos, int neg, int unsure = 0) {
  std::vector<Probs> v;
  for (int i = 0; i < pos; ++i) v.push_back({0.01, 0.99});
  for (int i = 0; i < neg; ++i) v.push_back({0.98, 0.02});
  for (int i = 0; i < unsure; ++i) v.push_back({0.45, 0.55});
  return v;
}

nn::ClassifierArch small_arch() {
  nn::ClassifierArch a;
  a.in_width = 16;
  a.in_height = 16;
  a.pre_pool = 1;
  a.widths = {4, 6};
  return a;
}

Image random_patch(std::mt19937_64& eng) {
  Image img(16, 16);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(eng() & 0xff);
  return img;
}

ClassifierBatch random_batch(std::mt19937_64& eng, int n, int mu) {
  ClassifierBatch b;
  for (int k = 0; k < n; ++k) b.labeled.emplace_back(random_patch(eng), k % 2);
  for (int k = 0; k < n * mu; ++k) b.unlabeled.push_back(random_patch(eng));
  return b;
}

}  // namespace

TEST(ClassifierLoss, PerfectPrediction) {
  EXPECT_NEAR(classifier_supervised_loss({{0.0, 1.0}}, {1}), 0.0, 1e-12);
  EXPECT_NEAR(classifier_supervised_loss({{1.0, 0.0}}, {1}), -std::log(kProbabilityFloor), 1e-9);
}

TEST(ClassifierLoss, UniformIsLn2) {
  EXPECT_NEAR(classifier_supervised_loss({{0.5, 0.5}, {0.5, 0.5}}, {0, 1}), std::numbers::ln2, 1e-12);
}

TEST(ClassifierLoss, MatchesReference) {
  std::mt19937_64 eng(2);
  std::uniform_real_distribution<double> u(0.001, 0.999);
  std::vector<Probs> p;
  std::vector<int> y;
  double ref = 0;
  for (int k = 0; k < 50; ++k) {
    const double r = u(eng);
    p.push_back({1 - r, r});
    y.push_back(static_cast<int>(eng() & 1));
    ref -= std::log(y.back() ? r : 1 - r) / 50.0;
  }
  EXPECT_NEAR(classifier_supervised_loss(p, y), ref, 1e-9);
  EXPECT_THROW(classifier_supervised_loss(p, {1}), ShapeError);
}

TEST(Rebalance, KeepsMinorityCount) {
  const auto m = rebalance_mask(confident(7, 3), 0.95, true, 1);
  EXPECT_EQ(m.n, 3);
  EXPECT_EQ(m.active(), 6);
  EXPECT_EQ(m.active(0), 3);
  EXPECT_EQ(m.active(1), 3);
}

TEST(Rebalance, EmptyMinorityMasksEverything) {
  const auto m = rebalance_mask(confident(6, 0, 2), 0.95, true, 1);
  EXPECT_EQ(m.n, 0);
  EXPECT_EQ(m.active(), 0);
  EXPECT_EQ(masked_cross_entropy(confident(6, 0, 2), m), 0.0);
}

TEST(Rebalance, BalancedInputUnchanged) {
  const auto in = confident(5, 5, 3);
  const auto thresholded = rebalance_mask(in, 0.95, false, 1);
  const auto balanced = rebalance_mask(in, 0.95, true, 1);
  EXPECT_EQ(thresholded.m, balanced.m);
  EXPECT_EQ(balanced.active(), 10);
}

TEST(Rebalance, WeakViewDrivesLabels) {
  const auto m = rebalance_mask(confident(3, 3), 0.95, true, 1);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(m.z[k], k < 3 ? 1 : 0);
}

TEST(Rebalance, BalanceProperty) {
  std::mt19937_64 eng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 1 + static_cast<int>(eng() % 64);
    std::vector<Probs> c;
    for (int k = 0; k < n; ++k) {
      const double r = u(eng) < 0.8 ? (u(eng) < 0.5 ? u(eng) * 0.05 : 1 - u(eng) * 0.05) : u(eng);
      c.push_back({1 - r, r});
    }
    const double tau = 0.5 + 0.5 * u(eng);
    const auto m = rebalance_mask(c, tau, true, eng());
    const auto t = rebalance_mask(c, tau, false, 0);
    ASSERT_EQ(m.active(0), m.active(1));
    ASSERT_EQ(m.active(0), std::min(t.active(0), t.active(1)));
    for (int k = 0; k < n; ++k) ASSERT_TRUE(!m.m[k] || t.m[k]);
  }
}

TEST(Rebalance, SeededSelection) {
  const auto in = confident(20, 4);
  EXPECT_EQ(rebalance_mask(in, 0.9, true, 5).m, rebalance_mask(in, 0.9, true, 5).m);
}

TEST(UnsupervisedLoss, AllMaskedIsZero) {
  MaskArray m;
  m.m.assign(4, false);
  m.z.assign(4, 1);
  EXPECT_EQ(masked_cross_entropy(confident(2, 2), m), 0.0);
}

TEST(UnsupervisedLoss, PerfectConsistency) {
  MaskArray m;
  m.m = {true};
  m.z = {1};
  EXPECT_NEAR(masked_cross_entropy({{0.0, 1.0}}, m), 0.0, 1e-12);
}

// Sum over active entries of -log q(z), divided by the full batch of 4.
TEST(UnsupervisedLoss, HandBatch) {
  MaskArray m;
  m.m = {true, false, true, true};
  m.z = {1, 1, 0, 1};
  const std::vector<Probs> q = {{0.2, 0.8}, {0.5, 0.5}, {0.9, 0.1}, {0.6, 0.4}};
  const double want = (-std::log(0.8) - std::log(0.9) - std::log(0.4)) / 4.0;
  EXPECT_NEAR(masked_cross_entropy(q, m), want, 1e-12);
}

TEST(ClassifierStep, ReportInvariants) {
  std::mt19937_64 eng(3);
  nn::ClassifierNet<float> net(small_arch());
  net.init(1);
  nn::OptimizerState opt(nn::OptimizerConfig::classifier_default(), net.param_count());
  ClassifierSslConfig cfg;
  cfg.labeled_batch = 4;
  cfg.mu = 3;
  cfg.lambda_u = 0.5;
  cfg.tau = 0.5;
  for (int step = 0; step < 10; ++step) {
    const auto r = classifier_train_step(net, opt, random_batch(eng, 4, 3), cfg, step);
    EXPECT_NEAR(r.l_total - (r.l_sup + cfg.lambda_u * r.l_unsup), 0.0, 1e-9);
    EXPECT_EQ(r.active_real, r.active_fake);
    EXPECT_EQ(r.active_real, r.n);
  }
}

TEST(ClassifierStep, NoUnlabeledIsSupervised) {
  std::mt19937_64 eng(4);
  nn::ClassifierNet<float> net(small_arch());
  net.init(2);
  nn::OptimizerState opt(nn::OptimizerConfig::classifier_default(), net.param_count());
  ClassifierSslConfig cfg;
  cfg.labeled_batch = 4;
  cfg.mu = 0;
  const auto r = classifier_train_step(net, opt, random_batch(eng, 4, 0), cfg, 1);
  EXPECT_EQ(r.l_unsup, 0.0);
  EXPECT_EQ(r.l_total, r.l_sup);
}

TEST(ClassifierStep, ZeroWeightMatchesSupervisedUpdate) {
  std::mt19937_64 eng(5);
  nn::ClassifierNet<float> a(small_arch());
  a.init(3);
  auto b = a;
  nn::OptimizerState oa(nn::OptimizerConfig::classifier_default(), a.param_count()), ob = oa;
  ClassifierSslConfig cfg;
  cfg.labeled_batch = 4;
  cfg.mu = 3;
  cfg.tau = 0.5;
  cfg.rebalance = false;
  cfg.lambda_u = 0.0;
  auto batch = random_batch(eng, 4, 3);
  const auto r = classifier_train_step(a, oa, batch, cfg, 7);
  EXPECT_GT(r.l_unsup, 0.0);
  batch.unlabeled.clear();
  cfg.mu = 0;
  classifier_train_step(b, ob, batch, cfg, 7);
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
}

TEST(ClassifierConfig, Validation) {
  ClassifierSslConfig c;
  c.tau = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.weak = AugmentPolicy::weak_detector();
  EXPECT_THROW(c.validate(), ConfigError);
}
