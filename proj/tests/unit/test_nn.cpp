#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "usspine/nn/checkpoint.hpp"
#include "usspine/ssl_classifier.hpp"
#include "usspine/ssl_detector.hpp"

using namespace usspine;

namespace {

nn::DetectorArch tiny_detector_arch() {
  nn::DetectorArch a;
  a.in_width = 8;
  a.in_height = 8;
  a.d_ds = 2;
  a.stem = 2;
  a.widths = {2, 3};
  a.head = 2;
  return a;
}

nn::ClassifierArch tiny_classifier_arch() {
  nn::ClassifierArch a;
  a.in_width = 8;
  a.in_height = 8;
  a.pre_pool = 1;
  a.widths = {3, 4};
  return a;
}

nn::Tensor<double> random_tensor(std::mt19937_64& eng, int c, int h, int w) {
  std::uniform_real_distribution<double> u(0, 1);
  nn::Tensor<double> t(c, h, w);
  for (auto& v : t.data) v = u(eng);
  return t;
}

Image random_image(std::mt19937_64& eng, int w, int h) {
  Image img(w, h);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(eng() & 0xff);
  return img;
}

// Two labeled samples plus three unlabeled ones: accepted with one channel
// masked out, prior-rejected, and accepted with every channel.
PreparedDetectorBatch<double> detector_batch(std::mt19937_64& eng) {
  PreparedDetectorBatch<double> b;
  for (int k = 0; k < 2; ++k) {
    b.labeled_inputs.push_back(random_tensor(eng, 1, 8, 8));
    b.labeled_targets.push_back(random_tensor(eng, 5, 4, 4));
  }
  for (int k = 0; k < 3; ++k) {
    PreparedDetectorBatch<double>::Unlabeled u;
    u.status = k == 1 ? PseudoStatus::PriorReject : PseudoStatus::Accepted;
    u.target = random_tensor(eng, 5, 4, 4);
    u.channel_mask = {true, true, k != 0, true, true};
    for (int j = 0; j < 3; ++j) u.views.push_back(random_tensor(eng, 1, 8, 8));
    b.unlabeled.push_back(u);
  }
  return b;
}

}  // namespace

TEST(DetectorNet, OutputShapeAndRange) {
  nn::DetectorArch a;
  a.in_width = 64;
  a.in_height = 48;
  nn::DetectorNet<float> net(a);
  net.init(3);
  std::mt19937_64 eng(1);
  const auto img = random_image(eng, 64, 48);
  const auto h = net.forward(img);
  EXPECT_EQ(h.width(), 16);
  EXPECT_EQ(h.height(), 12);
  for (float v : h.values()) {
    ASSERT_TRUE(std::isfinite(v));
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
  EXPECT_EQ(net.forward(img), h);
  EXPECT_THROW(net.forward(Image(60, 48)), ShapeError);
  EXPECT_LE(net.param_count(), 1000000u);
}

TEST(ClassifierNet, ProbabilitiesSumToOne) {
  nn::ClassifierArch a;
  a.in_width = 40;
  a.in_height = 50;
  nn::ClassifierNet<float> net(a);
  net.init(5);
  std::mt19937_64 eng(2);
  for (int i = 0; i < 20; ++i) {
    const auto img = random_image(eng, 40, 50);
    const auto p = net.forward(img);
    EXPECT_GE(p[0], 0.0);
    EXPECT_GE(p[1], 0.0);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-6);
    EXPECT_EQ(net.forward(img), p);
  }
  EXPECT_THROW(net.forward(Image(41, 50)), ShapeError);
}

TEST(Architecture, DescriptorRoundTrip) {
  const auto d = tiny_detector_arch();
  EXPECT_EQ(nn::DetectorArch::parse(d.descriptor()), d);
  const auto c = tiny_classifier_arch();
  EXPECT_EQ(nn::ClassifierArch::parse(c.descriptor()), c);
  EXPECT_THROW(nn::DetectorArch::parse(c.descriptor()), FormatError);
  auto bad = d;
  bad.d_ds = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
  oracle::TempDir dir("ckpt");
  nn::DetectorArch a;
  a.in_width = 32;
  a.in_height = 32;
  nn::DetectorNet<float> det(a);
  det.init(9);
  nn::OptimizerState opt(nn::OptimizerConfig::detector_default(), det.param_count());
  opt.config.schedule.warmup_steps = 17;
  opt.step = 12;
  opt.epoch = 3;
  opt.m[4] = 0.5;
  opt.v[7] = 0.25;
  nn::save_checkpoint(nn::make_checkpoint(det, opt), dir / "d.ckpt");
  const auto ck = nn::load_checkpoint(dir / "d.ckpt");
  const auto det2 = nn::detector_from_checkpoint(ck);
  std::mt19937_64 eng(4);
  const auto img = random_image(eng, 32, 32);
  EXPECT_EQ(det2.forward(img), det.forward(img));
  EXPECT_EQ(ck.optimizer, opt);

  nn::ClassifierNet<float> cls(tiny_classifier_arch());
  cls.init(2);
  nn::OptimizerState copt(nn::OptimizerConfig::classifier_default(), cls.param_count());
  nn::save_checkpoint(nn::make_checkpoint(cls, copt), dir / "c.ckpt");
  const auto cls2 = nn::classifier_from_checkpoint(nn::load_checkpoint(dir / "c.ckpt"));
  const auto patch = random_image(eng, 8, 8);
  EXPECT_EQ(cls2.forward(patch), cls.forward(patch));
  EXPECT_THROW(nn::detector_from_checkpoint(nn::load_checkpoint(dir / "c.ckpt")), FormatError);
}

TEST(Checkpoint, CorruptBytesRejected) {
  nn::ClassifierNet<float> cls(tiny_classifier_arch());
  auto bytes = nn::encode_checkpoint(nn::make_checkpoint(cls, nn::OptimizerState(nn::OptimizerConfig::classifier_default(), cls.param_count())));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(nn::decode_checkpoint(truncated), CorruptionError);
  bytes.push_back(0);
  EXPECT_THROW(nn::decode_checkpoint(bytes), CorruptionError);
}

TEST(Optimizer, ScheduleDecay) {
  nn::LrSchedule s{1e-3, 0.1, {60}, 0};
  EXPECT_DOUBLE_EQ(s.lr_at(59), 1e-3);
  EXPECT_NEAR(s.lr_at(61), 1e-4, 1e-18);
  const auto d = nn::OptimizerConfig::detector_default().schedule;
  EXPECT_NEAR(d.lr_at(150), 1e-5, 1e-18);
  EXPECT_EQ(s.scaled(0.5).milestones, std::vector<int>{30});
}

TEST(Optimizer, WarmupRamp) {
  nn::OptimizerConfig c = nn::OptimizerConfig::detector_default();
  c.schedule.warmup_steps = 4;
  nn::OptimizerState st(c, 1);
  std::vector<double> p{0.0}, g{0.0};
  std::vector<double> lrs;
  for (int i = 0; i < 6; ++i) {
    lrs.push_back(st.learning_rate());
    nn::optimizer_step(st, std::span<double>(p), std::span<const double>(g));
  }
  EXPECT_DOUBLE_EQ(lrs[0], 0.25e-3);
  EXPECT_DOUBLE_EQ(lrs[2], 0.75e-3);
  EXPECT_DOUBLE_EQ(lrs[3], 1e-3);
  EXPECT_DOUBLE_EQ(lrs[5], 1e-3);
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
  for (auto cfg : {nn::OptimizerConfig::detector_default(), nn::OptimizerConfig::classifier_default()}) {
    cfg.weight_decay = 0.0;
    nn::OptimizerState st(cfg, 3);
    std::vector<float> p{1.0f, -2.0f, 0.5f}, g(3, 0.0f);
    const auto before = p;
    for (int i = 0; i < 5; ++i) nn::optimizer_step(st, std::span<float>(p), std::span<const float>(g));
    EXPECT_EQ(p, before);
  }
}

TEST(Optimizer, NonFiniteGradient) {
  nn::OptimizerState st(nn::OptimizerConfig::detector_default(), 2);
  std::vector<float> p{1.0f, 2.0f}, g{0.0f, std::numeric_limits<float>::quiet_NaN()};
  EXPECT_THROW(nn::optimizer_step(st, std::span<float>(p), std::span<const float>(g)), TrainingError);
  std::vector<float> short_g{0.0f};
  EXPECT_THROW(nn::optimizer_step(st, std::span<float>(p), std::span<const float>(short_g)), ShapeError);
}

// f(x) = 1/2 sum a_i x_i^2 with plain gradient descent.
TEST(Optimizer, QuadraticToyConverges) {
  nn::OptimizerConfig c;
  c.kind = nn::OptimizerKind::SgdMomentum;
  c.momentum = 0.0;
  c.schedule = {0.4, 0.1, {}, 0};
  const std::vector<double> a{0.5, 1.0, 1.5, 2.0};
  std::vector<double> x{3.0, -1.0, 2.0, 0.5};
  nn::OptimizerState st(c, x.size());
  auto f = [&] {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += 0.5 * a[i] * x[i] * x[i];
    return s;
  };
  const double f0 = f();
  double prev = f0;
  for (int step = 0; step < 100; ++step) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = a[i] * x[i];
    nn::optimizer_step(st, std::span<double>(x), std::span<const double>(g));
    const double now = f();
    ASSERT_LT(now, prev);
    prev = now;
  }
  EXPECT_LT(prev, 1e-4 * f0);
}

TEST(Optimizer, AdamDecreasesQuadratic) {
  nn::OptimizerConfig c = nn::OptimizerConfig::detector_default();
  c.schedule = {0.05, 0.1, {}, 0};
  std::vector<double> x{3.0, -1.0};
  nn::OptimizerState st(c, 2);
  for (int step = 0; step < 300; ++step) {
    std::vector<double> g{x[0], 2 * x[1]};
    nn::optimizer_step(st, std::span<double>(x), std::span<const double>(g));
  }
  EXPECT_LT(std::abs(x[0]) + std::abs(x[1]), 0.05);
}

TEST(GradientCheck, DetectorCombinedLoss) {
  nn::DetectorNet<double> net(tiny_detector_arch());
  ASSERT_LE(net.param_count(), 500u);
  net.init(1, 0.0);
  std::mt19937_64 eng(4);
  const auto batch = detector_batch(eng);
  const double lambda = 0.7;
  std::vector<double> grads(net.param_count(), 0.0);
  detector_loss_and_grad(net, batch, lambda, std::span<double>(grads));
  std::vector<double> scratch(net.param_count());
  const auto r = oracle::check_gradient(net.params(), grads, [&] {
    return detector_loss_and_grad(net, batch, lambda, std::span<double>(scratch)).l_total;
  });
  EXPECT_GE(r.pass_fraction(), 0.95) << "worst relative error " << r.worst;
}

TEST(GradientCheck, ClassifierCombinedLoss) {
  nn::ClassifierNet<double> net(tiny_classifier_arch());
  ASSERT_LE(net.param_count(), 500u);
  net.init(2);
  std::mt19937_64 eng(5);
  PreparedClassifierBatch<double> b;
  for (int k = 0; k < 4; ++k) {
    b.labeled_inputs.push_back(random_tensor(eng, 1, 8, 8));
    b.labels.push_back(k % 2);
  }
  std::vector<Probs> conf;
  for (int k = 0; k < 12; ++k) {
    b.strong_inputs.push_back(random_tensor(eng, 1, 8, 8));
    const double p = k < 8 ? 0.95 : (k < 10 ? 0.02 : 0.6);
    conf.push_back({1 - p, p});
  }
  b.mask = rebalance_mask(conf, 0.9, true, 3);
  ASSERT_EQ(b.mask.active(0), 2);
  ASSERT_EQ(b.mask.active(1), 2);
  const double lambda = 1.3;
  std::vector<double> grads(net.param_count(), 0.0);
  classifier_loss_and_grad(net, b, lambda, std::span<double>(grads));
  std::vector<double> scratch(net.param_count());
  const auto r = oracle::check_gradient(net.params(), grads, [&] {
    return classifier_loss_and_grad(net, b, lambda, std::span<double>(scratch)).l_total;
  });
  EXPECT_GE(r.pass_fraction(), 0.95) << "worst relative error " << r.worst;
}
