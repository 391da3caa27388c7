#include <gtest/gtest.h>

#include <random>

#include "usspine/metrics.hpp"

using namespace usspine;

namespace {

SliceAnnotation truth_at(double x, std::array<bool, 3> labels) {
  SliceAnnotation a;
  for (int i = 0; i < 5; ++i) a.landmarks[i] = {x + 10 * i, 50.0 + i};
  a.labels = labels;
  return a;
}

DetectionResult prediction(const SliceAnnotation& a, std::array<bool, 3> labels, Point2 shift = {0, 0}) {
  DetectionResult r;
  for (int i = 0; i < 5; ++i) r.landmarks[i] = a.landmarks[i] + shift;
  r.predicted_labels = labels;
  for (int s = 0; s < 3; ++s) r.confidences[s] = labels[s] ? 0.9 : 0.1;
  return r;
}

}  // namespace

TEST(Pck, IdenticalIsHundred) {
  std::vector<SliceAnnotation> t{truth_at(10, {true, false, true}), truth_at(30, {false, false, false})};
  std::vector<LandmarkSet> p{t[0].landmarks, t[1].landmarks};
  EXPECT_DOUBLE_EQ(compute_pck(p, t), 100.0);
}

TEST(Pck, TwentyPixelShiftSplitsByLabel) {
  std::vector<SliceAnnotation> t{truth_at(10, {true, true, true}), truth_at(30, {false, false, false}),
                                 truth_at(50, {false, true, true})};
  std::vector<LandmarkSet> p;
  for (const auto& a : t) p.push_back(prediction(a, {}, {12, 16}).landmarks);
  // 5 real misses, 5 fake hits, then SP fake (hit) with four real lamina misses.
  EXPECT_DOUBLE_EQ(compute_pck(p, t), 100.0 * 6 / 15);
  EXPECT_DOUBLE_EQ(compute_pck({p[0]}, {t[0]}), 0.0);
  EXPECT_DOUBLE_EQ(compute_pck({p[1]}, {t[1]}), 100.0);
  EXPECT_THROW(compute_pck({p[0]}, t), ShapeError);
}

TEST(Pck, MatchesBruteForceAndIsTranslationInvariant) {
  std::mt19937_64 eng(6);
  std::uniform_real_distribution<double> c(0, 200), d(-25, 25);
  std::vector<SliceAnnotation> t;
  std::vector<LandmarkSet> p;
  for (int k = 0; k < 300; ++k) {
    SliceAnnotation a;
    LandmarkSet l;
    for (int i = 0; i < 5; ++i) {
      a.landmarks[i] = {c(eng), c(eng)};
      l[i] = {a.landmarks[i].x + d(eng), a.landmarks[i].y + d(eng)};
    }
    a.labels = {(eng() & 1) == 1, (eng() & 1) == 1, (eng() & 1) == 1};
    t.push_back(a);
    p.push_back(l);
  }
  int hits = 0;
  for (std::size_t k = 0; k < t.size(); ++k)
    for (int i = 0; i < 5; ++i) {
      const int s = i == 2 ? 0 : (i < 2 ? 1 : 2);
      const double dx = p[k][i].x - t[k].landmarks[i].x, dy = p[k][i].y - t[k].landmarks[i].y;
      hits += std::sqrt(dx * dx + dy * dy) <= (t[k].labels[s] ? 15.0 : 30.0);
    }
  EXPECT_NEAR(compute_pck(p, t), 100.0 * hits / (5.0 * t.size()), 1e-12);

  auto pt = p;
  auto tt = t;
  for (auto& l : pt)
    for (auto& q : l.points) q = q + Point2{37.5, -12.25};
  for (auto& a : tt)
    for (auto& q : a.landmarks.points) q = q + Point2{37.5, -12.25};
  EXPECT_NEAR(compute_pck(pt, tt), compute_pck(p, t), 1e-12);
}

// TP=3, FP=1, FN=2, TN=4 on the SP head.
TEST(DetectionMetrics, HandComputedConfusion) {
  std::vector<SliceAnnotation> t;
  std::vector<DetectionResult> r;
  auto add = [&](bool real, bool pred) {
    t.push_back(truth_at(10.0 * t.size(), {real, true, true}));
    r.push_back(prediction(t.back(), {pred, true, true}));
  };
  for (int i = 0; i < 3; ++i) add(true, true);
  add(false, true);
  for (int i = 0; i < 2; ++i) add(true, false);
  for (int i = 0; i < 4; ++i) add(false, false);
  const auto m = compute_detection_metrics(r, t);
  const auto& c = m[Structure::SpinousProcess];
  EXPECT_EQ(c, (ConfusionCounts{3, 1, 2, 4}));
  EXPECT_EQ(c.precision(), 0.75);
  EXPECT_EQ(c.recall(), 0.6);
  EXPECT_EQ(c.accuracy(), 0.7);
  EXPECT_NEAR(c.f1(), 2.0 / 3.0, 1e-15);
}

TEST(DetectionMetrics, PositionalMissCountsTwice) {
  const auto t = truth_at(10, {true, true, true});
  const auto r = prediction(t, {true, true, true}, {0, 16});
  const auto m = compute_detection_metrics({r}, {t});
  for (int s = 0; s < 3; ++s) EXPECT_EQ(m.per_structure[s], (ConfusionCounts{0, 1, 1, 0}));
}

TEST(DetectionMetrics, LaminaErrorIsWorseEndpoint) {
  auto t = truth_at(10, {true, true, true});
  auto r = prediction(t, {true, true, true});
  r.landmarks[0].x += 16;  // one endpoint of the left lamina off
  const auto m = compute_detection_metrics({r}, {t});
  EXPECT_EQ(m[Structure::LeftLamina].tp, 0);
  EXPECT_EQ(m[Structure::RightLamina].tp, 1);
  EXPECT_EQ(m[Structure::SpinousProcess].tp, 1);
  EXPECT_EQ(m.laminae().tp, 1);
}

TEST(DetectionMetrics, PerfectAndAlwaysFake) {
  std::vector<SliceAnnotation> t;
  std::vector<DetectionResult> perfect, fake;
  for (int k = 0; k < 12; ++k) {
    t.push_back(truth_at(k, {k % 3 != 0, k % 4 != 0, true}));
    perfect.push_back(prediction(t.back(), t.back().labels));
    fake.push_back(prediction(t.back(), {false, false, false}));
  }
  const auto mp = compute_detection_metrics(perfect, t);
  for (const auto& c : mp.per_structure) {
    EXPECT_EQ(c.accuracy(), 1.0);
    EXPECT_EQ(c.recall(), 1.0);
    EXPECT_EQ(c.precision(), 1.0);
    EXPECT_EQ(c.f1(), 1.0);
  }
  const auto mf = compute_detection_metrics(fake, t);
  EXPECT_EQ(mf[Structure::SpinousProcess].recall(), 0.0);
  EXPECT_EQ(mf[Structure::SpinousProcess].tn, 4);
  EXPECT_EQ(mf[Structure::LeftLamina].tn, 3);
}

TEST(DetectionMetrics, CountsPartitionTruth) {
  std::mt19937_64 eng(9);
  std::uniform_real_distribution<double> d(-20, 20);
  std::vector<SliceAnnotation> t;
  std::vector<DetectionResult> r;
  for (int k = 0; k < 500; ++k) {
    t.push_back(truth_at(k % 100, {(eng() & 1) == 1, (eng() & 1) == 1, (eng() & 1) == 1}));
    r.push_back(prediction(t.back(), {(eng() & 1) == 1, (eng() & 1) == 1, (eng() & 1) == 1}, {d(eng), d(eng)}));
  }
  const auto m = compute_detection_metrics(r, t);
  for (int s = 0; s < 3; ++s) {
    long pos = 0, neg = 0, misses = 0;
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (!t[k].labels[s]) {
        ++neg;
        continue;
      }
      ++pos;
      if (r[k].predicted_labels[s] &&
          structure_error(r[k].landmarks, t[k].landmarks, static_cast<Structure>(s)) > kPckRealThreshold)
        ++misses;
    }
    const auto& c = m.per_structure[s];
    EXPECT_EQ(c.tp + c.fn, pos);
    EXPECT_EQ(c.tn + c.fp, neg + misses);
  }
}

TEST(DetectionMetrics, Formatting) {
  DetectionMetrics m;
  m.per_structure[0] = {3, 1, 2, 4};
  const auto csv = format_metrics_csv(m);
  EXPECT_EQ(csv.substr(0, kMetricsHeader.size()), kMetricsHeader);
  EXPECT_NE(csv.find("sp,70.0,75.0,60.0,66.7,3,1,2,4"), std::string::npos) << csv;
}
