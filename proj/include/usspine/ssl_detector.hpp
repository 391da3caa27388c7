#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "usspine/annotations.hpp"
#include "usspine/augment.hpp"
#include "usspine/heatmap.hpp"
#include "usspine/nn/detector_net.hpp"
#include "usspine/nn/optimizer.hpp"
#include "usspine/prior.hpp"
#include "usspine/rng.hpp"
#include "usspine/volume.hpp"

namespace usspine {

struct DetectorSslConfig {
  int labeled_batch = 8;  // N
  int mu = 3;             // unlabeled triples per labeled sample
  double lambda_u = 1.0;
  // Linear warm-up of lambda_u over the first steps of a training run; 0 = off.
  int lambda_ramp_steps = 0;
  double tau = 0.8;
  int stride = 1;             // s in (k-s, k, k+s)
  double heatmap_sigma = 2.0; // target Gaussian width, heatmap cells
  bool use_prior = true;
  // Off: the three strong views all come from u_k itself instead of its neighbours.
  bool use_consistency = true;
  PriorConfig prior;
  AugmentPolicy weak = AugmentPolicy::weak_detector();
  AugmentPolicy strong = AugmentPolicy::strong(true);

  void validate() const {
    if (labeled_batch < 1) throw ConfigError("detector.labeled_batch must be >= 1");
    if (mu < 0) throw ConfigError("detector.mu must be >= 0");
    if (!(lambda_u >= 0.0)) throw ConfigError("detector.lambda_u must be >= 0");
    if (lambda_ramp_steps < 0) throw ConfigError("detector.lambda_ramp_steps must be >= 0");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("detector.tau must be in (0,1]");
    if (stride < 1) throw ConfigError("detector.stride must be >= 1");
    if (!(heatmap_sigma > 0.0)) throw ConfigError("detector.heatmap_sigma must be positive");
    if (weak.kind != AugmentKind::WeakDetector) throw ConfigError("detector weak augmentation must be the noise policy");
    if (strong.kind != AugmentKind::Strong || !strong.detector_use)
      throw ConfigError("detector strong augmentation must be intensity-only");
    prior.validate();
    weak.validate();
    strong.validate();
  }
};

struct DetectorLossReport {
  double l_sup = 0.0;
  double l_unsup = 0.0;
  double l_total = 0.0;
  int pseudo_accept_count = 0;
  int prior_reject_count = 0;
  int threshold_reject_count = 0;
};

inline constexpr std::string_view kDetectorLogHeader =
    "step,l_sup,l_unsup,l_total,pseudo_accept,prior_reject,threshold_reject";

inline std::string detector_log_row(std::uint64_t step, const DetectorLossReport& r) {
  std::ostringstream os;
  os << step << ',' << format_number(r.l_sup) << ',' << format_number(r.l_unsup) << ',' << format_number(r.l_total)
     << ',' << r.pseudo_accept_count << ',' << r.prior_reject_count << ',' << r.threshold_reject_count;
  return os.str();
}

inline double mean_squared_difference(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

// (1/N) sum_k mean over all elements of (h_k - h^_k)^2.
inline double detector_supervised_loss(const std::vector<HeatmapSet>& predictions, const std::vector<HeatmapSet>& targets) {
  if (predictions.size() != targets.size()) throw ShapeError("prediction/target counts differ");
  if (predictions.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    if (!predictions[k].same_shape(targets[k])) throw ShapeError("prediction/target heatmap shapes differ");
    s += mean_squared_difference(predictions[k].values(), targets[k].values());
  }
  return s / static_cast<double>(predictions.size());
}

enum class PseudoStatus { Accepted, ThresholdReject, PriorReject };

struct PseudoLabel {
  PseudoStatus status = PseudoStatus::ThresholdReject;
  HeatmapSet heatmaps;
  std::optional<LandmarkSet> landmarks;  // set only when accepted

  bool accepted() const { return status == PseudoStatus::Accepted; }
};

// Threshold then prior gate on already-predicted maps. A null prior disables
// the anatomical check.
inline PseudoLabel screen_pseudo_label(HeatmapSet v, double tau, const PriorConfig* prior) {
  PseudoLabel p;
  const auto decoded = decode_thresholded(v, tau);
  p.heatmaps = std::move(v);
  if (!decoded) return p;
  if (prior && !validate_prior(*decoded, *prior).accepted) {
    p.status = PseudoStatus::PriorReject;
    return p;
  }
  p.status = PseudoStatus::Accepted;
  p.landmarks = decoded;
  return p;
}

template <typename T>
PseudoLabel make_pseudo_heatmaps(const nn::DetectorNet<T>& net, const Slice& u, double tau, const PriorConfig* prior,
                                 std::uint64_t seed, const AugmentPolicy& weak = AugmentPolicy::weak_detector()) {
  return screen_pseudo_label(net.forward(augment_weak(u, weak, seed)), tau, prior);
}

// Consistency term for one unlabeled sample before the 1/(mu N) normalisation:
// sum over views j and channels i of 1{max v^i >= tau} * mean_cells (v^i - v^_j^i)^2.
inline double consistency_term(const HeatmapSet& v, const std::vector<HeatmapSet>& views, double tau) {
  const auto maxima = channel_maxima(v);
  for (float m : maxima)
    if (m < tau) throw ContractError("consistency target must come from an accepted pseudo-label");
  double s = 0.0;
  for (const auto& view : views) {
    if (!view.same_shape(v)) throw ShapeError("consistency view shape differs from the pseudo-target");
    for (int i = 0; i < kNumLandmarks; ++i)
      if (maxima[i] >= tau) s += mean_squared_difference(v.channel(i), view.channel(i));
  }
  return s;
}

template <typename T>
double multislice_consistency_loss(const nn::DetectorNet<T>& net, const std::array<const Slice*, 3>& triple,
                                   const HeatmapSet& v, double tau, std::uint64_t seed,
                                   const AugmentPolicy& strong = AugmentPolicy::strong(true)) {
  std::vector<HeatmapSet> views;
  for (std::size_t j = 0; j < 3; ++j) views.push_back(net.forward(augment_strong(*triple[j], strong, derive_seed(seed, j))));
  return consistency_term(v, views, tau);
}

// Everything a step needs once augmentation and pseudo-labelling are done.
// Targets are constants for the gradient.
template <typename T>
struct PreparedDetectorBatch {
  struct Unlabeled {
    PseudoStatus status = PseudoStatus::ThresholdReject;
    nn::Tensor<T> target;
    std::array<bool, kNumLandmarks> channel_mask{};
    std::vector<nn::Tensor<T>> views;  // three strong views when accepted
  };
  std::vector<nn::Tensor<T>> labeled_inputs;
  std::vector<nn::Tensor<T>> labeled_targets;
  std::vector<Unlabeled> unlabeled;
};

template <typename T>
nn::Tensor<T> heatmap_tensor(const HeatmapSet& h) {
  nn::Tensor<T> t(kNumLandmarks, h.height(), h.width());
  const auto v = h.values();
  for (std::size_t i = 0; i < v.size(); ++i) t.data[i] = static_cast<T>(v[i]);
  return t;
}

struct DetectorBatch {
  std::vector<std::pair<const Slice*, HeatmapSet>> labeled;
  std::vector<std::array<const Slice*, 3>> unlabeled;  // (u-, u, u+)
};

template <typename T>
PreparedDetectorBatch<T> prepare_detector_batch(const nn::DetectorNet<T>& net, const DetectorBatch& batch,
                                                const DetectorSslConfig& cfg, std::uint64_t seed) {
  PreparedDetectorBatch<T> p;
  for (std::size_t k = 0; k < batch.labeled.size(); ++k) {
    // Labeled inputs see the weak augmentation too.
    p.labeled_inputs.push_back(nn::image_tensor<T>(augment_weak(*batch.labeled[k].first, cfg.weak, derive_seed(seed, 1, k))));
    p.labeled_targets.push_back(heatmap_tensor<T>(batch.labeled[k].second));
  }
  const PriorConfig* prior = cfg.use_prior ? &cfg.prior : nullptr;
  for (std::size_t k = 0; k < batch.unlabeled.size(); ++k) {
    const auto& tri = batch.unlabeled[k];
    typename PreparedDetectorBatch<T>::Unlabeled u;
    auto pseudo = make_pseudo_heatmaps(net, *tri[1], cfg.tau, prior, derive_seed(seed, 2, k), cfg.weak);
    u.status = pseudo.status;
    if (pseudo.accepted()) {
      const auto maxima = channel_maxima(pseudo.heatmaps);
      for (int i = 0; i < kNumLandmarks; ++i) u.channel_mask[i] = maxima[i] >= cfg.tau;
      u.target = heatmap_tensor<T>(pseudo.heatmaps);
      for (std::size_t j = 0; j < 3; ++j) {
        const Slice& src = cfg.use_consistency ? *tri[j] : *tri[1];
        u.views.push_back(nn::image_tensor<T>(augment_strong(src, cfg.strong, derive_seed(seed, 3, k, j))));
      }
    }
    p.unlabeled.push_back(std::move(u));
  }
  return p;
}

// L_det = L_sup + lambda_u * L_unsup and its parameter gradient (accumulated
// into `grads`).
template <typename T>
DetectorLossReport detector_loss_and_grad(const nn::DetectorNet<T>& net, const PreparedDetectorBatch<T>& b,
                                          double lambda_u, std::span<T> grads) {
  DetectorLossReport r;
  nn::DetectorCache<T> cache;
  const std::size_t n = b.labeled_inputs.size();
  if (n == 0) throw ContractError("detector batch needs at least one labeled sample");
  for (std::size_t k = 0; k < n; ++k) {
    net.forward(b.labeled_inputs[k], cache);
    const auto& t = b.labeled_targets[k];
    if (!t.same_shape(cache.out)) throw ShapeError("target heatmap shape does not match the detector output");
    nn::Tensor<T> g(t.c, t.h, t.w);
    double s = 0.0;
    const double scale = 2.0 / (static_cast<double>(t.size()) * n);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double d = static_cast<double>(cache.out.data[i]) - static_cast<double>(t.data[i]);
      s += d * d;
      g.data[i] = static_cast<T>(scale * d);
    }
    r.l_sup += s / static_cast<double>(t.size()) / n;
    net.backward(cache, g, grads);
  }
  const std::size_t mun = b.unlabeled.size();
  for (const auto& u : b.unlabeled) {
    switch (u.status) {
      case PseudoStatus::Accepted: ++r.pseudo_accept_count; break;
      case PseudoStatus::PriorReject: ++r.prior_reject_count; continue;
      case PseudoStatus::ThresholdReject: ++r.threshold_reject_count; continue;
    }
    for (const auto& view : u.views) {
      net.forward(view, cache);
      const auto& t = u.target;
      nn::Tensor<T> g(t.c, t.h, t.w);
      const double cells = static_cast<double>(t.plane());
      const double scale = lambda_u * 2.0 / (cells * mun);
      for (int i = 0; i < t.c; ++i) {
        if (!u.channel_mask[i]) continue;
        double s = 0.0;
        for (std::size_t e = i * t.plane(); e < (i + 1) * t.plane(); ++e) {
          const double d = static_cast<double>(cache.out.data[e]) - static_cast<double>(t.data[e]);
          s += d * d;
          g.data[e] = static_cast<T>(scale * d);
        }
        r.l_unsup += s / cells / mun;
      }
      if (lambda_u != 0.0) net.backward(cache, g, grads);
    }
  }
  r.l_total = r.l_sup + lambda_u * r.l_unsup;
  if (!std::isfinite(r.l_total)) throw TrainingError("non-finite detector loss");
  return r;
}

template <typename T>
DetectorLossReport detector_train_step(nn::DetectorNet<T>& net, nn::OptimizerState& opt, const DetectorBatch& batch,
                                       const DetectorSslConfig& cfg, std::uint64_t seed) {
  const auto prepared = prepare_detector_batch(net, batch, cfg, seed);
  std::vector<T> grads(net.param_count(), T(0));
  const auto report = detector_loss_and_grad(net, prepared, cfg.lambda_u, std::span<T>(grads));
  nn::optimizer_step(opt, net.params(), std::span<const T>(grads));
  return report;
}

struct LabeledSlice {
  const Slice* slice;
  SliceAnnotation annotation;
};

// Draws batches: labeled samples cycle through a reshuffled permutation,
// unlabeled triples are drawn uniformly from interior slices of the
// unlabeled volumes.
class DetectorSampler {
 public:
  DetectorSampler(std::vector<LabeledSlice> labeled, std::vector<const Volume*> unlabeled, const DetectorSslConfig& cfg,
                  int width, int height, int d_ds, std::uint64_t seed)
      : labeled_(std::move(labeled)), cfg_(cfg), rng_(derive_seed(seed, 0xba7c4ULL)) {
    if (labeled_.empty()) throw ConfigError("detector training needs at least one labeled slice");
    for (const auto& l : labeled_) targets_.push_back(encode_heatmaps(l.annotation.landmarks, width, height, d_ds, cfg.heatmap_sigma));
    for (const Volume* v : unlabeled)
      for (int k = cfg.stride; k + cfg.stride < v->size(); ++k) centers_.push_back({v, k});
    if (cfg.mu > 0 && centers_.empty())
      throw ConfigError("unlabeled volumes need at least 2*stride+1 slices to form triples");
  }

  int steps_per_epoch() const {
    return static_cast<int>((labeled_.size() + cfg_.labeled_batch - 1) / cfg_.labeled_batch);
  }

  DetectorBatch next() {
    DetectorBatch b;
    for (int i = 0; i < cfg_.labeled_batch; ++i) {
      if (cursor_ == order_.size()) {
        order_.resize(labeled_.size());
        for (std::size_t j = 0; j < order_.size(); ++j) order_[j] = j;
        rng_.shuffle(order_);
        cursor_ = 0;
      }
      const auto idx = order_[cursor_++];
      b.labeled.emplace_back(labeled_[idx].slice, targets_[idx]);
    }
    const int count = cfg_.mu * cfg_.labeled_batch;
    for (int i = 0; i < count; ++i) {
      const auto& [v, k] = centers_[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(centers_.size()) - 1))];
      b.unlabeled.push_back({&(*v)[k - cfg_.stride], &(*v)[k], &(*v)[k + cfg_.stride]});
    }
    return b;
  }

 private:
  std::vector<LabeledSlice> labeled_;
  std::vector<HeatmapSet> targets_;
  std::vector<std::pair<const Volume*, int>> centers_;
  DetectorSslConfig cfg_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Runs `epochs` epochs starting at opt.epoch; one log row per step when `log` is set.
template <typename T>
DetectorLossReport train_detector(nn::DetectorNet<T>& net, nn::OptimizerState& opt, DetectorSampler& sampler,
                                  const DetectorSslConfig& cfg, int epochs, std::uint64_t seed, std::ostream* log = nullptr) {
  DetectorLossReport last;
  DetectorSslConfig step_cfg = cfg;
  long local = 0;
  const int start = opt.epoch;
  for (int e = start; e < start + epochs; ++e) {
    opt.epoch = e;
    for (int s = 0; s < sampler.steps_per_epoch(); ++s) {
      const std::uint64_t step = opt.step;
      ++local;
      if (cfg.lambda_ramp_steps > 0)
        step_cfg.lambda_u = cfg.lambda_u * std::min(1.0, static_cast<double>(local) / cfg.lambda_ramp_steps);
      last = detector_train_step(net, opt, sampler.next(), step_cfg, derive_seed(seed, 0xde7ULL, step));
      if (log) *log << detector_log_row(step, last) << '\n';
    }
  }
  opt.epoch = start + epochs;
  return last;
}

}  // namespace usspine
