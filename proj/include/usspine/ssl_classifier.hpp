#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "usspine/annotations.hpp"
#include "usspine/augment.hpp"
#include "usspine/nn/classifier_net.hpp"
#include "usspine/nn/optimizer.hpp"
#include "usspine/patcher.hpp"
#include "usspine/rng.hpp"

namespace usspine {

using Probs = std::array<double, 2>;  // (fake, real)

inline constexpr double kProbabilityFloor = 1e-12;

struct ClassifierSslConfig {
  int labeled_batch = 32;  // N
  int mu = 15;
  double lambda_u = 1.0;
  double tau = 0.97;
  bool rebalance = true;
  // Threshold the strong-view prediction instead of the weak one (the literal
  // reading of the unsupervised loss); pseudo-labels still come from the weak view.
  bool mask_from_strong = false;
  AugmentPolicy weak = AugmentPolicy::weak_classifier();
  AugmentPolicy strong = AugmentPolicy::strong(false);

  void validate() const {
    if (labeled_batch < 1) throw ConfigError("classifier.labeled_batch must be >= 1");
    if (mu < 0) throw ConfigError("classifier.mu must be >= 0");
    if (!(lambda_u >= 0.0)) throw ConfigError("classifier.lambda_u must be >= 0");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("classifier.tau must be in (0,1]");
    if (weak.kind != AugmentKind::WeakClassifier) throw ConfigError("classifier weak augmentation must be the flip policy");
    if (strong.kind != AugmentKind::Strong) throw ConfigError("classifier strong augmentation must be a strong policy");
    weak.validate();
    strong.validate();
  }
};

inline double cross_entropy(const Probs& p, int label) {
  return -std::log(std::max(p[static_cast<std::size_t>(label)], kProbabilityFloor));
}

inline double classifier_supervised_loss(const std::vector<Probs>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) throw ShapeError("probability/label counts differ");
  if (probs.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) s += cross_entropy(probs[k], labels[k]);
  return s / static_cast<double>(probs.size());
}

struct MaskArray {
  std::vector<bool> m;
  std::vector<int> z;
  int n = 0;  // kept per class after rebalancing

  int active(int cls) const {
    int c = 0;
    for (std::size_t k = 0; k < m.size(); ++k) c += m[k] && z[k] == cls;
    return c;
  }
  int active() const { return static_cast<int>(std::count(m.begin(), m.end(), true)); }
};

// Threshold mask, then (optionally) keep a random n-subset of the majority
// class where n is the confident minority count.
inline MaskArray rebalance_mask(const std::vector<Probs>& confidences, double tau, bool rebalance, std::uint64_t seed,
                                const std::vector<Probs>* threshold_source = nullptr) {
  const auto& thr = threshold_source ? *threshold_source : confidences;
  if (thr.size() != confidences.size()) throw ShapeError("threshold and pseudo-label sources differ in length");
  MaskArray mask;
  const std::size_t n = confidences.size();
  mask.m.assign(n, false);
  mask.z.assign(n, 0);
  std::array<std::vector<std::size_t>, 2> members;
  for (std::size_t k = 0; k < n; ++k) {
    mask.z[k] = confidences[k][1] > confidences[k][0] ? 1 : 0;
    mask.m[k] = std::max(thr[k][0], thr[k][1]) >= tau;
    if (mask.m[k]) members[mask.z[k]].push_back(k);
  }
  if (!rebalance) {
    mask.n = static_cast<int>(std::min(members[0].size(), members[1].size()));
    return mask;
  }
  const std::size_t keep = std::min(members[0].size(), members[1].size());
  mask.n = static_cast<int>(keep);
  Rng rng(seed);
  for (auto& group : members) {
    if (group.size() <= keep) continue;
    rng.shuffle(group);
    for (std::size_t i = keep; i < group.size(); ++i) mask.m[group[i]] = false;
  }
  return mask;
}

// (1/muN) sum_k m_k H(z_k, q^_k) for given strong-view predictions.
inline double masked_cross_entropy(const std::vector<Probs>& strong_probs, const MaskArray& mask) {
  if (strong_probs.size() != mask.m.size()) throw ShapeError("prediction/mask counts differ");
  if (strong_probs.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t k = 0; k < strong_probs.size(); ++k)
    if (mask.m[k]) s += cross_entropy(strong_probs[k], mask.z[k]);
  return s / static_cast<double>(strong_probs.size());
}

template <typename T>
double classifier_unsupervised_loss(const nn::ClassifierNet<T>& net, const std::vector<Image>& unlabeled,
                                    const MaskArray& mask, std::uint64_t seed,
                                    const AugmentPolicy& strong = AugmentPolicy::strong(false)) {
  std::vector<Probs> q;
  for (std::size_t k = 0; k < unlabeled.size(); ++k) q.push_back(net.forward(augment_strong(unlabeled[k], strong, derive_seed(seed, k))));
  return masked_cross_entropy(q, mask);
}

struct ClassifierLossReport {
  double l_sup = 0.0;
  double l_unsup = 0.0;
  double l_total = 0.0;
  int n = 0;
  int active_real = 0;
  int active_fake = 0;
  int confident = 0;  // above tau before rebalancing
};

inline constexpr std::string_view kClassifierLogHeader = "step,l_sup,l_unsup,l_total,n,active_real,active_fake";

inline std::string classifier_log_row(std::uint64_t step, const ClassifierLossReport& r) {
  std::ostringstream os;
  os << step << ',' << format_number(r.l_sup) << ',' << format_number(r.l_unsup) << ',' << format_number(r.l_total)
     << ',' << r.n << ',' << r.active_real << ',' << r.active_fake;
  return os.str();
}

template <typename T>
struct PreparedClassifierBatch {
  std::vector<nn::Tensor<T>> labeled_inputs;
  std::vector<int> labels;
  std::vector<nn::Tensor<T>> strong_inputs;
  MaskArray mask;
  int confident = 0;
};

struct ClassifierBatch {
  std::vector<std::pair<Image, int>> labeled;
  std::vector<Image> unlabeled;
};

template <typename T>
PreparedClassifierBatch<T> prepare_classifier_batch(const nn::ClassifierNet<T>& net, const ClassifierBatch& batch,
                                                    const ClassifierSslConfig& cfg, std::uint64_t seed) {
  PreparedClassifierBatch<T> p;
  for (std::size_t k = 0; k < batch.labeled.size(); ++k) {
    p.labeled_inputs.push_back(nn::image_tensor<T>(augment_weak(batch.labeled[k].first, cfg.weak, derive_seed(seed, 1, k))));
    p.labels.push_back(batch.labeled[k].second);
  }
  std::vector<Probs> weak, strong;
  for (std::size_t k = 0; k < batch.unlabeled.size(); ++k) {
    weak.push_back(net.forward(augment_weak(batch.unlabeled[k], cfg.weak, derive_seed(seed, 2, k))));
    p.strong_inputs.push_back(nn::image_tensor<T>(augment_strong(batch.unlabeled[k], cfg.strong, derive_seed(seed, 3, k))));
  }
  if (cfg.mask_from_strong) {
    nn::ClassifierCache<T> c;
    for (const auto& x : p.strong_inputs) {
      net.forward(x, c);
      strong.push_back({static_cast<double>(c.probs[0]), static_cast<double>(c.probs[1])});
    }
  }
  const auto& thr = cfg.mask_from_strong ? strong : weak;
  for (const auto& q : thr) p.confident += std::max(q[0], q[1]) >= cfg.tau;
  p.mask = rebalance_mask(weak, cfg.tau, cfg.rebalance, derive_seed(seed, 4), cfg.mask_from_strong ? &strong : nullptr);
  if (cfg.rebalance && p.mask.active(0) != p.mask.active(1))
    throw TrainingError("rebalance left unequal active class counts");
  return p;
}

// L_cls = L_sup + lambda_u * L_unsup; gradients accumulate into `grads`.
template <typename T>
ClassifierLossReport classifier_loss_and_grad(const nn::ClassifierNet<T>& net, const PreparedClassifierBatch<T>& b,
                                              double lambda_u, std::span<T> grads) {
  ClassifierLossReport r;
  nn::ClassifierCache<T> c;
  const std::size_t n = b.labeled_inputs.size();
  if (n == 0) throw ContractError("classifier batch needs at least one labeled sample");
  for (std::size_t k = 0; k < n; ++k) {
    net.forward(b.labeled_inputs[k], c);
    const int y = b.labels[k];
    r.l_sup += cross_entropy({static_cast<double>(c.probs[0]), static_cast<double>(c.probs[1])}, y) / n;
    const T scale = T(1) / static_cast<T>(n);
    net.backward(c, {scale * (c.probs[0] - T(y == 0)), scale * (c.probs[1] - T(y == 1))}, grads);
  }
  const std::size_t mun = b.strong_inputs.size();
  for (std::size_t k = 0; k < mun; ++k) {
    if (!b.mask.m[k]) continue;
    net.forward(b.strong_inputs[k], c);
    const int z = b.mask.z[k];
    r.l_unsup += cross_entropy({static_cast<double>(c.probs[0]), static_cast<double>(c.probs[1])}, z) / mun;
    if (lambda_u == 0.0) continue;
    const T scale = static_cast<T>(lambda_u / mun);
    net.backward(c, {scale * (c.probs[0] - T(z == 0)), scale * (c.probs[1] - T(z == 1))}, grads);
  }
  r.l_total = r.l_sup + lambda_u * r.l_unsup;
  if (!std::isfinite(r.l_total)) throw TrainingError("non-finite classifier loss");
  r.n = b.mask.n;
  r.active_real = b.mask.active(1);
  r.active_fake = b.mask.active(0);
  r.confident = b.confident;
  return r;
}

template <typename T>
ClassifierLossReport classifier_train_step(nn::ClassifierNet<T>& net, nn::OptimizerState& opt,
                                           const ClassifierBatch& batch, const ClassifierSslConfig& cfg,
                                           std::uint64_t seed) {
  const auto prepared = prepare_classifier_batch(net, batch, cfg, seed);
  std::vector<T> grads(net.param_count(), T(0));
  const auto report = classifier_loss_and_grad(net, prepared, cfg.lambda_u, std::span<T>(grads));
  nn::optimizer_step(opt, net.params(), std::span<const T>(grads));
  return report;
}

// A patch location: which slice, where, and (for labeled data) the label.
struct PatchSource {
  const Slice* slice = nullptr;
  LandmarkSet landmarks;
  Structure structure = Structure::SpinousProcess;
  int label = -1;
};

// Crops fresh (jittered) patches each step. Labeled sources cycle through
// reshuffled permutations; unlabeled ones are drawn uniformly.
class ClassifierSampler {
 public:
  ClassifierSampler(std::vector<PatchSource> labeled, std::vector<PatchSource> unlabeled, PatchSpec spec,
                    const ClassifierSslConfig& cfg, std::uint64_t seed)
      : labeled_(std::move(labeled)), unlabeled_(std::move(unlabeled)), spec_(spec), cfg_(cfg),
        rng_(derive_seed(seed, 0xc1a55ULL)) {
    if (labeled_.empty()) throw ConfigError("classifier training needs labeled patches");
    for (const auto& s : labeled_)
      if (s.label != 0 && s.label != 1) throw ValidationError("labeled patch without a 0/1 label");
    if (cfg.mu > 0 && unlabeled_.empty()) throw ConfigError("classifier SSL needs unlabeled patches when mu > 0");
  }

  int steps_per_epoch() const {
    return static_cast<int>((labeled_.size() + cfg_.labeled_batch - 1) / cfg_.labeled_batch);
  }

  ClassifierBatch next() {
    ClassifierBatch b;
    for (int i = 0; i < cfg_.labeled_batch; ++i) {
      if (cursor_ == order_.size()) {
        order_.resize(labeled_.size());
        for (std::size_t j = 0; j < order_.size(); ++j) order_[j] = j;
        rng_.shuffle(order_);
        cursor_ = 0;
      }
      const auto& s = labeled_[order_[cursor_++]];
      b.labeled.emplace_back(structure_patch(*s.slice, s.landmarks, s.structure, spec_, rng_.next_u64(), true), s.label);
    }
    for (int i = 0; i < cfg_.mu * cfg_.labeled_batch; ++i) {
      const auto& s = unlabeled_[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(unlabeled_.size()) - 1))];
      b.unlabeled.push_back(structure_patch(*s.slice, s.landmarks, s.structure, spec_, rng_.next_u64(), true));
    }
    return b;
  }

 private:
  std::vector<PatchSource> labeled_, unlabeled_;
  PatchSpec spec_;
  ClassifierSslConfig cfg_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

template <typename T>
ClassifierLossReport train_classifier(nn::ClassifierNet<T>& net, nn::OptimizerState& opt, ClassifierSampler& sampler,
                                      const ClassifierSslConfig& cfg, int epochs, std::uint64_t seed,
                                      std::ostream* log = nullptr) {
  ClassifierLossReport last;
  const int start = opt.epoch;
  for (int e = start; e < start + epochs; ++e) {
    opt.epoch = e;
    for (int s = 0; s < sampler.steps_per_epoch(); ++s) {
      const std::uint64_t step = opt.step;
      last = classifier_train_step(net, opt, sampler.next(), cfg, derive_seed(seed, 0xc15ULL, step));
      if (log) *log << classifier_log_row(step, last) << '\n';
    }
  }
  opt.epoch = start + epochs;
  return last;
}

}  // namespace usspine
