#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "usspine/error.hpp"

namespace usspine::nn {

enum class OptimizerKind : std::uint8_t { Adam = 0, SgdMomentum = 1 };

// Piecewise-constant decay: lr(epoch) = initial * decay^(milestones <= epoch).
struct LrSchedule {
  double initial = 1e-3;
  double decay = 0.1;
  std::vector<int> milestones;
  // Linear ramp from lr/warmup_steps to lr over the first optimizer steps; 0 = off.
  int warmup_steps = 0;

  double lr_at(int epoch) const {
    double lr = initial;
    for (int m : milestones)
      if (epoch >= m) lr *= decay;
    return lr;
  }

  // Same schedule with milestones stretched by `scale` (desk-scale runs).
  LrSchedule scaled(double scale) const {
    LrSchedule s = *this;
    for (auto& m : s.milestones) m = std::max(1, static_cast<int>(std::lround(m * scale)));
    return s;
  }

  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // Detector default: Adam, 1e-3, x0.1 at epochs 60 and 150.
  static OptimizerConfig detector_default() {
    OptimizerConfig c;
    c.kind = OptimizerKind::Adam;
    c.schedule = {1e-3, 0.1, {60, 150}, 0};
    return c;
  }

  // Classifier default: SGD momentum 0.9, weight decay 5e-4, 3e-2, x0.1 after 200.
  static OptimizerConfig classifier_default() {
    OptimizerConfig c;
    c.kind = OptimizerKind::SgdMomentum;
    c.schedule = {3e-2, 0.1, {200}, 0};
    c.momentum = 0.9;
    c.weight_decay = 5e-4;
    return c;
  }

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct OptimizerState {
  OptimizerConfig config;
  std::vector<double> m;  // first moment / momentum buffer
  std::vector<double> v;  // second moment (Adam only)
  std::uint64_t step = 0;
  int epoch = 0;

  OptimizerState() = default;
  OptimizerState(OptimizerConfig cfg, std::size_t n) : config(std::move(cfg)), m(n, 0.0) {
    if (config.kind == OptimizerKind::Adam) v.assign(n, 0.0);
  }

  double learning_rate() const {
    const double lr = config.schedule.lr_at(epoch);
    const int w = config.schedule.warmup_steps;
    return w > 0 && step < static_cast<std::uint64_t>(w) ? lr * static_cast<double>(step + 1) / w : lr;
  }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

template <typename T>
void optimizer_step(OptimizerState& state, std::span<T> params, std::span<const T> grads) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("optimizer_step: parameter/gradient/state sizes differ");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(static_cast<double>(grads[i])))
      throw TrainingError("non-finite gradient at parameter " + std::to_string(i) + " (step " +
                          std::to_string(state.step) + ")");
  const auto& c = state.config;
  const double lr = state.learning_rate();
  ++state.step;
  if (c.kind == OptimizerKind::Adam) {
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = static_cast<double>(grads[i]) + c.weight_decay * static_cast<double>(params[i]);
      state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
      state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
      const double mh = state.m[i] / bc1, vh = state.v[i] / bc2;
      params[i] = static_cast<T>(static_cast<double>(params[i]) - lr * mh / (std::sqrt(vh) + c.eps));
    }
  } else {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = static_cast<double>(grads[i]) + c.weight_decay * static_cast<double>(params[i]);
      state.m[i] = c.momentum * state.m[i] + g;
      params[i] = static_cast<T>(static_cast<double>(params[i]) - lr * state.m[i]);
    }
  }
}

}  // namespace usspine::nn
