#pragma once

#include <vector>

#include "usspine/heatmap.hpp"
#include "usspine/nn/classifier_net.hpp"
#include "usspine/nn/detector_net.hpp"
#include "usspine/patcher.hpp"
#include "usspine/volume.hpp"

namespace usspine {

struct PipelineConfig {
  PatchSpec patches;
  double decision_threshold = 0.5;  // on the real-class probability
};

// One shared classifier, or one per structure (SP, left, right).
struct ClassifierBank {
  std::vector<nn::ClassifierNet<float>> nets;

  const nn::ClassifierNet<float>& for_structure(int s) const {
    if (nets.size() == 1) return nets.front();
    if (nets.size() == static_cast<std::size_t>(kNumStructures)) return nets[static_cast<std::size_t>(s)];
    throw ConfigError("classifier bank must hold 1 or 3 networks");
  }
};

inline DetectionResult detect_slice(const nn::DetectorNet<float>& detector, const ClassifierBank& classifiers,
                                    const Slice& slice, const PipelineConfig& cfg) {
  DetectionResult r;
  r.landmarks = decode_argmax(detector.forward(slice));
  for (int s = 0; s < kNumStructures; ++s) {
    const auto patch = structure_patch(slice, r.landmarks, static_cast<Structure>(s), cfg.patches, 0, false);
    const auto p = classifiers.for_structure(s).forward(patch);
    r.confidences[s] = p[1];
    r.predicted_labels[s] = p[1] >= cfg.decision_threshold;
  }
  return r;
}

inline std::vector<DetectionResult> detect_volume(const nn::DetectorNet<float>& detector,
                                                  const ClassifierBank& classifiers, const Volume& volume,
                                                  const PipelineConfig& cfg) {
  std::vector<DetectionResult> out;
  out.reserve(static_cast<std::size_t>(volume.size()));
  for (const auto& s : volume.slices()) out.push_back(detect_slice(detector, classifiers, s, cfg));
  return out;
}

}  // namespace usspine
