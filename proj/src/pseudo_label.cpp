#include "mavlkit/pseudo_label.hpp"

#include <algorithm>

#include "mavlkit/tensor.hpp"

namespace mavlkit {

void validate_pseudo_label_config(const PseudoLabelConfig& cfg) {
  if (cfg.min_score < 0 || cfg.min_score > 1) {
    throw ConfigError("min_score must be in [0,1]");
  }
  if (cfg.max_known_iou < 0 || cfg.max_known_iou > 1) {
    throw ConfigError("max_known_iou must be in [0,1]");
  }
  if (cfg.nms_thresh < 0 || cfg.nms_thresh > 1) {
    throw ConfigError("nms_thresh must be in [0,1]");
  }
}

std::vector<Detection> generate_unknown_pseudo_labels(
    const std::vector<Detection>& proposals,
    const std::vector<GroundTruthBox>& known_gt,
    const PseudoLabelConfig& cfg) {
  validate_pseudo_label_config(cfg);
  std::vector<Detection> out;
  for (const Detection& p : proposals) {
    if (p.score < cfg.min_score) continue;
    double best_known = 0.0;
    for (const GroundTruthBox& g : known_gt) {
      if (!g.known) continue;
      best_known = std::max(best_known, iou(p.box, g.box));
    }
    if (best_known > cfg.max_known_iou) continue;
    out.push_back(p);
  }
  if (cfg.apply_nms) out = nms_class_agnostic(out, cfg.nms_thresh);
  return out;
}

}  // namespace mavlkit
