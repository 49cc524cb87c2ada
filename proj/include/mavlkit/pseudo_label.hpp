#pragma once

#include <vector>

#include "mavlkit/geometry.hpp"

namespace mavlkit {

struct PseudoLabelConfig {
  // Proposals scoring below this are discarded; exactly hitting the bound
  // keeps the proposal.
  double min_score = 0.7;
  // Proposals overlapping any known ground-truth box more than this are
  // assumed to be that known object rather than something new; IoU exactly
  // at the bound keeps the proposal.
  double max_known_iou = 0.5;
  // Survivors are left overlapping by default. Setting apply_nms collapses
  // them with class-agnostic suppression at nms_thresh.
  bool apply_nms = false;
  double nms_thresh = 0.5;
};

void validate_pseudo_label_config(const PseudoLabelConfig& cfg);

// Filters class-agnostic proposals down to likely unknown objects: confident
// detections that match no known annotation. Ground-truth entries with
// known=false are ignored. Callers are expected to pass proposals and ground
// truth for a single shared image; nothing cross-image is checked here.
//
// Output is a subsequence of the input (fields untouched), so re-applying is
// a no-op, unless apply_nms is set, in which case survivors come back in
// suppression order.
std::vector<Detection> generate_unknown_pseudo_labels(
    const std::vector<Detection>& proposals,
    const std::vector<GroundTruthBox>& known_gt,
    const PseudoLabelConfig& cfg = {});

}  // namespace mavlkit
