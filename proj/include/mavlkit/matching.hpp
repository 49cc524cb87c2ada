#pragma once

#include <utility>
#include <vector>

#include "mavlkit/tape.hpp"

namespace mavlkit {

// Optimal injection of targets into predictions. pairs holds (prediction,
// target) with every target matched exactly once; unmatched_preds lists the
// leftover prediction rows in ascending order.
struct Assignment {
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> unmatched_preds;
};

struct LossWeights {
  double w_cls = 2.0, w_l1 = 5.0, w_giou = 2.0;
};

// Minimum-cost assignment of m targets (columns) to n >= m predictions
// (rows) via shortest augmenting paths with potentials. Among cost ties the
// target-major prediction vector (pred for target 0, then 1, ...) is
// lexicographically smallest; exact when costs are integers. Throws
// ValidationError when n < m.
Assignment hungarian(const Tensor& cost);

double assignment_total_cost(const Tensor& cost, const Assignment& a);

// One detection head output as plain values: boxes [Q,4] normalized cxcywh,
// objectness [Q] probabilities.
struct DetectionSetValue {
  Tensor boxes;
  Tensor objectness;
};

// Same output as tape nodes; objectness stays in logit form so the loss can
// use the numerically safe log-sum form.
struct DetectionSetVar {
  VarId boxes = kNoVar;
  VarId logits = kNoVar;
};

// One ground-truth box in normalized cxcywh with the known-category flag
// carried through from ingestion.
struct TargetBox {
  double cx = 0, cy = 0, w = 0, h = 0;
  bool known = true;
};

// cost[q,t] = w_cls*(-objectness_q) + w_l1*|b_q - g_t|_1
//           + w_giou*(1 - GIoU(b_q, g_t)); boxes and targets in normalized
// cxcywh.
Tensor match_cost(const DetectionSetValue& preds,
                  const std::vector<TargetBox>& targets,
                  const LossWeights& w);

// Per-pair GIoU of predicted cxcywh rows [m,4] against fixed targets;
// differentiable in the predictions.
VarId giou_cxcywh_pairs(GradTape& t, VarId pred_boxes,
                        const std::vector<TargetBox>& targets);

// Set-prediction loss summed over all auxiliary outputs. Each output is
// matched independently (Hungarian on match_cost of its current values,
// matching held fixed for the gradient), then contributes
// w_cls*BCE(objectness; matched 1 / unmatched 0, mean over Q) plus the L1
// and (1-GIoU) terms over matched pairs divided by the image's target count.
// With zero targets only the objectness term remains.
//
// `matching` (optional) pins the per-set matching across calls: when it
// already holds one entry per output those are used verbatim (finite
// difference checks hold matching fixed this way); when empty it is filled
// with the matchings computed here.
VarId set_loss(GradTape& t, const std::vector<DetectionSetVar>& outputs,
               const std::vector<TargetBox>& targets, const LossWeights& w,
               std::vector<std::vector<int>>* matching = nullptr);

}  // namespace mavlkit
