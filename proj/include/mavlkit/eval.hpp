#pragma once

#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "mavlkit/geometry.hpp"
#include "mavlkit/tensor.hpp"

namespace mavlkit {

struct EvalConfig {
  double iou_thresh = 0.5;
  int top_n = 50;
  // When set, detections scoring below the threshold are dropped before
  // pooling (boundary scores survive).
  std::optional<double> score_thresh;
  double nms_thresh = 0.5;
  // Default AP integrates the precision envelope over every recall step;
  // the flag switches to the 11-point average.
  bool eleven_point_ap = false;
  // Default recall pools ground truth across the dataset; the flag averages
  // per-image recalls over images that have ground truth.
  bool per_image_recall = false;
};

void validate_eval_config(const EvalConfig& cfg);

struct PrPoint {
  double recall = 0, precision = 0;
};

struct PRCurve {
  std::vector<PrPoint> points;
  double ap = 0;
  int64_t tp = 0, fp = 0, gt = 0;
};

// Area-fraction bounds shared by evaluation and synthetic data generation:
// fractions in [0, small_bound) are small, [small_bound, large_bound] medium,
// and above that large.
struct SizeBuckets {
  double small_bound = 0.05;
  double large_bound = 0.20;
};

void validate_size_buckets(const SizeBuckets& b);

struct SizeBucketRecall {
  double small = 1, medium = 1, large = 1;
  int64_t small_gt = 0, medium_gt = 0, large_gt = 0;
};

struct ImageSize {
  int width = 0, height = 0;
};

// One global greedy matching: detections walk in score-descending order
// (ties keep input order) and each claims the unmatched ground-truth box of
// highest IoU within its image, counting as a true positive only when that
// IoU strictly exceeds the threshold. Exposed so bucket and per-category
// recall reuse a single matching instead of re-matching per slice.
struct MatchResult {
  std::vector<int> order;        // detection indices, score descending
  std::vector<char> is_tp;       // aligned with order
  std::vector<int> matched_gt;   // gt index or -1, aligned with order
  std::vector<char> gt_matched;  // per ground-truth index
};

MatchResult greedy_match(const std::vector<Detection>& dets,
                         const std::vector<GroundTruthBox>& gts,
                         double iou_thresh);

// Pool per-query detection lists for one image, apply the optional score
// filter, class-agnostic NMS at cfg.nms_thresh, then keep the top_n best.
std::vector<Detection> combine_query_detections(
    const std::vector<std::vector<Detection>>& per_source,
    const EvalConfig& cfg);

PRCurve average_precision(const std::vector<Detection>& dets,
                          const std::vector<GroundTruthBox>& gts,
                          const EvalConfig& cfg);

// Fraction of ground truth matched by the top-n detections of each image.
double recall_at_n(const std::vector<Detection>& dets,
                   const std::vector<GroundTruthBox>& gts,
                   const EvalConfig& cfg, int n);

// recall_at_n per entry of ns, which must be sorted ascending.
std::vector<std::pair<int, double>> recall_curve(
    const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
    const EvalConfig& cfg, const std::vector<int>& ns);

// Ground truth partitioned by area fraction of its image; recalls read off
// the single global matching. Buckets without ground truth report 1.
SizeBucketRecall size_bucket_recall(const std::vector<Detection>& dets,
                                    const std::vector<GroundTruthBox>& gts,
                                    const std::map<int64_t, ImageSize>& sizes,
                                    const EvalConfig& cfg,
                                    const SizeBuckets& buckets = {});

// Per-category recall from one global class-agnostic matching; categories
// with no ground truth are absent from the map.
std::map<int64_t, double> recall_by_category(
    const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
    const EvalConfig& cfg);

using Detector = std::function<std::vector<Detection>(const Tensor&)>;

// Split the image into a balanced rows-by-cols grid (the factor pair of
// `tiles` with the smallest difference, more columns than rows when the
// image is at least as wide as tall), run the detector per crop, translate
// boxes back by their crop origin, then pool, NMS, and truncate to top_n.
std::vector<Detection> tiled_inference(const Tensor& image,
                                       const Detector& detector, int tiles,
                                       const EvalConfig& cfg);

}  // namespace mavlkit
