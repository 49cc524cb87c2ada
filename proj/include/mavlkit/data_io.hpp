#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mavlkit/eval.hpp"
#include "mavlkit/geometry.hpp"
#include "mavlkit/tensor.hpp"

namespace mavlkit {

// One row of the "images" table in a ground-truth file.
struct DatasetImage {
  int64_t id = 0;
  int width = 0;
  int height = 0;
  std::string file_name;
};

struct Dataset {
  std::vector<DatasetImage> images;
  std::vector<GroundTruthBox> annotations;
  std::map<int64_t, std::string> categories;
  // Annotations dropped because they were flagged iscrowd. Kept as a count so
  // callers can report the drop instead of losing it silently.
  int64_t dropped_crowd = 0;
};

// A token query plus the boxes it refers to on one image. Training consumes
// one group per step: the query conditions the model, the targets supervise
// the matcher. Groups produced by the caption-free transform below carry a
// single UNK token and an empty caption string.
struct CaptionGroup {
  int64_t image_id = 0;
  std::string caption;
  std::vector<int> tokens;
  std::vector<Box> targets;  // never empty
};

// Recipe for the synthetic shapes dataset. Query rules reuse the evaluation
// size-bucket bounds so "SMALL" means the same thing at generation and
// scoring time: SMALL selects boxes with area fraction < small_bound, LARGE
// selects area fraction > large_bound, ALL selects everything.
struct SyntheticSpec {
  int image_w = 64;
  int image_h = 64;
  int min_shapes = 2;
  int max_shapes = 5;  // at most 15 so gray levels stay distinct under 256
  int count = 16;
  // Per-shape size class probabilities; the remainder is mid-sized. Small
  // shapes are sampled safely under small_bound and large ones safely over
  // large_bound so both query rules get non-empty groups often.
  double p_small = 0.34;
  double p_large = 0.33;
  SizeBuckets buckets;
  uint64_t seed = 1;
};

void validate_synthetic_spec(const SyntheticSpec& spec);

struct SyntheticDataset {
  Dataset dataset;
  std::vector<CaptionGroup> groups;
  // Rendered [H,W] grayscale images, aligned with dataset.images.
  std::vector<Tensor> images;
};

// COCO-style ground truth: {"images":[{id,width,height,file_name}],
// "annotations":[{id,image_id,bbox:[x,y,w,h],category_id,iscrowd?}],
// "categories":[{id,name}]}. Boxes convert to corner form and clamp to the
// image bounds. Unknown top-level keys are ignored so a synthetic manifest
// loads as plain ground truth; anything malformed inside the known tables is
// an error, not a skip.
Dataset load_ground_truth(const std::string& path);

// Detections/proposals file: JSON array of {"image_id", "bbox":[x,y,w,h],
// "score", "query"?, "category"?}. Doubles are serialized with full
// round-trip precision. The stored width is chosen so x + w reproduces the
// saved corner bit-exactly, which the naive x_max - x_min can miss by an ulp.
std::vector<Detection> load_proposals(const std::string& path);
void save_detections(const std::string& path,
                     const std::vector<Detection>& dets);

// Deterministic per seed: filled axis-aligned rectangles and ellipses with
// distinct gray levels on a dark noise background, boxes tight around the
// rendered pixels, one caption group per applicable query rule.
SyntheticDataset gen_synthetic_dataset(const SyntheticSpec& spec);

// Writes one PGM per image plus manifest.json binding images, annotations,
// and caption groups. The manifest doubles as a ground-truth file.
void save_synthetic_dataset(const std::string& dir, const SyntheticDataset& ds);
SyntheticDataset load_synthetic_dataset(const std::string& manifest_path);

// Language-structure ablation transforms. Setting 1 erases caption identity
// by concatenating every group's boxes per image (duplicates kept). Setting 2
// additionally collapses near-duplicates with class-agnostic NMS at a high
// threshold (uniform scores, ties keep the earlier input index). Setting 3
// rebuilds caption-shaped groups from the surviving boxes by random
// partition: groups of `group_size`, last one smaller, deterministic per
// seed, sampling without replacement so every box lands in exactly one
// group. A longer-schedule variant of setting 3 is a training preset, not a
// data transform.
std::map<int64_t, std::vector<Box>> ablation_setting1_merge(
    const std::vector<CaptionGroup>& groups);
std::map<int64_t, std::vector<Box>> ablation_setting2_nms(
    const std::map<int64_t, std::vector<Box>>& merged, double iou_thresh = 0.9);
std::vector<CaptionGroup> ablation_setting3_group(
    const std::map<int64_t, std::vector<Box>>& boxes_per_image,
    int group_size = 6, uint64_t seed = 1);

}  // namespace mavlkit
