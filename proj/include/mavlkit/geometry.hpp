#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mavlkit/tensor.hpp"

namespace mavlkit {

// Axis-aligned box, corner form. Coordinates are image pixels unless the
// surrounding code says they are normalized to [0,1].
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

struct Detection {
  int64_t image_id = 0;
  Box box;
  double score = 0.0;
  std::optional<std::string> source_query;
  std::optional<int64_t> category_id;
};

struct GroundTruthBox {
  int64_t image_id = 0;
  Box box;
  int64_t category_id = 0;
  bool known = true;
};

enum class BoxForm { kXyxy, kCxcywh, kXywh };

double box_area(const Box& b);

// Intersection over union. Degenerate (zero-area) boxes score 0 against
// everything, including each other.
double iou(const Box& a, const Box& b);

// iou - (enclosing - union) / enclosing, in (-1, 1]. Zero enclosing area
// (both boxes degenerate at the same point) gives 0.
double giou(const Box& a, const Box& b);

// Reinterprets the four Box fields positionally in `from` order and returns
// corner form fields in `to` order. Round trips are exact within 1e-12.
// Negative width or height in the source throws ValidationError.
Box convert(const Box& b, BoxForm from, BoxForm to);

// Greedy class-agnostic suppression: score descending (ties keep the earlier
// input index first), a detection survives iff its IoU with every
// already-kept detection is <= iou_thresh. Output is in kept order.
std::vector<Detection> nms_class_agnostic(const std::vector<Detection>& dets,
                                          double iou_thresh);

}  // namespace mavlkit
