#include "mavlkit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mavlkit {

double box_area(const Box& b) {
  return std::max(0.0, b.x_max - b.x_min) * std::max(0.0, b.y_max - b.y_min);
}

namespace {

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return std::max(0.0, w) * std::max(0.0, h);
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = box_area(a) + box_area(b) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = box_area(a) + box_area(b) - inter;
  Box hull{std::min(a.x_min, b.x_min), std::min(a.y_min, b.y_min),
           std::max(a.x_max, b.x_max), std::max(a.y_max, b.y_max)};
  const double enclosing = box_area(hull);
  if (enclosing <= 0.0) return 0.0;
  const double i = uni > 0.0 ? inter / uni : 0.0;
  return i - (enclosing - uni) / enclosing;
}

Box convert(const Box& b, BoxForm from, BoxForm to) {
  // Normalize the source into corner form first.
  double x0, y0, x1, y1;
  switch (from) {
    case BoxForm::kXyxy:
      x0 = b.x_min, y0 = b.y_min, x1 = b.x_max, y1 = b.y_max;
      break;
    case BoxForm::kCxcywh:
      x0 = b.x_min - 0.5 * b.x_max;
      y0 = b.y_min - 0.5 * b.y_max;
      x1 = b.x_min + 0.5 * b.x_max;
      y1 = b.y_min + 0.5 * b.y_max;
      break;
    case BoxForm::kXywh:
      x0 = b.x_min, y0 = b.y_min;
      x1 = b.x_min + b.x_max, y1 = b.y_min + b.y_max;
      break;
    default:
      throw ConfigError("convert: unknown source form");
  }
  if (x1 < x0 || y1 < y0)
    throw ValidationError("convert: negative width or height (" +
                          std::to_string(x1 - x0) + " x " +
                          std::to_string(y1 - y0) + ")");
  switch (to) {
    case BoxForm::kXyxy:
      return {x0, y0, x1, y1};
    case BoxForm::kCxcywh:
      return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
    case BoxForm::kXywh:
      return {x0, y0, x1 - x0, y1 - y0};
    default:
      throw ConfigError("convert: unknown target form");
  }
}

std::vector<Detection> nms_class_agnostic(const std::vector<Detection>& dets,
                                          double iou_thresh) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<Detection> kept;
  for (int idx : order) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (iou(dets[idx].box, k.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[idx]);
  }
  return kept;
}

}  // namespace mavlkit
