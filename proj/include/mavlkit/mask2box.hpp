#pragma once

#include <cstdint>
#include <vector>

#include "mavlkit/geometry.hpp"
#include "mavlkit/tensor.hpp"

namespace mavlkit {

struct BinaryMask {
  int h = 0, w = 0;
  std::vector<uint8_t> fg;  // row-major, nonzero = foreground
};

// Midpoint binarization of an 8-bit grayscale image: >= 128 is foreground.
BinaryMask mask_from_gray(const Tensor& gray);

struct Component {
  int label = 0;
  int64_t pixels = 0;
  Box box;  // tight: (min_col, min_row, max_col+1, max_row+1)
};

struct Labeling {
  int h = 0, w = 0;
  std::vector<int> labels;            // row-major, 0 = background
  std::vector<Component> components;  // label k lives at index k-1
};

// Two-pass union-find labeling. Two foreground pixels share a label exactly
// when they are connected under the chosen adjacency; labels are dense from
// 1 in raster order of each component's first pixel.
Labeling connected_components(const BinaryMask& mask, int connectivity = 8);

// One detection per component with at least min_area pixels, ordered by
// label. Scores are 1.0 for ground-truth conversion; with a score map
// ([H,W]) each detection instead carries the mean map value over its pixels.
std::vector<Detection> components_to_boxes(const Labeling& labeling,
                                           int64_t min_area = 1,
                                           const Tensor* score_map = nullptr);

}  // namespace mavlkit
