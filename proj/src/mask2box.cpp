#include "mavlkit/mask2box.hpp"

#include <algorithm>
#include <numeric>

namespace mavlkit {

namespace {

int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

void unite(std::vector<int>& parent, int a, int b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a != b) parent[std::max(a, b)] = std::min(a, b);
}

}  // namespace

BinaryMask mask_from_gray(const Tensor& gray) {
  if (gray.rank() != 2)
    throw ValidationError("mask_from_gray expects [H,W], got " + gray.shape_str());
  BinaryMask m;
  m.h = gray.rows();
  m.w = gray.cols();
  m.fg.resize(gray.data.size());
  for (size_t i = 0; i < gray.data.size(); ++i) m.fg[i] = gray.data[i] >= 128.0;
  return m;
}

Labeling connected_components(const BinaryMask& mask, int connectivity) {
  if (mask.h < 1 || mask.w < 1 ||
      mask.fg.size() != static_cast<size_t>(mask.h) * mask.w)
    throw ValidationError("connected_components: inconsistent mask dimensions");
  if (connectivity != 4 && connectivity != 8)
    throw ConfigError("connectivity must be 4 or 8, got " +
                      std::to_string(connectivity));

  const int h = mask.h, w = mask.w;
  Labeling out;
  out.h = h;
  out.w = w;
  out.labels.assign(static_cast<size_t>(h) * w, 0);

  // Pass 1: provisional labels, merging with the already-visited neighbors
  // (west and the row above). Provisional ids start at 1.
  std::vector<int> parent(1, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const size_t idx = static_cast<size_t>(r) * w + c;
      if (!mask.fg[idx]) continue;
      int neighbor = 0;
      auto consider = [&](int rr, int cc) {
        if (rr < 0 || cc < 0 || cc >= w) return;
        const int lab = out.labels[static_cast<size_t>(rr) * w + cc];
        if (lab == 0) return;
        if (neighbor == 0)
          neighbor = find_root(parent, lab);
        else
          unite(parent, neighbor, lab);
      };
      consider(r, c - 1);
      consider(r - 1, c);
      if (connectivity == 8) {
        consider(r - 1, c - 1);
        consider(r - 1, c + 1);
      }
      if (neighbor == 0) {
        parent.push_back(static_cast<int>(parent.size()));
        out.labels[idx] = static_cast<int>(parent.size()) - 1;
      } else {
        out.labels[idx] = find_root(parent, neighbor);
      }
    }
  }

  // Pass 2: resolve to roots and compact to dense labels in raster order of
  // first appearance, collecting pixel counts and tight boxes.
  std::vector<int> dense(parent.size(), 0);
  for (size_t idx = 0; idx < out.labels.size(); ++idx) {
    if (out.labels[idx] == 0) continue;
    const int root = find_root(parent, out.labels[idx]);
    if (dense[root] == 0) {
      dense[root] = static_cast<int>(out.components.size()) + 1;
      Component comp;
      comp.label = dense[root];
      out.components.push_back(comp);
    }
    const int lab = dense[root];
    out.labels[idx] = lab;

    const int r = static_cast<int>(idx) / w, c = static_cast<int>(idx) % w;
    Component& comp = out.components[lab - 1];
    if (comp.pixels == 0) {
      comp.box = {static_cast<double>(c), static_cast<double>(r),
                  static_cast<double>(c + 1), static_cast<double>(r + 1)};
    } else {
      comp.box.x_min = std::min(comp.box.x_min, static_cast<double>(c));
      comp.box.y_min = std::min(comp.box.y_min, static_cast<double>(r));
      comp.box.x_max = std::max(comp.box.x_max, static_cast<double>(c + 1));
      comp.box.y_max = std::max(comp.box.y_max, static_cast<double>(r + 1));
    }
    comp.pixels += 1;
  }
  return out;
}

std::vector<Detection> components_to_boxes(const Labeling& labeling,
                                           int64_t min_area,
                                           const Tensor* score_map) {
  if (min_area < 0) throw ConfigError("min_area cannot be negative");
  if (score_map &&
      (score_map->rank() != 2 || score_map->rows() != labeling.h ||
       score_map->cols() != labeling.w))
    throw ValidationError("score map shape does not match the labeling");

  std::vector<double> sums;
  if (score_map) {
    sums.assign(labeling.components.size(), 0.0);
    for (size_t idx = 0; idx < labeling.labels.size(); ++idx)
      if (labeling.labels[idx] > 0)
        sums[labeling.labels[idx] - 1] += score_map->data[idx];
  }

  std::vector<Detection> out;
  for (const Component& comp : labeling.components) {
    if (comp.pixels < min_area) continue;
    Detection d;
    d.box = comp.box;
    d.score = score_map ? sums[comp.label - 1] / static_cast<double>(comp.pixels)
                        : 1.0;
    out.push_back(d);
  }
  return out;
}

}  // namespace mavlkit
