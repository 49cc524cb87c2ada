#include "mavlkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace mavlkit {

namespace {

void require_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0))
    throw ConfigError(std::string(what) + " must lie in [0,1], got " +
                      std::to_string(v));
}

std::vector<int> score_order(const std::vector<Detection>& dets) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

// Keep each image's top-n detections by score, emitting images in id order
// so downstream reductions are deterministic.
std::vector<Detection> top_n_per_image(const std::vector<Detection>& dets,
                                       int n) {
  std::map<int64_t, std::vector<Detection>> by_image;
  for (const Detection& d : dets) by_image[d.image_id].push_back(d);
  std::vector<Detection> out;
  for (auto& [id, list] : by_image) {
    std::stable_sort(list.begin(), list.end(),
                     [](const Detection& a, const Detection& b) {
                       return a.score > b.score;
                     });
    if (static_cast<int>(list.size()) > n) list.resize(n);
    out.insert(out.end(), list.begin(), list.end());
  }
  return out;
}

std::vector<Detection> filter_by_score(std::vector<Detection> dets,
                                       const std::optional<double>& thresh) {
  if (!thresh) return dets;
  std::vector<Detection> kept;
  for (Detection& d : dets)
    if (d.score >= *thresh) kept.push_back(std::move(d));
  return kept;
}

}  // namespace

void validate_eval_config(const EvalConfig& cfg) {
  require_unit(cfg.iou_thresh, "iou_thresh");
  require_unit(cfg.nms_thresh, "nms_thresh");
  if (cfg.score_thresh) require_unit(*cfg.score_thresh, "score_thresh");
  if (cfg.top_n < 1)
    throw ConfigError("top_n must be at least 1, got " + std::to_string(cfg.top_n));
}

void validate_size_buckets(const SizeBuckets& b) {
  if (!(0.0 < b.small_bound && b.small_bound < b.large_bound && b.large_bound < 1.0))
    throw ConfigError("size bucket bounds must satisfy 0 < small < large < 1");
}

MatchResult greedy_match(const std::vector<Detection>& dets,
                         const std::vector<GroundTruthBox>& gts,
                         double iou_thresh) {
  MatchResult m;
  m.order = score_order(dets);
  m.is_tp.assign(dets.size(), 0);
  m.matched_gt.assign(dets.size(), -1);
  m.gt_matched.assign(gts.size(), 0);

  std::map<int64_t, std::vector<int>> gt_by_image;
  for (size_t g = 0; g < gts.size(); ++g)
    gt_by_image[gts[g].image_id].push_back(static_cast<int>(g));

  for (size_t k = 0; k < m.order.size(); ++k) {
    const Detection& d = dets[m.order[k]];
    auto it = gt_by_image.find(d.image_id);
    if (it == gt_by_image.end()) continue;
    double best = 0.0;
    int best_gt = -1;
    for (int g : it->second) {
      if (m.gt_matched[g]) continue;
      const double v = iou(d.box, gts[g].box);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt >= 0 && best > iou_thresh) {
      m.is_tp[k] = 1;
      m.matched_gt[k] = best_gt;
      m.gt_matched[best_gt] = 1;
    }
  }
  return m;
}

std::vector<Detection> combine_query_detections(
    const std::vector<std::vector<Detection>>& per_source,
    const EvalConfig& cfg) {
  validate_eval_config(cfg);
  std::vector<Detection> pooled;
  for (const auto& src : per_source)
    pooled.insert(pooled.end(), src.begin(), src.end());
  for (const Detection& d : pooled)
    if (d.image_id != pooled.front().image_id)
      throw ValidationError("combine_query_detections: detections span images " +
                            std::to_string(pooled.front().image_id) + " and " +
                            std::to_string(d.image_id));
  pooled = filter_by_score(std::move(pooled), cfg.score_thresh);
  std::vector<Detection> kept = nms_class_agnostic(pooled, cfg.nms_thresh);
  if (static_cast<int>(kept.size()) > cfg.top_n) kept.resize(cfg.top_n);
  return kept;
}

PRCurve average_precision(const std::vector<Detection>& dets,
                          const std::vector<GroundTruthBox>& gts,
                          const EvalConfig& cfg) {
  validate_eval_config(cfg);
  PRCurve curve;
  curve.gt = static_cast<int64_t>(gts.size());
  if (gts.empty()) {
    curve.fp = static_cast<int64_t>(dets.size());
    curve.ap = dets.empty() ? 1.0 : 0.0;
    return curve;
  }

  MatchResult m = greedy_match(dets, gts, cfg.iou_thresh);
  int64_t tp = 0;
  for (size_t k = 0; k < m.order.size(); ++k) {
    if (m.is_tp[k]) ++tp;
    curve.points.push_back({static_cast<double>(tp) / curve.gt,
                            static_cast<double>(tp) / (k + 1)});
  }
  curve.tp = tp;
  curve.fp = static_cast<int64_t>(dets.size()) - tp;

  const size_t n = curve.points.size();
  if (cfg.eleven_point_ap) {
    double total = 0.0;
    for (int level = 0; level <= 10; ++level) {
      const double r = level / 10.0;
      double best = 0.0;
      for (const PrPoint& pt : curve.points)
        if (pt.recall + 1e-9 >= r) best = std::max(best, pt.precision);
      total += best;
    }
    curve.ap = total / 11.0;
  } else {
    // Envelope from the right, integrated over recall increments.
    std::vector<double> env(n);
    double running = 0.0;
    for (size_t i = n; i-- > 0;) {
      running = std::max(running, curve.points[i].precision);
      env[i] = running;
    }
    double ap = 0.0, prev_recall = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (curve.points[i].recall > prev_recall) {
        ap += (curve.points[i].recall - prev_recall) * env[i];
        prev_recall = curve.points[i].recall;
      }
    }
    curve.ap = ap;
  }
  return curve;
}

double recall_at_n(const std::vector<Detection>& dets,
                   const std::vector<GroundTruthBox>& gts,
                   const EvalConfig& cfg, int n) {
  validate_eval_config(cfg);
  if (n < 1) throw ConfigError("recall_at_n: n must be positive");
  if (gts.empty()) return 1.0;
  std::vector<Detection> trimmed = top_n_per_image(dets, n);
  MatchResult m = greedy_match(trimmed, gts, cfg.iou_thresh);

  if (!cfg.per_image_recall) {
    int64_t matched = 0;
    for (char c : m.gt_matched) matched += c;
    return static_cast<double>(matched) / static_cast<double>(gts.size());
  }
  std::map<int64_t, std::pair<int64_t, int64_t>> per_image;  // matched, total
  for (size_t g = 0; g < gts.size(); ++g) {
    auto& entry = per_image[gts[g].image_id];
    entry.first += m.gt_matched[g];
    entry.second += 1;
  }
  double sum = 0.0;
  for (const auto& [id, entry] : per_image)
    sum += static_cast<double>(entry.first) / static_cast<double>(entry.second);
  return sum / static_cast<double>(per_image.size());
}

std::vector<std::pair<int, double>> recall_curve(
    const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
    const EvalConfig& cfg, const std::vector<int>& ns) {
  for (size_t i = 1; i < ns.size(); ++i)
    if (ns[i] < ns[i - 1])
      throw ValidationError("recall_curve: ns must be sorted ascending");
  std::vector<std::pair<int, double>> out;
  for (int n : ns) out.emplace_back(n, recall_at_n(dets, gts, cfg, n));
  return out;
}

SizeBucketRecall size_bucket_recall(const std::vector<Detection>& dets,
                                    const std::vector<GroundTruthBox>& gts,
                                    const std::map<int64_t, ImageSize>& sizes,
                                    const EvalConfig& cfg,
                                    const SizeBuckets& buckets) {
  validate_eval_config(cfg);
  validate_size_buckets(buckets);
  for (const GroundTruthBox& g : gts) {
    auto it = sizes.find(g.image_id);
    if (it == sizes.end() || it->second.width < 1 || it->second.height < 1)
      throw ValidationError("size_bucket_recall: no dimensions for image " +
                            std::to_string(g.image_id));
  }

  std::vector<Detection> trimmed = top_n_per_image(dets, cfg.top_n);
  MatchResult m = greedy_match(trimmed, gts, cfg.iou_thresh);

  SizeBucketRecall out;
  int64_t matched[3] = {0, 0, 0};
  int64_t total[3] = {0, 0, 0};
  for (size_t g = 0; g < gts.size(); ++g) {
    const ImageSize& sz = sizes.at(gts[g].image_id);
    const double fraction =
        box_area(gts[g].box) / (static_cast<double>(sz.width) * sz.height);
    const int bucket = fraction < buckets.small_bound ? 0
                       : fraction <= buckets.large_bound ? 1
                                                         : 2;
    total[bucket] += 1;
    matched[bucket] += m.gt_matched[g];
  }
  out.small_gt = total[0];
  out.medium_gt = total[1];
  out.large_gt = total[2];
  out.small = total[0] ? static_cast<double>(matched[0]) / total[0] : 1.0;
  out.medium = total[1] ? static_cast<double>(matched[1]) / total[1] : 1.0;
  out.large = total[2] ? static_cast<double>(matched[2]) / total[2] : 1.0;
  return out;
}

std::map<int64_t, double> recall_by_category(
    const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
    const EvalConfig& cfg) {
  validate_eval_config(cfg);
  std::vector<Detection> trimmed = top_n_per_image(dets, cfg.top_n);
  MatchResult m = greedy_match(trimmed, gts, cfg.iou_thresh);

  std::map<int64_t, std::pair<int64_t, int64_t>> tally;  // matched, total
  for (size_t g = 0; g < gts.size(); ++g) {
    auto& entry = tally[gts[g].category_id];
    entry.first += m.gt_matched[g];
    entry.second += 1;
  }
  std::map<int64_t, double> out;
  for (const auto& [cat, entry] : tally)
    out[cat] = static_cast<double>(entry.first) / static_cast<double>(entry.second);
  return out;
}

std::vector<Detection> tiled_inference(const Tensor& image,
                                       const Detector& detector, int tiles,
                                       const EvalConfig& cfg) {
  validate_eval_config(cfg);
  if (tiles < 1) throw ValidationError("tiled_inference: tile count must be positive");
  if (image.rank() != 2 && image.rank() != 3)
    throw ValidationError("tiled_inference: expected [H,W] or [H,W,C] image, got " +
                          image.shape_str());
  const int h = image.shape[0], w = image.shape[1];
  const int ch = image.rank() == 3 ? image.shape[2] : 1;

  // Balanced factor pair, long grid side along the long image side.
  int a = 1;
  for (int f = 1; f * f <= tiles; ++f)
    if (tiles % f == 0) a = f;
  const int b = tiles / a;
  const int cols = w >= h ? b : a;
  const int rows = w >= h ? a : b;
  if (w % cols != 0 || h % rows != 0)
    throw ValidationError("tiled_inference: " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " grid does not divide " +
                          std::to_string(w) + "x" + std::to_string(h));
  const int cw = w / cols, chh = h / rows;

  std::vector<Detection> pooled;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Tensor crop = image.rank() == 3 ? Tensor::zeros({chh, cw, ch})
                                      : Tensor::zeros({chh, cw});
      for (int i = 0; i < chh; ++i)
        for (int j = 0; j < cw; ++j)
          for (int k = 0; k < ch; ++k)
            crop.data[(static_cast<size_t>(i) * cw + j) * ch + k] =
                image.data[(static_cast<size_t>(r * chh + i) * w + c * cw + j) * ch + k];
      const double x0 = c * cw, y0 = r * chh;
      for (Detection d : detector(crop)) {
        d.box.x_min += x0;
        d.box.x_max += x0;
        d.box.y_min += y0;
        d.box.y_max += y0;
        pooled.push_back(std::move(d));
      }
    }
  }
  pooled = filter_by_score(std::move(pooled), cfg.score_thresh);
  std::vector<Detection> kept = nms_class_agnostic(pooled, cfg.nms_thresh);
  if (static_cast<int>(kept.size()) > cfg.top_n) kept.resize(cfg.top_n);
  return kept;
}

}  // namespace mavlkit
