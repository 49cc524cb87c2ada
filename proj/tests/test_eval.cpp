#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mavlkit/eval.hpp"
#include "mavlkit/oracles.hpp"

using namespace mavlkit;

namespace {

Detection det(int64_t img, Box b, double score) {
  Detection d;
  d.image_id = img;
  d.box = b;
  d.score = score;
  return d;
}

GroundTruthBox gt(int64_t img, Box b, int64_t cat = 1) {
  GroundTruthBox g;
  g.image_id = img;
  g.box = b;
  g.category_id = cat;
  return g;
}

Box rand_box(Rng& rng, double extent = 100.0) {
  const double x1 = rng.uniform(0.0, extent), x2 = rng.uniform(0.0, extent);
  const double y1 = rng.uniform(0.0, extent), y2 = rng.uniform(0.0, extent);
  return {std::min(x1, x2), std::min(y1, y2), std::max(x1, x2) + 1.0,
          std::max(y1, y2) + 1.0};
}

}  // namespace

TEST_CASE("eval config validation") {
  EvalConfig cfg;
  CHECK_NOTHROW(validate_eval_config(cfg));
  cfg.iou_thresh = 1.2;
  CHECK_THROWS_AS(validate_eval_config(cfg), ConfigError);
  cfg = {};
  cfg.top_n = 0;
  CHECK_THROWS_AS(validate_eval_config(cfg), ConfigError);
  cfg = {};
  cfg.score_thresh = -0.1;
  CHECK_THROWS_AS(validate_eval_config(cfg), ConfigError);
  SizeBuckets b;
  b.small_bound = 0.3;
  b.large_bound = 0.2;
  CHECK_THROWS_AS(validate_size_buckets(b), ConfigError);
}

TEST_CASE("combine pools sources, dedups via NMS, and truncates") {
  EvalConfig cfg;

  std::vector<Detection> one = {det(1, {0, 0, 10, 10}, 0.8),
                                det(1, {20, 20, 30, 30}, 0.6)};
  std::vector<Detection> alone = combine_query_detections({one}, cfg);
  REQUIRE(alone.size() == 2);
  CHECK(alone[0].score == 0.8);

  // The same box from two queries keeps only the higher score.
  std::vector<Detection> a = {det(1, {0, 0, 10, 10}, 0.9)};
  std::vector<Detection> b = {det(1, {0, 0, 10, 10}, 0.8)};
  std::vector<Detection> merged = combine_query_detections({a, b}, cfg);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].score == 0.9);

  cfg.top_n = 2;
  std::vector<Detection> c = {det(1, {50, 50, 60, 60}, 0.7)};
  std::vector<Detection> d = {det(1, {70, 0, 80, 10}, 0.95)};
  std::vector<Detection> top = combine_query_detections({a, c, d}, cfg);
  REQUIRE(top.size() == 2);
  CHECK(top[0].score == 0.95);
  CHECK(top[1].score == 0.9);
}

TEST_CASE("combine equals the pool+quadratic-NMS+sort reference") {
  Rng rng(71);
  for (int trial = 0; trial < 40; ++trial) {
    EvalConfig cfg;
    cfg.top_n = 2 + static_cast<int>(rng.uniform_int(4));
    cfg.nms_thresh = 0.4;
    std::vector<std::vector<Detection>> sources(3);
    std::vector<Detection> pooled;
    for (auto& src : sources) {
      const int n = 1 + static_cast<int>(rng.uniform_int(5));
      for (int i = 0; i < n; ++i) {
        src.push_back(det(1, rand_box(rng), rng.uniform()));
        pooled.push_back(src.back());
      }
    }
    std::vector<Detection> got = combine_query_detections(sources, cfg);
    std::vector<Detection> want = oracle::nms_quadratic(pooled, cfg.nms_thresh);
    if (static_cast<int>(want.size()) > cfg.top_n) want.resize(cfg.top_n);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].score == want[i].score);
      CHECK(got[i].box.x_min == want[i].box.x_min);
    }
    // Survivors never overlap beyond the NMS threshold.
    for (size_t i = 0; i < got.size(); ++i)
      for (size_t j = i + 1; j < got.size(); ++j)
        CHECK(iou(got[i].box, got[j].box) <= cfg.nms_thresh);
  }
}

TEST_CASE("combine is order-independent across sources with distinct scores") {
  Rng rng(73);
  EvalConfig cfg;
  cfg.top_n = 5;
  std::vector<std::vector<Detection>> sources(3);
  double score = 0.91;
  for (auto& src : sources)
    for (int i = 0; i < 4; ++i) {
      src.push_back(det(2, rand_box(rng), score));
      score -= 0.03;
    }
  std::vector<Detection> forward = combine_query_detections(sources, cfg);
  std::vector<std::vector<Detection>> reversed(sources.rbegin(), sources.rend());
  std::vector<Detection> backward = combine_query_detections(reversed, cfg);
  REQUIRE(forward.size() == backward.size());
  for (size_t i = 0; i < forward.size(); ++i) {
    CHECK(forward[i].score == backward[i].score);
    CHECK(forward[i].box.x_min == backward[i].box.x_min);
  }
}

TEST_CASE("combine applies the optional score floor and rejects mixed images") {
  EvalConfig cfg;
  cfg.score_thresh = 0.7;
  std::vector<Detection> src = {det(1, {0, 0, 10, 10}, 0.71),
                                det(1, {20, 0, 30, 10}, 0.7),
                                det(1, {40, 0, 50, 10}, 0.69)};
  std::vector<Detection> kept = combine_query_detections({src}, cfg);
  REQUIRE(kept.size() == 2);  // the boundary score survives
  CHECK(kept[1].score == 0.7);

  std::vector<Detection> mixed = {det(1, {0, 0, 10, 10}, 0.9),
                                  det(2, {0, 0, 10, 10}, 0.8)};
  CHECK_THROWS_AS(combine_query_detections({mixed}, EvalConfig{}), ValidationError);
}

TEST_CASE("average precision fixtures") {
  EvalConfig cfg;
  std::vector<GroundTruthBox> gts = {gt(1, {0, 0, 10, 10})};

  // Single detection overlapping its box at IoU above threshold.
  std::vector<Detection> hit = {det(1, {0, 0, 8, 10}, 0.9)};
  REQUIRE(iou(hit[0].box, gts[0].box) == doctest::Approx(0.8));
  PRCurve c1 = average_precision(hit, gts, cfg);
  CHECK(c1.ap == doctest::Approx(1.0));
  CHECK(c1.tp == 1);
  CHECK(c1.fp == 0);

  std::vector<Detection> miss = {det(1, {50, 50, 60, 60}, 0.9)};
  PRCurve c2 = average_precision(miss, gts, cfg);
  CHECK(c2.ap == doctest::Approx(0.0));
  CHECK(c2.fp == 1);

  // Two GT; detections TP(0.9), FP(0.8), TP(0.7):
  // AP = 0.5*1 + 0.5*(2/3).
  std::vector<GroundTruthBox> gts2 = {gt(1, {0, 0, 10, 10}),
                                      gt(1, {20, 20, 30, 30})};
  std::vector<Detection> run = {det(1, {0, 0, 10, 10}, 0.9),
                                det(1, {40, 40, 50, 50}, 0.8),
                                det(1, {20, 20, 30, 30}, 0.7)};
  PRCurve c3 = average_precision(run, gts2, cfg);
  CHECK(c3.ap == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0).epsilon(1e-9));
  CHECK(c3.tp == 2);
  CHECK(c3.fp == 1);
  for (size_t i = 1; i < c3.points.size(); ++i)
    CHECK(c3.points[i].recall >= c3.points[i - 1].recall);

  // Same instance under 11-point interpolation:
  // levels 0..0.5 read precision 1, levels 0.6..1.0 read 2/3.
  EvalConfig eleven = cfg;
  eleven.eleven_point_ap = true;
  PRCurve c4 = average_precision(run, gts2, eleven);
  CHECK(c4.ap == doctest::Approx((6.0 + 5.0 * 2.0 / 3.0) / 11.0).epsilon(1e-9));
}

TEST_CASE("average precision conventions for empty ground truth") {
  EvalConfig cfg;
  PRCurve empty = average_precision({}, {}, cfg);
  CHECK(empty.ap == 1.0);
  CHECK(empty.gt == 0);
  PRCurve spurious = average_precision({det(1, {0, 0, 5, 5}, 0.5)}, {}, cfg);
  CHECK(spurious.ap == 0.0);
  CHECK(spurious.fp == 1);
}

TEST_CASE("average precision agrees with prefix re-matching oracle") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    EvalConfig cfg;
    cfg.iou_thresh = trial % 3 == 0 ? 0.3 : 0.5;
    const int images = 1 + static_cast<int>(rng.uniform_int(2));
    std::vector<GroundTruthBox> gts;
    std::vector<Detection> dets;
    for (int img = 1; img <= images; ++img) {
      const int ng = static_cast<int>(rng.uniform_int(5));
      for (int g = 0; g < ng; ++g) gts.push_back(gt(img, rand_box(rng)));
      const int nd = static_cast<int>(rng.uniform_int(8));
      for (int d = 0; d < nd; ++d) {
        // Half the detections perturb a GT box so TPs actually occur, and
        // half the trials quantize scores to force ties.
        Box b = (!gts.empty() && rng.uniform() < 0.5)
                    ? gts[rng.uniform_int(gts.size())].box
                    : rand_box(rng);
        b.x_max += rng.uniform(0.0, 6.0);
        double s = rng.uniform();
        if (trial % 2 == 0) s = std::round(s * 10.0) / 10.0;
        dets.push_back(det(img, b, s));
      }
    }
    PRCurve curve = average_precision(dets, gts, cfg);
    const double want = oracle::ap_brute(dets, gts, cfg.iou_thresh);
    CHECK(std::abs(curve.ap - want) <= 1e-12);
  }
}

TEST_CASE("recall fixtures and conventions") {
  EvalConfig cfg;
  std::vector<GroundTruthBox> gts = {gt(1, {0, 0, 10, 10}),
                                     gt(1, {20, 20, 30, 30}),
                                     gt(1, {40, 40, 50, 50})};
  std::vector<Detection> super = {det(1, {0, 0, 10, 10}, 0.9),
                                  det(1, {20, 20, 30, 30}, 0.8),
                                  det(1, {40, 40, 50, 50}, 0.7),
                                  det(1, {60, 60, 70, 70}, 0.6)};
  CHECK(recall_at_n(super, gts, cfg, 50) == doctest::Approx(1.0));
  CHECK(recall_at_n({}, gts, cfg, 50) == doctest::Approx(0.0));
  CHECK(recall_at_n(super, gts, cfg, 2) == doctest::Approx(2.0 / 3.0));
  CHECK(recall_at_n({}, {}, cfg, 10) == doctest::Approx(1.0));
  CHECK_THROWS_AS(recall_at_n(super, gts, cfg, 0), ConfigError);
}

TEST_CASE("recall is monotone in n and in threshold relaxation") {
  Rng rng(79);
  EvalConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<GroundTruthBox> gts;
    std::vector<Detection> dets;
    for (int g = 0; g < 6; ++g) gts.push_back(gt(1, rand_box(rng)));
    for (int d = 0; d < 12; ++d) {
      Box b = gts[rng.uniform_int(gts.size())].box;
      b.x_min -= rng.uniform(0.0, 10.0);
      dets.push_back(det(1, b, rng.uniform()));
    }
    double prev = 0.0;
    for (int n : {1, 3, 6, 12}) {
      const double r = recall_at_n(dets, gts, cfg, n);
      CHECK(r >= prev);
      prev = r;
    }
    EvalConfig loose = cfg;
    loose.iou_thresh = 0.25;
    CHECK(recall_at_n(dets, gts, loose, 6) >= recall_at_n(dets, gts, cfg, 6));
  }
}

TEST_CASE("recall curve composes pointwise and saturates") {
  Rng rng(83);
  EvalConfig cfg;
  std::vector<GroundTruthBox> gts;
  std::vector<Detection> dets;
  for (int g = 0; g < 5; ++g) gts.push_back(gt(1, rand_box(rng)));
  for (int d = 0; d < 8; ++d)
    dets.push_back(det(1, gts[d % gts.size()].box, rng.uniform()));

  auto curve = recall_curve(dets, gts, cfg, {1, 3, 8, 20});
  REQUIRE(curve.size() == 4);
  for (const auto& [n, r] : curve)
    CHECK(r == doctest::Approx(recall_at_n(dets, gts, cfg, n)));
  // Once n reaches the detection count the curve can no longer move.
  CHECK(curve[2].second == doctest::Approx(curve[3].second));
  CHECK_THROWS_AS(recall_curve(dets, gts, cfg, {5, 3}), ValidationError);
}

TEST_CASE("pooled vs per-image recall") {
  EvalConfig cfg;
  std::vector<GroundTruthBox> gts = {gt(1, {0, 0, 10, 10}),
                                     gt(2, {0, 0, 10, 10}),
                                     gt(2, {20, 20, 30, 30}),
                                     gt(2, {40, 40, 50, 50})};
  std::vector<Detection> dets = {det(1, {0, 0, 10, 10}, 0.9),
                                 det(2, {0, 0, 10, 10}, 0.8)};
  CHECK(recall_at_n(dets, gts, cfg, 50) == doctest::Approx(0.5));
  EvalConfig per_image = cfg;
  per_image.per_image_recall = true;
  CHECK(recall_at_n(dets, gts, per_image, 50) ==
        doctest::Approx((1.0 + 1.0 / 3.0) / 2.0));
}

TEST_CASE("size buckets partition ground truth by area fraction") {
  EvalConfig cfg;
  std::map<int64_t, ImageSize> sizes = {{1, {100, 100}}};
  std::vector<GroundTruthBox> gts = {gt(1, {0, 0, 20, 20}),    // 4% -> S
                                     gt(1, {30, 0, 55, 40}),   // 10% -> M
                                     gt(1, {0, 50, 50, 100})}; // 25% -> L
  std::vector<Detection> dets = {det(1, {0, 0, 20, 20}, 0.9),
                                 det(1, {0, 50, 50, 100}, 0.8)};
  SizeBucketRecall r = size_bucket_recall(dets, gts, sizes, cfg);
  CHECK(r.small_gt == 1);
  CHECK(r.medium_gt == 1);
  CHECK(r.large_gt == 1);
  CHECK(r.small_gt + r.medium_gt + r.large_gt == static_cast<int64_t>(gts.size()));
  CHECK(r.small == doctest::Approx(1.0));
  CHECK(r.medium == doctest::Approx(0.0));
  CHECK(r.large == doctest::Approx(1.0));

  std::map<int64_t, ImageSize> missing;
  CHECK_THROWS_AS(size_bucket_recall(dets, gts, missing, cfg), ValidationError);
}

TEST_CASE("bucket recall reuses the global matching instead of re-matching") {
  // One detection overlaps a medium and a large box; globally it matches the
  // medium one (higher IoU), so the large bucket stays at zero even though a
  // large-only rematch would have claimed the detection.
  EvalConfig cfg;
  std::map<int64_t, ImageSize> sizes = {{1, {100, 100}}};
  std::vector<GroundTruthBox> gts = {gt(1, {0, 0, 45, 40}),   // 18% -> M
                                     gt(1, {0, 0, 50, 44})};  // 22% -> L
  std::vector<Detection> dets = {det(1, {0, 0, 47, 42}, 0.9)};
  REQUIRE(iou(dets[0].box, gts[0].box) > iou(dets[0].box, gts[1].box));
  REQUIRE(iou(dets[0].box, gts[1].box) > cfg.iou_thresh);
  SizeBucketRecall r = size_bucket_recall(dets, gts, sizes, cfg);
  CHECK(r.medium == doctest::Approx(1.0));
  CHECK(r.large == doctest::Approx(0.0));
}

TEST_CASE("per-category recall from one class-agnostic matching") {
  EvalConfig cfg;
  std::vector<GroundTruthBox> gts = {gt(1, {0, 0, 10, 10}, 7),
                                     gt(1, {20, 20, 30, 30}, 7),
                                     gt(1, {40, 40, 50, 50}, 9)};
  std::vector<Detection> dets = {det(1, {0, 0, 10, 10}, 0.9),
                                 det(1, {40, 40, 50, 50}, 0.8)};
  auto rc = recall_by_category(dets, gts, cfg);
  REQUIRE(rc.size() == 2);
  CHECK(rc.at(7) == doctest::Approx(0.5));
  CHECK(rc.at(9) == doctest::Approx(1.0));
  CHECK(rc.count(11) == 0);

  // A single category collapses to plain recall.
  std::vector<GroundTruthBox> solo = {gt(1, {0, 0, 10, 10}, 3),
                                      gt(1, {20, 20, 30, 30}, 3)};
  auto rc2 = recall_by_category(dets, solo, cfg);
  CHECK(rc2.at(3) == doctest::Approx(recall_at_n(dets, solo, cfg, cfg.top_n)));
}

TEST_CASE("tiled inference translates boxes by crop origin") {
  EvalConfig cfg;
  // 200x100 image, two tiles -> 1x2 grid of 100x100 crops.
  Tensor image = Tensor::zeros({100, 200});
  int calls = 0;
  Detector detector = [&calls](const Tensor& crop) {
    REQUIRE(crop.shape == std::vector<int>{100, 100});
    ++calls;
    std::vector<Detection> out;
    Detection d;
    d.box = {2, 3, 5, 6};
    d.score = 0.9 - 0.1 * calls;
    out.push_back(d);
    return out;
  };
  std::vector<Detection> dets = tiled_inference(image, detector, 2, cfg);
  REQUIRE(calls == 2);
  REQUIRE(dets.size() == 2);
  // Crops are visited row-major; the second crop starts at x=100.
  CHECK(dets[0].box.x_min == 2);
  CHECK(dets[1].box.x_min == 102);
  CHECK(dets[1].box.y_min == 3);
  CHECK(dets[1].box.x_max == 105);
  CHECK(dets[1].box.y_max == 6);
}

TEST_CASE("single tile equals plain detection plus NMS") {
  EvalConfig cfg;
  Tensor image = Tensor::zeros({64, 64});
  Detector detector = [](const Tensor&) {
    std::vector<Detection> out;
    Detection a;
    a.box = {0, 0, 10, 10};
    a.score = 0.9;
    Detection b;
    b.box = {0, 0, 10, 10};
    b.score = 0.5;
    Detection c;
    c.box = {30, 30, 40, 40};
    c.score = 0.7;
    out = {a, b, c};
    return out;
  };
  std::vector<Detection> tiled = tiled_inference(image, detector, 1, cfg);
  std::vector<Detection> plain = nms_class_agnostic(detector(image), cfg.nms_thresh);
  REQUIRE(tiled.size() == plain.size());
  for (size_t i = 0; i < tiled.size(); ++i) {
    CHECK(tiled[i].score == plain[i].score);
    CHECK(tiled[i].box.x_min == plain[i].box.x_min);
  }
}

TEST_CASE("tile grid orientation follows the long image side") {
  EvalConfig cfg;
  std::vector<std::vector<int>> seen;
  Detector recorder = [&seen](const Tensor& crop) {
    seen.push_back(crop.shape);
    return std::vector<Detection>{};
  };
  // Wide image: 8 tiles arrange as 2 rows x 4 cols of 32x64 crops.
  tiled_inference(Tensor::zeros({64, 256}), recorder, 8, cfg);
  REQUIRE(seen.size() == 8);
  for (const auto& s : seen) CHECK(s == std::vector<int>{32, 64});
  seen.clear();
  // Tall image: same count arranges as 4 rows x 2 cols.
  tiled_inference(Tensor::zeros({256, 64}), recorder, 8, cfg);
  REQUIRE(seen.size() == 8);
  for (const auto& s : seen) CHECK(s == std::vector<int>{64, 32});

  CHECK_THROWS_AS(tiled_inference(Tensor::zeros({10, 10}), recorder, 8, cfg),
                  ValidationError);
  CHECK_THROWS_AS(tiled_inference(Tensor::zeros({64, 64}), recorder, 0, cfg),
                  ValidationError);
}

TEST_CASE("objects confined to distinct tiles are all recovered") {
  // Bright 8x8 squares, one per quadrant; the toy detector reports the
  // bounding box of bright pixels in its crop.
  EvalConfig cfg;
  Tensor image = Tensor::zeros({64, 64});
  const std::vector<std::pair<int, int>> corners = {{4, 4}, {4, 36}, {36, 4}, {40, 44}};
  for (auto [r, c] : corners)
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) image.data[(r + i) * 64 + c + j] = 1.0;

  Detector bright_box = [](const Tensor& crop) {
    const int h = crop.shape[0], w = crop.shape[1];
    int rmin = h, rmax = -1, cmin = w, cmax = -1;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        if (crop.data[i * w + j] > 0.5) {
          rmin = std::min(rmin, i);
          rmax = std::max(rmax, i);
          cmin = std::min(cmin, j);
          cmax = std::max(cmax, j);
        }
    std::vector<Detection> out;
    if (rmax >= 0) {
      Detection d;
      d.box = {static_cast<double>(cmin), static_cast<double>(rmin),
               static_cast<double>(cmax + 1), static_cast<double>(rmax + 1)};
      d.score = 0.9;
      out.push_back(d);
    }
    return out;
  };

  std::vector<Detection> dets = tiled_inference(image, bright_box, 4, cfg);
  REQUIRE(dets.size() == 4);
  std::vector<GroundTruthBox> gts;
  for (auto [r, c] : corners)
    gts.push_back(gt(0, {static_cast<double>(c), static_cast<double>(r),
                         static_cast<double>(c + 8), static_cast<double>(r + 8)}));
  CHECK(recall_at_n(dets, gts, cfg, 50) == doctest::Approx(1.0));
}
