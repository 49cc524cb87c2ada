#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <vector>

#include "doctest.h"
#include "mavlkit/pseudo_label.hpp"
#include "mavlkit/tensor.hpp"

using namespace mavlkit;

namespace {

Detection det(double x0, double y0, double x1, double y1, double score) {
  Detection d;
  d.image_id = 1;
  d.box = Box{x0, y0, x1, y1};
  d.score = score;
  return d;
}

GroundTruthBox gt(double x0, double y0, double x1, double y1,
                  bool known = true) {
  GroundTruthBox g;
  g.image_id = 1;
  g.box = Box{x0, y0, x1, y1};
  g.category_id = 1;
  g.known = known;
  return g;
}

bool same_detection(const Detection& a, const Detection& b) {
  return a.image_id == b.image_id && a.score == b.score &&
         a.box.x_min == b.box.x_min && a.box.y_min == b.box.y_min &&
         a.box.x_max == b.box.x_max && a.box.y_max == b.box.y_max &&
         a.source_query == b.source_query && a.category_id == b.category_id;
}

// Maps each output to a strictly increasing input index, i.e. checks the
// output really is a subsequence of the input.
bool is_subsequence(const std::vector<Detection>& out,
                    const std::vector<Detection>& in) {
  size_t cursor = 0;
  for (const Detection& o : out) {
    while (cursor < in.size() && !same_detection(in[cursor], o)) ++cursor;
    if (cursor == in.size()) return false;
    ++cursor;
  }
  return true;
}

std::vector<Detection> random_proposals(Rng* rng, int n) {
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i) {
    const double x = rng->uniform(0.0, 80.0);
    const double y = rng->uniform(0.0, 80.0);
    out.push_back(det(x, y, x + rng->uniform(2.0, 30.0),
                      y + rng->uniform(2.0, 30.0), rng->uniform()));
  }
  return out;
}

std::vector<GroundTruthBox> random_gt(Rng* rng, int n) {
  std::vector<GroundTruthBox> out;
  for (int i = 0; i < n; ++i) {
    const double x = rng->uniform(0.0, 80.0);
    const double y = rng->uniform(0.0, 80.0);
    out.push_back(
        gt(x, y, x + rng->uniform(2.0, 30.0), y + rng->uniform(2.0, 30.0)));
  }
  return out;
}

}  // namespace

TEST_CASE("score and overlap thresholds use the stated boundary semantics") {
  const std::vector<GroundTruthBox> known = {gt(0, 0, 10, 10)};
  // Nested boxes make the IoU exactly height/10.
  const Detection low_score = det(50, 50, 60, 60, 0.65);
  const Detection overlaps_known = det(0, 0, 10, 6, 0.8);   // IoU 0.6
  const Detection clear_of_known = det(0, 0, 10, 3, 0.8);   // IoU 0.3
  const Detection at_score_bound = det(50, 50, 60, 60, 0.7);
  const Detection at_iou_bound = det(0, 0, 10, 5, 0.9);     // IoU 0.5

  auto out = generate_unknown_pseudo_labels(
      {low_score, overlaps_known, clear_of_known, at_score_bound,
       at_iou_bound},
      known, {});
  REQUIRE(out.size() == 3);
  CHECK(same_detection(out[0], clear_of_known));
  CHECK(same_detection(out[1], at_score_bound));
  CHECK(same_detection(out[2], at_iou_bound));
}

TEST_CASE("empty inputs produce empty output") {
  CHECK(generate_unknown_pseudo_labels({}, {}, {}).empty());
  CHECK(generate_unknown_pseudo_labels({}, {gt(0, 0, 5, 5)}, {}).empty());
  // No known GT degrades to a pure score filter.
  auto out = generate_unknown_pseudo_labels(
      {det(0, 0, 5, 5, 0.9), det(0, 0, 5, 5, 0.1)}, {}, {});
  REQUIRE(out.size() == 1);
  CHECK(out[0].score == 0.9);
}

TEST_CASE("ground truth flagged unknown does not suppress proposals") {
  const Detection p = det(0, 0, 10, 10, 0.9);
  const std::vector<GroundTruthBox> unknown_only = {
      gt(0, 0, 10, 10, /*known=*/false)};
  auto out = generate_unknown_pseudo_labels({p}, unknown_only, {});
  REQUIRE(out.size() == 1);

  const std::vector<GroundTruthBox> known_copy = {gt(0, 0, 10, 10)};
  CHECK(generate_unknown_pseudo_labels({p}, known_copy, {}).empty());
}

TEST_CASE("config validation rejects out-of-range thresholds") {
  PseudoLabelConfig cfg;
  cfg.min_score = 1.5;
  CHECK_THROWS_AS(generate_unknown_pseudo_labels({}, {}, cfg), ConfigError);
  cfg = PseudoLabelConfig{};
  cfg.max_known_iou = -0.1;
  CHECK_THROWS_AS(generate_unknown_pseudo_labels({}, {}, cfg), ConfigError);
  cfg = PseudoLabelConfig{};
  cfg.nms_thresh = 2.0;
  CHECK_THROWS_AS(generate_unknown_pseudo_labels({}, {}, cfg), ConfigError);
}

TEST_CASE("every output satisfies both predicates and input order") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto proposals = random_proposals(&rng, 40);
    auto known = random_gt(&rng, 5);
    PseudoLabelConfig cfg;
    auto out = generate_unknown_pseudo_labels(proposals, known, cfg);
    CHECK(is_subsequence(out, proposals));
    for (const Detection& d : out) {
      CHECK(d.score >= cfg.min_score);
      for (const GroundTruthBox& g : known) {
        CHECK(iou(d.box, g.box) <= cfg.max_known_iou);
      }
    }
  }
}

TEST_CASE("re-applying the filter changes nothing") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    auto proposals = random_proposals(&rng, 30);
    auto known = random_gt(&rng, 4);
    for (bool with_nms : {false, true}) {
      PseudoLabelConfig cfg;
      cfg.apply_nms = with_nms;
      auto once = generate_unknown_pseudo_labels(proposals, known, cfg);
      auto twice = generate_unknown_pseudo_labels(once, known, cfg);
      REQUIRE(twice.size() == once.size());
      for (size_t i = 0; i < once.size(); ++i) {
        CHECK(same_detection(twice[i], once[i]));
      }
    }
  }
}

TEST_CASE("tightening either threshold never grows the output") {
  Rng rng(37);
  auto proposals = random_proposals(&rng, 60);
  auto known = random_gt(&rng, 6);

  auto contains_all = [](const std::vector<Detection>& big,
                         const std::vector<Detection>& small) {
    return is_subsequence(small, big);
  };

  std::vector<Detection> prev;
  for (double s : {0.0, 0.3, 0.5, 0.7, 0.9, 1.0}) {
    PseudoLabelConfig cfg;
    cfg.min_score = s;
    auto out = generate_unknown_pseudo_labels(proposals, known, cfg);
    if (s > 0.0) {
      CHECK(out.size() <= prev.size());
      CHECK(contains_all(prev, out));
    }
    prev = out;
  }

  prev.clear();
  for (double m : {1.0, 0.7, 0.5, 0.3, 0.1, 0.0}) {
    PseudoLabelConfig cfg;
    cfg.min_score = 0.2;
    cfg.max_known_iou = m;
    auto out = generate_unknown_pseudo_labels(proposals, known, cfg);
    if (m < 1.0) {
      CHECK(out.size() <= prev.size());
      CHECK(contains_all(prev, out));
    }
    prev = out;
  }
}

TEST_CASE("optional suppression collapses overlapping survivors") {
  // Two copies of the same confident unknown box plus one far away.
  const Detection a = det(0, 0, 10, 10, 0.9);
  const Detection b = det(0, 0, 10, 10, 0.8);
  const Detection c = det(50, 50, 60, 60, 0.85);
  PseudoLabelConfig cfg;
  auto plain = generate_unknown_pseudo_labels({a, b, c}, {}, cfg);
  CHECK(plain.size() == 3);

  cfg.apply_nms = true;
  auto suppressed = generate_unknown_pseudo_labels({a, b, c}, {}, cfg);
  REQUIRE(suppressed.size() == 2);
  // Suppression order: best score first.
  CHECK(same_detection(suppressed[0], a));
  CHECK(same_detection(suppressed[1], c));
}
