#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mavlkit/geometry.hpp"
#include "mavlkit/oracles.hpp"

using namespace mavlkit;

namespace {

Box random_box(Rng& rng, double extent = 100.0) {
  double x0 = rng.uniform(0.0, extent), x1 = rng.uniform(0.0, extent);
  double y0 = rng.uniform(0.0, extent), y1 = rng.uniform(0.0, extent);
  return {std::min(x0, x1), std::min(y0, y1), std::max(x0, x1),
          std::max(y0, y1)};
}

}  // namespace

TEST_CASE("iou fixtures") {
  Box a{0, 0, 2, 2};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{5, 5, 6, 6}) == 0.0);
  CHECK(iou(a, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("degenerate boxes have zero iou against everything") {
  Box point{3, 3, 3, 3};
  CHECK(iou(point, point) == 0.0);
  CHECK(iou(point, Box{0, 0, 10, 10}) == 0.0);
  CHECK(iou(Box{0, 5, 10, 5}, Box{0, 0, 10, 10}) == 0.0);
}

TEST_CASE("giou fixtures") {
  Box a{0, 0, 1, 1};
  CHECK(giou(a, a) == 1.0);
  CHECK(giou(a, Box{1, 1, 2, 2}) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(giou(Box{2, 2, 2, 2}, Box{2, 2, 2, 2}) == 0.0);
}

TEST_CASE("iou and giou ranges, symmetry, ordering on random boxes") {
  Rng rng(31);
  for (int i = 0; i < 500; ++i) {
    Box a = random_box(rng), b = random_box(rng);
    double i1 = iou(a, b), i2 = iou(b, a);
    double g1 = giou(a, b), g2 = giou(b, a);
    CHECK(i1 == i2);
    CHECK(g1 == g2);
    CHECK(i1 >= 0.0);
    CHECK(i1 <= 1.0);
    CHECK(g1 > -1.0);
    CHECK(g1 <= 1.0);
    CHECK(g1 <= i1 + 1e-15);
  }
}

TEST_CASE("convert fixtures") {
  Box c = convert(Box{0.5, 0.5, 1, 1}, BoxForm::kCxcywh, BoxForm::kXyxy);
  CHECK(c.x_min == 0.0);
  CHECK(c.y_min == 0.0);
  CHECK(c.x_max == 1.0);
  CHECK(c.y_max == 1.0);

  Box w = convert(Box{10, 20, 30, 40}, BoxForm::kXywh, BoxForm::kXyxy);
  CHECK(w.x_min == 10.0);
  CHECK(w.y_min == 20.0);
  CHECK(w.x_max == 40.0);
  CHECK(w.y_max == 60.0);
}

TEST_CASE("convert round-trips 100 random boxes within 1e-12") {
  Rng rng(37);
  const BoxForm forms[] = {BoxForm::kXyxy, BoxForm::kCxcywh, BoxForm::kXywh};
  for (int i = 0; i < 100; ++i) {
    Box b = random_box(rng);
    for (BoxForm from : forms) {
      Box src = convert(b, BoxForm::kXyxy, from);
      for (BoxForm mid : forms) {
        Box back = convert(convert(src, from, mid), mid, from);
        CHECK(std::abs(back.x_min - src.x_min) < 1e-12);
        CHECK(std::abs(back.y_min - src.y_min) < 1e-12);
        CHECK(std::abs(back.x_max - src.x_max) < 1e-12);
        CHECK(std::abs(back.y_max - src.y_max) < 1e-12);
      }
    }
  }
}

TEST_CASE("convert rejects negative extents") {
  CHECK_THROWS_AS(
      (void)convert(Box{0, 0, -1, 5}, BoxForm::kXywh, BoxForm::kXyxy),
      ValidationError);
  CHECK_THROWS_AS(
      (void)convert(Box{5, 5, 1, 1}, BoxForm::kXyxy, BoxForm::kCxcywh),
      ValidationError);
}

TEST_CASE("nms fixtures") {
  std::vector<Detection> one = {{1, {0, 0, 5, 5}, 0.5, {}, {}}};
  CHECK(nms_class_agnostic(one, 0.5).size() == 1);
  CHECK(nms_class_agnostic({}, 0.5).empty());

  std::vector<Detection> dup = {{1, {0, 0, 5, 5}, 0.9, {}, {}},
                                {1, {0, 0, 5, 5}, 0.8, {}, {}}};
  auto kept = nms_class_agnostic(dup, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);

  std::vector<Detection> three = {{1, {0, 0, 10, 10}, 0.9, {}, {}},
                                  {1, {1, 1, 11, 11}, 0.8, {}, {}},
                                  {1, {20, 20, 30, 30}, 0.7, {}, {}}};
  kept = nms_class_agnostic(three, 0.5);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].score == 0.9);
  CHECK(kept[1].score == 0.7);
}

TEST_CASE("nms equal scores keep the earlier input index") {
  std::vector<Detection> dets = {{1, {0, 0, 5, 5}, 0.5, {}, {}},
                                 {1, {0.5, 0.5, 5.5, 5.5}, 0.5, {}, {}}};
  dets[0].source_query = "first";
  auto kept = nms_class_agnostic(dets, 0.3);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].source_query == "first");
}

TEST_CASE("nms properties: subsequence, pairwise bound, idempotence") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Detection> dets;
    const int n = 1 + rng.uniform_int(30);
    for (int i = 0; i < n; ++i)
      dets.push_back({1, random_box(rng, 40.0), rng.uniform(), {}, {}});
    const double thresh = rng.uniform(0.1, 0.9);
    auto kept = nms_class_agnostic(dets, thresh);

    for (size_t i = 0; i < kept.size(); ++i)
      for (size_t j = i + 1; j < kept.size(); ++j)
        CHECK(iou(kept[i].box, kept[j].box) <= thresh);
    for (size_t i = 1; i < kept.size(); ++i)
      CHECK(kept[i - 1].score >= kept[i].score);

    auto again = nms_class_agnostic(kept, thresh);
    REQUIRE(again.size() == kept.size());
    for (size_t i = 0; i < kept.size(); ++i)
      CHECK(again[i].score == kept[i].score);
  }
}

TEST_CASE("nms matches the quadratic reference on distinct-score inputs") {
  Rng rng(43);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> dets;
    const int n = rng.uniform_int(40);
    for (int i = 0; i < n; ++i) {
      // Distinct scores by construction: spread by index.
      dets.push_back(
          {1, random_box(rng, 30.0), (i + rng.uniform()) / (n + 1.0), {}, {}});
    }
    const double thresh = rng.uniform(0.2, 0.8);
    auto fast = nms_class_agnostic(dets, thresh);
    auto ref = oracle::nms_quadratic(dets, thresh);
    REQUIRE(fast.size() == ref.size());
    for (size_t i = 0; i < fast.size(); ++i) {
      CHECK(fast[i].score == ref[i].score);
      CHECK(fast[i].box.x_min == ref[i].box.x_min);
      CHECK(fast[i].box.y_max == ref[i].box.y_max);
    }
  }
}
