#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mavlkit/mask2box.hpp"
#include "mavlkit/oracles.hpp"
#include "mavlkit/pgm.hpp"

using namespace mavlkit;

namespace {

BinaryMask make_mask(int h, int w, const std::vector<std::pair<int, int>>& on) {
  BinaryMask m;
  m.h = h;
  m.w = w;
  m.fg.assign(static_cast<size_t>(h) * w, 0);
  for (auto [r, c] : on) m.fg[static_cast<size_t>(r) * w + c] = 1;
  return m;
}

BinaryMask random_mask(int h, int w, double density, Rng& rng) {
  BinaryMask m;
  m.h = h;
  m.w = w;
  m.fg.resize(static_cast<size_t>(h) * w);
  for (auto& v : m.fg) v = rng.uniform() < density;
  return m;
}

}  // namespace

TEST_CASE("filled rectangle is one component with a tight box") {
  BinaryMask m = make_mask(8, 10, {});
  for (int r = 2; r < 6; ++r)
    for (int c = 3; c < 8; ++c) m.fg[r * 10 + c] = 1;
  Labeling lab = connected_components(m);
  REQUIRE(lab.components.size() == 1);
  CHECK(lab.components[0].pixels == 20);
  CHECK(lab.components[0].box.x_min == 3);
  CHECK(lab.components[0].box.y_min == 2);
  CHECK(lab.components[0].box.x_max == 8);
  CHECK(lab.components[0].box.y_max == 6);
}

TEST_CASE("diagonal adjacency joins under 8-connectivity only") {
  BinaryMask m = make_mask(4, 4, {{1, 1}, {2, 2}});
  CHECK(connected_components(m, 8).components.size() == 1);
  CHECK(connected_components(m, 4).components.size() == 2);
  CHECK_THROWS_AS(connected_components(m, 6), ConfigError);
}

TEST_CASE("empty mask yields no components") {
  Labeling lab = connected_components(make_mask(5, 5, {}));
  CHECK(lab.components.empty());
  CHECK(components_to_boxes(lab).empty());
}

TEST_CASE("two blobs produce two tight detections") {
  BinaryMask m = make_mask(10, 10, {});
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) m.fg[r * 10 + c] = 1;
  for (int r = 6; r < 9; ++r)
    for (int c = 5; c < 9; ++c) m.fg[r * 10 + c] = 1;
  std::vector<Detection> dets = components_to_boxes(connected_components(m));
  REQUIRE(dets.size() == 2);
  CHECK(dets[0].box.x_max == 2);
  CHECK(dets[0].box.y_max == 3);
  CHECK(dets[1].box.x_min == 5);
  CHECK(dets[1].box.y_min == 6);
  CHECK(dets[1].box.x_max == 9);
  CHECK(dets[1].box.y_max == 9);
  for (const Detection& d : dets) CHECK(d.score == 1.0);
}

TEST_CASE("min_area filters components and can empty the list") {
  BinaryMask m = make_mask(6, 6, {{0, 0}, {3, 3}, {3, 4}, {4, 3}, {4, 4}});
  Labeling lab = connected_components(m);
  REQUIRE(lab.components.size() == 2);
  CHECK(components_to_boxes(lab, 2).size() == 1);
  CHECK(components_to_boxes(lab, 99).empty());
  CHECK_THROWS_AS(components_to_boxes(lab, -1), ConfigError);
}

TEST_CASE("single pixel uses the unit box convention") {
  Labeling lab = connected_components(make_mask(7, 9, {{4, 6}}));
  std::vector<Detection> dets = components_to_boxes(lab);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].box.x_min == 6);
  CHECK(dets[0].box.y_min == 4);
  CHECK(dets[0].box.x_max == 7);
  CHECK(dets[0].box.y_max == 5);
}

TEST_CASE("score map averages over each component") {
  BinaryMask m = make_mask(4, 4, {{0, 0}, {0, 1}, {3, 3}});
  Tensor scores = Tensor::zeros({4, 4});
  scores(0, 0) = 0.2;
  scores(0, 1) = 0.6;
  scores(3, 3) = 0.9;
  Labeling lab = connected_components(m);
  std::vector<Detection> dets = components_to_boxes(lab, 1, &scores);
  REQUIRE(dets.size() == 2);
  CHECK(dets[0].score == doctest::Approx(0.4));
  CHECK(dets[1].score == doctest::Approx(0.9));

  Tensor wrong = Tensor::zeros({3, 4});
  CHECK_THROWS_AS(components_to_boxes(lab, 1, &wrong), ValidationError);
}

TEST_CASE("labels are dense from one in raster order of first pixel") {
  // The snake touches (0,4) first, the loner at (1,0) second.
  BinaryMask m = make_mask(3, 5, {{0, 4}, {1, 4}, {1, 0}, {2, 2}});
  Labeling lab = connected_components(m, 4);
  REQUIRE(lab.components.size() == 3);
  CHECK(lab.labels[0 * 5 + 4] == 1);
  CHECK(lab.labels[1 * 5 + 4] == 1);
  CHECK(lab.labels[1 * 5 + 0] == 2);
  CHECK(lab.labels[2 * 5 + 2] == 3);
  for (size_t i = 0; i < lab.components.size(); ++i)
    CHECK(lab.components[i].label == static_cast<int>(i) + 1);
}

TEST_CASE("u-shapes that merge late still collapse to one label") {
  // Two arms meet only at the bottom row, forcing a union of two
  // provisional labels created rows earlier.
  BinaryMask m = make_mask(4, 5, {});
  for (int r = 0; r < 4; ++r) {
    m.fg[r * 5 + 0] = 1;
    m.fg[r * 5 + 4] = 1;
  }
  for (int c = 0; c < 5; ++c) m.fg[3 * 5 + c] = 1;
  Labeling lab = connected_components(m, 4);
  REQUIRE(lab.components.size() == 1);
  CHECK(lab.components[0].pixels == 4 + 4 + 3);
  CHECK(lab.components[0].box.x_max == 5);
  CHECK(lab.components[0].box.y_max == 4);
}

TEST_CASE("components partition the foreground") {
  Rng rng(91);
  for (int trial = 0; trial < 30; ++trial) {
    BinaryMask m = random_mask(20, 17, 0.45, rng);
    const int conn = trial % 2 ? 4 : 8;
    Labeling lab = connected_components(m, conn);
    std::vector<int64_t> counts(lab.components.size(), 0);
    for (size_t i = 0; i < m.fg.size(); ++i) {
      CHECK((lab.labels[i] > 0) == (m.fg[i] != 0));
      if (lab.labels[i] > 0) counts[lab.labels[i] - 1] += 1;
    }
    for (size_t k = 0; k < counts.size(); ++k)
      CHECK(counts[k] == lab.components[k].pixels);
  }
}

TEST_CASE("padding with background shifts boxes by exactly the pad offset") {
  Rng rng(93);
  BinaryMask m = random_mask(12, 15, 0.3, rng);
  Labeling base = connected_components(m);

  const int pad_top = 3, pad_left = 2;
  BinaryMask padded;
  padded.h = m.h + pad_top + 4;
  padded.w = m.w + pad_left + 5;
  padded.fg.assign(static_cast<size_t>(padded.h) * padded.w, 0);
  for (int r = 0; r < m.h; ++r)
    for (int c = 0; c < m.w; ++c)
      padded.fg[static_cast<size_t>(r + pad_top) * padded.w + c + pad_left] =
          m.fg[static_cast<size_t>(r) * m.w + c];
  Labeling shifted = connected_components(padded);

  REQUIRE(base.components.size() == shifted.components.size());
  for (size_t k = 0; k < base.components.size(); ++k) {
    CHECK(base.components[k].pixels == shifted.components[k].pixels);
    CHECK(base.components[k].box.x_min + pad_left == shifted.components[k].box.x_min);
    CHECK(base.components[k].box.y_min + pad_top == shifted.components[k].box.y_min);
    CHECK(base.components[k].box.x_max + pad_left == shifted.components[k].box.x_max);
    CHECK(base.components[k].box.y_max + pad_top == shifted.components[k].box.y_max);
  }
}

TEST_CASE("labeling equals the flood-fill reference on random masks") {
  Rng rng(95);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 1 + static_cast<int>(rng.uniform_int(64));
    const int w = 1 + static_cast<int>(rng.uniform_int(64));
    const double density = rng.uniform(0.2, 0.8);
    BinaryMask m = random_mask(h, w, density, rng);
    const int conn = trial % 2 ? 4 : 8;
    Labeling lab = connected_components(m, conn);
    std::vector<int> want = oracle::cc_brute(h, w, m.fg, conn);
    CHECK(lab.labels == want);
  }
}

TEST_CASE("grayscale binarization splits at the 128 midpoint") {
  Tensor gray = Tensor::zeros({1, 3});
  gray(0, 0) = 127.0;
  gray(0, 1) = 128.0;
  gray(0, 2) = 255.0;
  BinaryMask m = mask_from_gray(gray);
  CHECK(m.fg[0] == 0);
  CHECK(m.fg[1] == 1);
  CHECK(m.fg[2] == 1);
}

TEST_CASE("pgm round-trips bit-exactly and rejects malformed files") {
  Rng rng(97);
  Tensor img = Tensor::zeros({9, 13});
  for (double& v : img.data) v = static_cast<double>(rng.uniform_int(256));
  const std::string path = "mask_roundtrip.pgm";
  write_pgm(path, img);
  Tensor back = read_pgm(path);
  REQUIRE(back.shape == img.shape);
  for (int i = 0; i < img.numel(); ++i) CHECK(back.data[i] == img.data[i]);

  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "P2\n3 3\n255\n";
  }
  CHECK_THROWS_AS(read_pgm(path), ValidationError);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "P5\n# a comment\n4 2\n255\nabc";  // raster 5 bytes short
  }
  CHECK_THROWS_AS(read_pgm(path), ValidationError);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "P5\n0 2\n255\n";
  }
  CHECK_THROWS_AS(read_pgm(path), ValidationError);
  CHECK_THROWS_AS(read_pgm("missing_file.pgm"), ValidationError);
  std::remove(path.c_str());

  // Comments and odd whitespace in the header still parse.
  const std::string path2 = "mask_comment.pgm";
  {
    std::ofstream f(path2, std::ios::binary | std::ios::trunc);
    f << "P5 # format\n# width then height\n2\t1 # dims\n255\nAB";
  }
  Tensor t = read_pgm(path2);
  REQUIRE(t.shape == std::vector<int>{1, 2});
  CHECK(t.data[0] == static_cast<double>('A'));
  CHECK(t.data[1] == static_cast<double>('B'));
  std::remove(path2.c_str());
}
