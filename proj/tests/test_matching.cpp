#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mavlkit/matching.hpp"
#include "mavlkit/nn.hpp"
#include "mavlkit/oracles.hpp"

using namespace mavlkit;

namespace {

std::vector<int> pred_vector(const Assignment& a) {
  std::vector<int> v;
  for (int t = 0; t < static_cast<int>(a.pairs.size()); ++t) {
    for (const auto& [p, tt] : a.pairs)
      if (tt == t) v.push_back(p);
  }
  return v;
}

// Random detection set with logits in a range where the probability form and
// the log-sum-exp form of BCE agree to full precision.
DetectionSetVar random_set(GradTape& t, Rng& rng, int q, Tensor* logits_out,
                           Tensor* boxes_out) {
  Tensor boxes = Tensor::zeros({q, 4});
  for (int i = 0; i < q; ++i) {
    boxes(i, 0) = rng.uniform(0.2, 0.8);
    boxes(i, 1) = rng.uniform(0.2, 0.8);
    boxes(i, 2) = rng.uniform(0.05, 0.4);
    boxes(i, 3) = rng.uniform(0.05, 0.4);
  }
  Tensor logits = Tensor::zeros({q});
  for (double& e : logits.data) e = rng.uniform(-4.0, 4.0);
  if (logits_out) *logits_out = logits;
  if (boxes_out) *boxes_out = boxes;
  return {t.leaf(boxes), t.leaf(logits)};
}

std::vector<TargetBox> random_targets(Rng& rng, int m) {
  std::vector<TargetBox> tg(m);
  for (TargetBox& g : tg) {
    g.cx = rng.uniform(0.2, 0.8);
    g.cy = rng.uniform(0.2, 0.8);
    g.w = rng.uniform(0.05, 0.4);
    g.h = rng.uniform(0.05, 0.4);
  }
  return tg;
}

}  // namespace

TEST_CASE("hungarian fixtures") {
  Assignment a = hungarian(Tensor::matrix({{5}}));
  REQUIRE(a.pairs.size() == 1);
  CHECK(a.pairs[0] == std::pair{0, 0});

  a = hungarian(Tensor::matrix({{1, 2}, {2, 4}}));
  CHECK(assignment_total_cost(Tensor::matrix({{1, 2}, {2, 4}}), a) == 4.0);
  CHECK(pred_vector(a) == std::vector<int>{1, 0});
}

TEST_CASE("hungarian rejects bad inputs") {
  CHECK_THROWS_AS((void)hungarian(Tensor::matrix({{1, 2, 3}})),
                  ValidationError);
  Tensor bad = Tensor::matrix({{1.0}, {std::nan("")}});
  CHECK_THROWS_AS((void)hungarian(bad), ValidationError);
}

TEST_CASE("hungarian equals brute force on square integer costs") {
  Rng rng(51);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + rng.uniform_int(5);  // up to 6x6
    Tensor cost = Tensor::zeros({n, n});
    // Small integer range forces plenty of cost ties.
    for (double& e : cost.data) e = rng.uniform_int(10);
    Assignment a = hungarian(cost);
    std::vector<int> brute = oracle::hungarian_brute(cost);
    double bt = 0;
    for (int t = 0; t < n; ++t) bt += cost(brute[t], t);
    CHECK(assignment_total_cost(cost, a) == bt);
    CHECK(pred_vector(a) == brute);
  }
}

TEST_CASE("hungarian equals brute force on rectangular float costs") {
  Rng rng(53);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 1 + rng.uniform_int(5);
    const int n = m + rng.uniform_int(4);
    Tensor cost = Tensor::zeros({n, m});
    for (double& e : cost.data) e = rng.uniform(-3.0, 3.0);
    Assignment a = hungarian(cost);
    std::vector<int> brute = oracle::hungarian_brute(cost);
    CHECK(pred_vector(a) == brute);
    CHECK(static_cast<int>(a.unmatched_preds.size()) == n - m);
    for (size_t i = 1; i < a.unmatched_preds.size(); ++i)
      CHECK(a.unmatched_preds[i - 1] < a.unmatched_preds[i]);
  }
}

TEST_CASE("match_cost fixtures") {
  DetectionSetValue preds;
  preds.boxes = Tensor::matrix({{0.5, 0.5, 0.2, 0.2}});
  preds.objectness = Tensor::vector({1.0});
  std::vector<TargetBox> tg = {{0.5, 0.5, 0.2, 0.2, true}};
  Tensor c = match_cost(preds, tg, {1, 1, 1});
  CHECK(c(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));

  preds.boxes = Tensor::matrix({{0.3, 0.3, 0.1, 0.1}, {0.7, 0.7, 0.2, 0.2}});
  preds.objectness = Tensor::vector({0.25, 0.75});
  c = match_cost(preds, tg, {1, 0, 0});
  CHECK(c(0, 0) == -0.25);
  CHECK(c(1, 0) == -0.75);

  preds.boxes = Tensor::matrix({{0.5, 0.5, 0.2, 0.2}});
  preds.objectness = Tensor::vector({0.5});
  std::vector<TargetBox> tg2 = {{0.5, 0.5, 0.4, 0.4, true}};
  c = match_cost(preds, tg2, {0, 1, 0});
  CHECK(c(0, 0) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("set_loss vanishes for perfect confident predictions") {
  GradTape t;
  Tensor boxes = Tensor::matrix({{0.3, 0.3, 0.2, 0.2}, {0.7, 0.7, 0.1, 0.1}});
  Tensor logits = Tensor::vector({30.0, -30.0});
  std::vector<TargetBox> tg = {{0.3, 0.3, 0.2, 0.2, true}};
  VarId loss =
      set_loss(t, {{t.leaf(boxes), t.leaf(logits)}}, tg, LossWeights{});
  CHECK(t.val(loss).data[0] < 1e-6);
}

TEST_CASE("set_loss over identical sets is additive") {
  Rng rng(57);
  GradTape t;
  Tensor logits, boxes;
  DetectionSetVar s = random_set(t, rng, 6, &logits, &boxes);
  std::vector<TargetBox> tg = random_targets(rng, 3);
  const double one = t.val(set_loss(t, {s}, tg, LossWeights{})).data[0];
  const double six =
      t.val(set_loss(t, {s, s, s, s, s, s}, tg, LossWeights{})).data[0];
  CHECK(std::abs(six - 6.0 * one) < 1e-12);
}

TEST_CASE("set_loss is invariant to prediction and target order") {
  Rng rng(59);
  Tensor boxes, logits;
  {
    GradTape tmp;
    random_set(tmp, rng, 6, &logits, &boxes);
  }
  std::vector<TargetBox> tg = random_targets(rng, 4);

  GradTape t1;
  const double base =
      t1.val(set_loss(t1, {{t1.leaf(boxes), t1.leaf(logits)}}, tg,
                      LossWeights{}))
          .data[0];

  // Rotate predictions and reverse targets.
  Tensor boxes2 = boxes, logits2 = logits;
  const int q = boxes.rows();
  for (int i = 0; i < q; ++i) {
    const int j = (i + 3) % q;
    for (int k = 0; k < 4; ++k) boxes2(j, k) = boxes(i, k);
    logits2.data[j] = logits.data[i];
  }
  std::vector<TargetBox> tg2(tg.rbegin(), tg.rend());
  GradTape t2;
  const double perm =
      t2.val(set_loss(t2, {{t2.leaf(boxes2), t2.leaf(logits2)}}, tg2,
                      LossWeights{}))
          .data[0];
  CHECK(std::abs(base - perm) < 1e-12);
}

TEST_CASE("set_loss with zero targets is the objectness term alone") {
  Rng rng(61);
  GradTape t;
  Tensor logits, boxes;
  DetectionSetVar s = random_set(t, rng, 5, &logits, &boxes);
  const double loss = t.val(set_loss(t, {s}, {}, LossWeights{})).data[0];
  double bce = 0.0;
  for (double z : logits.data) bce += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  CHECK(loss == doctest::Approx(2.0 * bce / 5).epsilon(1e-12));
}

TEST_CASE("set_loss matches the brute-force oracle") {
  Rng rng(63);
  for (int trial = 0; trial < 30; ++trial) {
    const int q = 4 + rng.uniform_int(4);
    const int m = rng.uniform_int(std::min(q, 5));
    const int f = 1 + rng.uniform_int(3);
    std::vector<TargetBox> tg = random_targets(rng, m);

    GradTape t;
    std::vector<DetectionSetVar> sets;
    std::vector<oracle::SetValueOracle> osets;
    for (int s = 0; s < f; ++s) {
      Tensor logits, boxes;
      sets.push_back(random_set(t, rng, q, &logits, &boxes));
      oracle::SetValueOracle ov;
      ov.boxes = boxes;
      ov.probs = logits;
      for (double& e : ov.probs.data) e = 1.0 / (1.0 + std::exp(-e));
      osets.push_back(std::move(ov));
    }
    const double fast = t.val(set_loss(t, sets, tg, LossWeights{})).data[0];
    const double brute = oracle::set_loss_brute(osets, tg, LossWeights{});
    CHECK(fast == doctest::Approx(brute).epsilon(1e-9));
  }
}

TEST_CASE("set_loss gradients pass finite differences with pinned matching") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(1000 + seed);
    const int q = 5, m = 3;
    std::vector<TargetBox> tg = random_targets(rng, m);
    Tensor boxes, logits;
    {
      GradTape tmp;
      random_set(tmp, rng, q, &logits, &boxes);
    }
    std::vector<std::vector<int>> pinned;
    {
      GradTape tmp;
      set_loss(tmp, {{tmp.leaf(boxes), tmp.leaf(logits)}}, tg, LossWeights{},
               &pinned);
    }
    double err = grad_check(
        [&tg, &pinned](GradTape& t, const std::vector<VarId>& l) {
          std::vector<std::vector<int>> pin = pinned;
          return set_loss(t, {{l[0], l[1]}}, tg, LossWeights{}, &pin);
        },
        {boxes, logits});
    CHECK(err < 1e-3);
  }
}

TEST_CASE("giou pairs gradient passes finite differences") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(1100 + seed);
    const int m = 4;
    std::vector<TargetBox> tg = random_targets(rng, m);
    Tensor pred = Tensor::zeros({m, 4});
    for (int i = 0; i < m; ++i) {
      pred(i, 0) = rng.uniform(0.2, 0.8);
      pred(i, 1) = rng.uniform(0.2, 0.8);
      pred(i, 2) = rng.uniform(0.08, 0.4);
      pred(i, 3) = rng.uniform(0.08, 0.4);
    }
    double err = grad_check(
        [&tg, seed](GradTape& t, const std::vector<VarId>& l) {
          return reduce_with_cotangent(t, giou_cxcywh_pairs(t, l[0], tg),
                                       seed);
        },
        {pred});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("set_loss rejects more targets than queries") {
  GradTape t;
  Tensor boxes = Tensor::zeros({2, 4});
  Tensor logits = Tensor::zeros({2});
  Rng rng(1);
  std::vector<TargetBox> tg = random_targets(rng, 3);
  CHECK_THROWS_AS(
      (void)set_loss(t, {{t.leaf(boxes), t.leaf(logits)}}, tg, LossWeights{}),
      ValidationError);
}
