#include "mavlkit/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mavlkit/geometry.hpp"

namespace mavlkit {

namespace {

struct JvResult {
  std::vector<int> pred_of_target;
  std::vector<double> u, v;  // optimal potentials, 1-based like the solver
  double total = 0.0;
};

// Shortest augmenting paths with potentials, iterating targets and growing
// paths through prediction columns. Requires rows >= cols.
JvResult jv_solve(const Tensor& cost) {
  const int n = cost.rows(), m = cost.cols();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(m + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= m; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(j - 1, i0 - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  JvResult r;
  r.pred_of_target.assign(m, -1);
  for (int j = 1; j <= n; ++j)
    if (match[j] != 0) r.pred_of_target[match[j] - 1] = j - 1;
  r.u = std::move(u);
  r.v = std::move(v);
  for (int t = 0; t < m; ++t) r.total += cost(r.pred_of_target[t], t);
  return r;
}

Assignment to_assignment(const std::vector<int>& pred_of_target, int n) {
  Assignment a;
  std::vector<char> taken(n, 0);
  for (int t = 0; t < static_cast<int>(pred_of_target.size()); ++t) {
    a.pairs.emplace_back(pred_of_target[t], t);
    taken[pred_of_target[t]] = 1;
  }
  for (int p = 0; p < n; ++p)
    if (!taken[p]) a.unmatched_preds.push_back(p);
  return a;
}

}  // namespace

Assignment hungarian(const Tensor& cost) {
  if (cost.rank() != 2)
    throw ShapeError("hungarian expects a [n,m] cost matrix, got " + cost.shape_str());
  if (!cost.all_finite()) throw ValidationError("hungarian: non-finite cost");
  const int n = cost.rows(), m = cost.cols();
  if (n < m)
    throw ValidationError("hungarian: " + std::to_string(m) + " targets exceed " +
                          std::to_string(n) + " predictions");
  JvResult base = jv_solve(cost);
  std::vector<int> fixed = base.pred_of_target;

  // Tie-break refinement: walk targets in order and try to move each to a
  // smaller prediction row without raising the total. Candidates are limited
  // to zero-reduced-cost cells (the only cells any optimal assignment can
  // use), so for generic float costs this loop does no extra solves.
  double scale = 1.0;
  for (double c : cost.data) scale = std::max(scale, std::abs(c));
  const double eps = 1e-9 * scale;
  const double tie_eps = 1e-7 * scale;
  const double big = 1e6 * scale;
  std::vector<char> locked(n, 0);
  for (int t = 0; t < m; ++t) {
    for (int c = 0; c < fixed[t]; ++c) {
      if (locked[c]) continue;
      if (cost(c, t) - base.u[t + 1] - base.v[c + 1] > eps) continue;
      Tensor mod = cost;
      for (int tt = 0; tt < t; ++tt)
        for (int p = 0; p < n; ++p)
          if (p != fixed[tt]) mod(p, tt) = big;
      for (int p = 0; p < n; ++p)
        if (p != c) mod(p, t) = big;
      JvResult forced = jv_solve(mod);
      double total = 0.0;
      bool poisoned = false;
      for (int tt = 0; tt < m; ++tt) {
        if (mod(forced.pred_of_target[tt], tt) != cost(forced.pred_of_target[tt], tt)) {
          poisoned = true;
          break;
        }
        total += cost(forced.pred_of_target[tt], tt);
      }
      if (!poisoned && total <= base.total + tie_eps) {
        fixed = forced.pred_of_target;
        break;
      }
    }
    locked[fixed[t]] = 1;
  }
  return to_assignment(fixed, n);
}

double assignment_total_cost(const Tensor& cost, const Assignment& a) {
  double total = 0.0;
  for (const auto& [p, t] : a.pairs) total += cost(p, t);
  return total;
}

namespace {

Box cxcywh_to_xyxy(double cx, double cy, double w, double h) {
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

}  // namespace

Tensor match_cost(const DetectionSetValue& preds,
                  const std::vector<TargetBox>& targets,
                  const LossWeights& w) {
  const Tensor& b = preds.boxes;
  const Tensor& o = preds.objectness;
  if (b.rank() != 2 || b.cols() != 4)
    throw ShapeError("match_cost boxes must be [Q,4], got " + b.shape_str());
  if (o.numel() != b.rows())
    throw ShapeError("match_cost objectness length " + o.shape_str() +
                     " does not cover " + std::to_string(b.rows()) + " boxes");
  if (w.w_cls == 0.0 && w.w_l1 == 0.0 && w.w_giou == 0.0)
    throw ConfigError("match_cost: all loss weights zero");
  if (targets.empty())
    throw ValidationError("match_cost: no targets to build a cost matrix for");
  const int q = b.rows(), m = static_cast<int>(targets.size());
  Tensor cost = Tensor::zeros({q, m});
  for (int i = 0; i < q; ++i) {
    const Box pb = cxcywh_to_xyxy(b(i, 0), b(i, 1), b(i, 2), b(i, 3));
    for (int t = 0; t < m; ++t) {
      const TargetBox& g = targets[t];
      const double l1 = std::abs(b(i, 0) - g.cx) + std::abs(b(i, 1) - g.cy) +
                        std::abs(b(i, 2) - g.w) + std::abs(b(i, 3) - g.h);
      const double gi = giou(pb, cxcywh_to_xyxy(g.cx, g.cy, g.w, g.h));
      cost.data[static_cast<size_t>(i) * m + t] =
          w.w_cls * (-o.data[i]) + w.w_l1 * l1 + w.w_giou * (1.0 - gi);
    }
  }
  return cost;
}

VarId giou_cxcywh_pairs(GradTape& t, VarId pred_boxes,
                        const std::vector<TargetBox>& targets) {
  const Tensor& b = t.val(pred_boxes);
  const int m = static_cast<int>(targets.size());
  if (b.rank() != 2 || b.cols() != 4 || b.rows() != m)
    throw ShapeError("giou pairs need [" + std::to_string(m) + ",4] predictions, got " +
                     b.shape_str());
  Tensor out = Tensor::zeros({m});
  for (int i = 0; i < m; ++i) {
    const TargetBox& g = targets[i];
    out.data[i] = giou(cxcywh_to_xyxy(b(i, 0), b(i, 1), b(i, 2), b(i, 3)),
                       cxcywh_to_xyxy(g.cx, g.cy, g.w, g.h));
  }
  std::vector<TargetBox> tg = targets;
  return t.record(std::move(out), [pred_boxes, tg](GradTape& tt, VarId self) {
    const Tensor& gout = tt.grad(self);
    const Tensor& b = tt.val(pred_boxes);
    Tensor& gb = tt.grad(pred_boxes);
    const int m = static_cast<int>(tg.size());
    for (int i = 0; i < m; ++i) {
      const double go = gout.data[i];
      if (go == 0.0) continue;
      const double cx = b(i, 0), cy = b(i, 1), w = b(i, 2), h = b(i, 3);
      const double x0 = cx - 0.5 * w, y0 = cy - 0.5 * h;
      const double x1 = cx + 0.5 * w, y1 = cy + 0.5 * h;
      const Box gbx = cxcywh_to_xyxy(tg[i].cx, tg[i].cy, tg[i].w, tg[i].h);

      const double iw = std::min(x1, gbx.x_max) - std::max(x0, gbx.x_min);
      const double ih = std::min(y1, gbx.y_max) - std::max(y0, gbx.y_min);
      const double inter = std::max(0.0, iw) * std::max(0.0, ih);
      const double pa = std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0);
      const double ga = box_area(gbx);
      const double uni = pa + ga - inter;
      const double ex0 = std::min(x0, gbx.x_min), ey0 = std::min(y0, gbx.y_min);
      const double ex1 = std::max(x1, gbx.x_max), ey1 = std::max(y1, gbx.y_max);
      const double enc = (ex1 - ex0) * (ey1 - ey0);
      if (enc <= 0.0 || uni <= 0.0) continue;  // degenerate pair, flat spot

      // d inter / d corner (subgradient at switch points).
      double dI[4] = {0, 0, 0, 0};  // x0, y0, x1, y1
      if (iw > 0.0 && ih > 0.0) {
        if (x0 > gbx.x_min) dI[0] = -ih;
        if (y0 > gbx.y_min) dI[1] = -iw;
        if (x1 < gbx.x_max) dI[2] = ih;
        if (y1 < gbx.y_max) dI[3] = iw;
      }
      const double dA[4] = {-(y1 - y0), -(x1 - x0), y1 - y0, x1 - x0};
      double dE[4] = {0, 0, 0, 0};
      if (x0 < gbx.x_min) dE[0] = -(ey1 - ey0);
      if (y0 < gbx.y_min) dE[1] = -(ex1 - ex0);
      if (x1 > gbx.x_max) dE[2] = ey1 - ey0;
      if (y1 > gbx.y_max) dE[3] = ex1 - ex0;

      // giou = inter/uni - 1 + uni/enc, with d uni = dA - dI.
      double dcorner[4];
      for (int c = 0; c < 4; ++c) {
        const double dU = dA[c] - dI[c];
        dcorner[c] = (dI[c] * uni - inter * dU) / (uni * uni) +
                     (dU * enc - uni * dE[c]) / (enc * enc);
      }
      // Chain corners back to cxcywh.
      gb(i, 0) += go * (dcorner[0] + dcorner[2]);
      gb(i, 1) += go * (dcorner[1] + dcorner[3]);
      gb(i, 2) += go * 0.5 * (dcorner[2] - dcorner[0]);
      gb(i, 3) += go * 0.5 * (dcorner[3] - dcorner[1]);
    }
  });
}

VarId set_loss(GradTape& t, const std::vector<DetectionSetVar>& outputs,
               const std::vector<TargetBox>& targets, const LossWeights& w,
               std::vector<std::vector<int>>* matching) {
  if (outputs.empty()) throw ConfigError("set_loss: no detection sets");
  if (w.w_cls == 0.0 && w.w_l1 == 0.0 && w.w_giou == 0.0)
    throw ConfigError("set_loss: all loss weights zero");
  if (matching && !matching->empty() && matching->size() != outputs.size())
    throw ConfigError("set_loss: pinned matching count does not cover outputs");
  const bool use_pinned = matching && matching->size() == outputs.size();
  const int m = static_cast<int>(targets.size());
  VarId total = kNoVar;
  size_t set_index = 0;
  for (const DetectionSetVar& out : outputs) {
    const Tensor& boxes = t.val(out.boxes);
    const Tensor& logits = t.val(out.logits);
    const int q = boxes.rows();
    if (logits.numel() != q)
      throw ShapeError("set_loss objectness length " + logits.shape_str() +
                       " does not cover " + std::to_string(q) + " boxes");

    if (q < m)
      throw ValidationError("set_loss: " + std::to_string(m) +
                            " targets exceed " + std::to_string(q) + " queries");

    // Match on current values; gradient flows through a fixed matching.
    std::vector<int> pred_of_target;
    if (use_pinned) {
      pred_of_target = (*matching)[set_index];
    } else if (m > 0) {
      DetectionSetValue vals;
      vals.boxes = boxes;
      vals.objectness = logits;
      for (double& e : vals.objectness.data) e = 1.0 / (1.0 + std::exp(-e));
      pred_of_target = jv_solve(match_cost(vals, targets, w)).pred_of_target;
    }
    if (matching && !use_pinned) matching->push_back(pred_of_target);
    ++set_index;

    Tensor labels = Tensor::zeros({q});
    for (int p : pred_of_target) labels.data[p] = 1.0;
    VarId term = scale(t, bce_with_logits_mean(t, out.logits, labels), w.w_cls);

    if (m > 0) {
      VarId matched = gather_rows(t, out.boxes, pred_of_target);  // [m,4]
      Tensor goal = Tensor::zeros({m, 4});
      for (int i = 0; i < m; ++i) {
        goal(i, 0) = targets[i].cx;
        goal(i, 1) = targets[i].cy;
        goal(i, 2) = targets[i].w;
        goal(i, 3) = targets[i].h;
      }
      VarId l1 = sum_all(t, abs_elems(t, sub(t, matched, t.leaf(goal))));
      term = add(t, term, scale(t, l1, w.w_l1 / m));
      VarId gv = sum_all(t, giou_cxcywh_pairs(t, matched, targets));
      // sum of (1 - giou) = m - sum giou
      VarId mcount = t.leaf(Tensor::full({1}, static_cast<double>(m)));
      term = add(t, term, scale(t, sub(t, mcount, gv), w.w_giou / m));
    }
    total = total == kNoVar ? term : add(t, total, term);
  }
  return total;
}

}  // namespace mavlkit
