#pragma once

// Brute-force reference implementations used to validate the fast paths.
// Everything here is written as straight loops over plain tensors, sharing
// no code with the tape ops, so agreement is meaningful evidence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "mavlkit/geometry.hpp"
#include "mavlkit/matching.hpp"
#include "mavlkit/tensor.hpp"

namespace mavlkit::oracle {

// Exhaustive assignment search. Walks targets in order trying predictions in
// ascending index order, keeping the first minimum found, which is exactly
// the lexicographically smallest (by target-major prediction vector) among
// all optimal assignments.
inline std::vector<int> hungarian_brute(const Tensor& cost) {
  const int n = cost.rows(), m = cost.cols();
  std::vector<int> best(m, -1), cur(m, -1);
  std::vector<char> used(n, 0);
  double best_total = std::numeric_limits<double>::infinity();
  auto rec = [&](auto&& self, int t, double total) -> void {
    if (t == m) {
      if (total < best_total) {
        best_total = total;
        best = cur;
      }
      return;
    }
    for (int p = 0; p < n; ++p) {
      if (used[p]) continue;
      used[p] = 1;
      cur[t] = p;
      self(self, t + 1, total + cost(p, t));
      used[p] = 0;
    }
  };
  rec(rec, 0, 0.0);
  return best;
}

// Set-loss recomputation from probabilities with brute-force matching and a
// from-scratch GIoU, sharing nothing with the tape path.
struct SetValueOracle {
  Tensor boxes;  // [Q,4] cxcywh
  Tensor probs;  // [Q]
};

inline double giou_cxcywh_plain(const double* a, const TargetBox& g) {
  const double ax0 = a[0] - a[2] / 2, ay0 = a[1] - a[3] / 2;
  const double ax1 = a[0] + a[2] / 2, ay1 = a[1] + a[3] / 2;
  const double bx0 = g.cx - g.w / 2, by0 = g.cy - g.h / 2;
  const double bx1 = g.cx + g.w / 2, by1 = g.cy + g.h / 2;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
  const double enc = (std::max(ax1, bx1) - std::min(ax0, bx0)) *
                     (std::max(ay1, by1) - std::min(ay0, by0));
  if (enc <= 0.0) return 0.0;
  return (uni > 0.0 ? inter / uni : 0.0) - (enc - uni) / enc;
}

inline double set_loss_brute(const std::vector<SetValueOracle>& sets,
                             const std::vector<TargetBox>& targets,
                             const LossWeights& w) {
  double total = 0.0;
  const int m = static_cast<int>(targets.size());
  for (const SetValueOracle& s : sets) {
    const int q = s.boxes.rows();
    std::vector<int> pred_of_target;
    if (m > 0) {
      Tensor cost = Tensor::zeros({q, m});
      for (int i = 0; i < q; ++i)
        for (int t = 0; t < m; ++t) {
          const double* b = &s.boxes.data[static_cast<size_t>(i) * 4];
          const double l1 = std::abs(b[0] - targets[t].cx) +
                            std::abs(b[1] - targets[t].cy) +
                            std::abs(b[2] - targets[t].w) +
                            std::abs(b[3] - targets[t].h);
          cost(i, t) = w.w_cls * (-s.probs.data[i]) + w.w_l1 * l1 +
                       w.w_giou * (1.0 - giou_cxcywh_plain(b, targets[t]));
        }
      pred_of_target = hungarian_brute(cost);
    }
    std::vector<char> matched(q, 0);
    for (int p : pred_of_target) matched[p] = 1;
    double bce = 0.0;
    for (int i = 0; i < q; ++i) {
      const double p = std::min(1.0 - 1e-12, std::max(1e-12, s.probs.data[i]));
      bce += matched[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    total += w.w_cls * bce / q;
    if (m > 0) {
      double l1 = 0.0, gsum = 0.0;
      for (int t = 0; t < m; ++t) {
        const double* b = &s.boxes.data[static_cast<size_t>(pred_of_target[t]) * 4];
        l1 += std::abs(b[0] - targets[t].cx) + std::abs(b[1] - targets[t].cy) +
              std::abs(b[2] - targets[t].w) + std::abs(b[3] - targets[t].h);
        gsum += 1.0 - giou_cxcywh_plain(b, targets[t]);
      }
      total += w.w_l1 * l1 / m + w.w_giou * gsum / m;
    }
  }
  return total;
}

// Quadratic suppression sweep: walk the score-ordered list once and mark
// everything each survivor dominates, instead of testing candidates against
// a kept list.
inline std::vector<Detection> nms_quadratic(const std::vector<Detection>& dets,
                                            double thresh) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  std::vector<bool> dead(dets.size(), false);
  std::vector<Detection> out;
  for (size_t i = 0; i < order.size(); ++i) {
    if (dead[i]) continue;
    out.push_back(dets[order[i]]);
    for (size_t j = i + 1; j < order.size(); ++j)
      if (!dead[j] && iou(dets[order[i]].box, dets[order[j]].box) > thresh)
        dead[j] = true;
  }
  return out;
}

inline Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  Tensor y = Tensor::zeros({a.rows(), b.cols()});
  for (int i = 0; i < a.rows(); ++i)
    for (int k = 0; k < a.cols(); ++k)
      for (int j = 0; j < b.cols(); ++j) y(i, j) += a(i, k) * b(k, j);
  return y;
}

inline Tensor linear_plain(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul_plain(x, w);
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.cols(); ++j) y(i, j) += b.data[j];
  return y;
}

inline std::vector<double> softmax_plain(const std::vector<double>& v) {
  double m = *std::max_element(v.begin(), v.end());
  std::vector<double> y(v.size());
  double z = 0.0;
  for (size_t i = 0; i < v.size(); ++i) z += (y[i] = std::exp(v[i] - m));
  for (double& e : y) e /= z;
  return y;
}

inline Tensor layer_norm_plain(const Tensor& x, const Tensor& gamma,
                               const Tensor& beta, double eps) {
  const int d = x.cols();
  Tensor y = Tensor::zeros(x.shape);
  for (int i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += x(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= d;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j)
      y(i, j) = gamma.data[j] * (x(i, j) - mean) * inv_std + beta.data[j];
  }
  return y;
}

// Bare multi-head self-attention, no residual and no normalization.
inline Tensor mhsa_plain(const Tensor& x, const Tensor& wq, const Tensor& bq,
                         const Tensor& wk, const Tensor& bk, const Tensor& wv,
                         const Tensor& bv, const Tensor& wo, const Tensor& bo,
                         int heads) {
  const int n = x.rows(), d = x.cols(), dh = d / heads;
  Tensor q = linear_plain(x, wq, bq);
  Tensor k = linear_plain(x, wk, bk);
  Tensor v = linear_plain(x, wv, bv);
  Tensor cat = Tensor::zeros({n, d});
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < n; ++i) {
      std::vector<double> scores(n);
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
        scores[j] = s / std::sqrt(static_cast<double>(dh));
      }
      std::vector<double> a = softmax_plain(scores);
      for (int c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += a[j] * v(j, h * dh + c);
        cat(i, h * dh + c) = acc;
      }
    }
  return linear_plain(cat, wo, bo);
}

// Weight order matches SaBlockParams: ln1 gamma/beta, q/k/v/out proj (w then
// b each), ln2 gamma/beta, ffn w1/b1/w2/b2.
inline Tensor sa_block_plain(const Tensor& x, const std::vector<Tensor>& w,
                             int heads, double eps = 1e-5) {
  const int n = x.rows(), d = x.cols(), dh = d / heads;
  Tensor normed = layer_norm_plain(x, w[0], w[1], eps);
  Tensor q = linear_plain(normed, w[2], w[3]);
  Tensor k = linear_plain(normed, w[4], w[5]);
  Tensor v = linear_plain(normed, w[6], w[7]);
  Tensor cat = Tensor::zeros({n, d});
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < n; ++i) {
      std::vector<double> scores(n);
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
        scores[j] = s / std::sqrt(static_cast<double>(dh));
      }
      std::vector<double> a = softmax_plain(scores);
      for (int c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += a[j] * v(j, h * dh + c);
        cat(i, h * dh + c) = acc;
      }
    }
  }
  Tensor attn_out = linear_plain(cat, w[8], w[9]);
  Tensor x1 = x;
  for (int e = 0; e < x1.numel(); ++e) x1.data[e] += attn_out.data[e];
  Tensor normed2 = layer_norm_plain(x1, w[10], w[11], eps);
  Tensor hidden = linear_plain(normed2, w[12], w[13]);
  for (double& e : hidden.data) e = std::max(0.0, e);
  Tensor f = linear_plain(hidden, w[14], w[15]);
  Tensor out = x1;
  for (int e = 0; e < out.numel(); ++e) out.data[e] += f.data[e];
  return out;
}

// Independent average-precision reference: every top-k prefix is re-matched
// from scratch as its own operating point, then the precision envelope is
// integrated over recall steps.
inline double ap_brute(const std::vector<Detection>& dets,
                       const std::vector<GroundTruthBox>& gts,
                       double iou_thresh) {
  if (gts.empty()) return dets.empty() ? 1.0 : 0.0;
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return dets[x].score > dets[y].score; });
  const int n = static_cast<int>(dets.size());
  std::vector<double> precision(n), recall(n);
  for (int k = 1; k <= n; ++k) {
    std::vector<char> used(gts.size(), 0);
    int tp = 0;
    for (int i = 0; i < k; ++i) {
      const Detection& d = dets[order[i]];
      int best = -1;
      double best_iou = 0.0;
      for (size_t g = 0; g < gts.size(); ++g) {
        if (used[g] || gts[g].image_id != d.image_id) continue;
        const double v = iou(d.box, gts[g].box);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0 && best_iou > iou_thresh) {
        used[best] = 1;
        ++tp;
      }
    }
    precision[k - 1] = static_cast<double>(tp) / k;
    recall[k - 1] = static_cast<double>(tp) / gts.size();
  }
  double ap = 0.0, prev = 0.0;
  for (int k = 0; k < n; ++k) {
    if (recall[k] > prev) {
      double best = 0.0;
      for (int j = k; j < n; ++j) best = std::max(best, precision[j]);
      ap += (recall[k] - prev) * best;
      prev = recall[k];
    }
  }
  return ap;
}

// Flood-fill labeling reference: depth-first fill from each unvisited
// foreground pixel in raster order, so labels are dense from 1 by first
// pixel, the same convention the two-pass implementation promises.
inline std::vector<int> cc_brute(int h, int w, const std::vector<uint8_t>& fg,
                                 int connectivity) {
  std::vector<int> labels(fg.size(), 0);
  std::vector<size_t> stack;
  int next = 0;
  for (size_t start = 0; start < fg.size(); ++start) {
    if (!fg[start] || labels[start]) continue;
    labels[start] = ++next;
    stack.assign(1, start);
    while (!stack.empty()) {
      const size_t cur = stack.back();
      stack.pop_back();
      const int r = static_cast<int>(cur) / w, c = static_cast<int>(cur) % w;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          if (connectivity == 4 && dr != 0 && dc != 0) continue;
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          const size_t nidx = static_cast<size_t>(rr) * w + cc;
          if (!fg[nidx] || labels[nidx]) continue;
          labels[nidx] = next;
          stack.push_back(nidx);
        }
    }
  }
  return labels;
}

// Inputs for the dense deformable-attention reference.
struct MsdaOracleInput {
  Tensor queries;               // [q,d]
  Tensor refs;                  // [q,2] normalized
  std::vector<Tensor> levels;   // each [h,w,d]
  Tensor wv, bv, w_off, b_off, w_att, b_att, wo, bo;
  int heads = 1, points = 1;
};

// Dense reference: value-projects every pyramid pixel up front, then walks
// query/head/level/point with a fresh bilinear interpolation per slot. No
// memoization, no shared code with the fast path.
inline Tensor msda_plain(const MsdaOracleInput& in) {
  const int q = in.queries.rows(), d = in.queries.cols();
  const int nlev = static_cast<int>(in.levels.size());
  const int m = in.heads, k = in.points, dh = d / m;
  Tensor off = linear_plain(in.queries, in.w_off, in.b_off);
  Tensor logits = linear_plain(in.queries, in.w_att, in.b_att);

  std::vector<Tensor> proj;
  for (const Tensor& lvl : in.levels) {
    Tensor flat = lvl.reshaped({lvl.shape[0] * lvl.shape[1], d});
    proj.push_back(linear_plain(flat, in.wv, in.bv));
  }

  Tensor cat = Tensor::zeros({q, d});
  const int lk = nlev * k;
  for (int i = 0; i < q; ++i)
    for (int mh = 0; mh < m; ++mh) {
      std::vector<double> seg(lk);
      for (int j = 0; j < lk; ++j) seg[j] = logits(i, mh * lk + j);
      std::vector<double> a = softmax_plain(seg);
      for (int l = 0; l < nlev; ++l) {
        const int hh = in.levels[l].shape[0], ww = in.levels[l].shape[1];
        for (int kk = 0; kk < k; ++kk) {
          const int slot = (mh * nlev + l) * k + kk;
          const double x = in.refs(i, 0) * ww - 0.5 + off(i, 2 * slot);
          const double y = in.refs(i, 1) * hh - 0.5 + off(i, 2 * slot + 1);
          const int x0 = static_cast<int>(std::floor(x));
          const int y0 = static_cast<int>(std::floor(y));
          const double fx = x - x0, fy = y - y0;
          for (int cy = 0; cy < 2; ++cy)
            for (int cx = 0; cx < 2; ++cx) {
              const int xi = x0 + cx, yi = y0 + cy;
              if (xi < 0 || xi >= ww || yi < 0 || yi >= hh) continue;
              const double wgt = (cx ? fx : 1 - fx) * (cy ? fy : 1 - fy);
              for (int ch = 0; ch < dh; ++ch)
                cat(i, mh * dh + ch) += a[l * k + kk] * wgt *
                                        proj[l](yi * ww + xi, mh * dh + ch);
            }
        }
      }
    }
  return linear_plain(cat, in.wo, in.bo);
}

}  // namespace mavlkit::oracle
