#include "mavlkit/msda.hpp"

#include <cmath>
#include <memory>
#include <string>

namespace mavlkit {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Four interpolation taps around a continuous point. Integer coordinates are
// pixel centers; out-of-map corners get idx -1 and contribute nothing.
struct Taps {
  int idx[4];
  double w[4], dwdx[4], dwdy[4];
};

Taps make_taps(double x, double y, int h, int w) {
  Taps t;
  const double xf = std::floor(x), yf = std::floor(y);
  const int x0 = static_cast<int>(xf), y0 = static_cast<int>(yf);
  const double fx = x - xf, fy = y - yf;
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  t.w[0] = (1 - fx) * (1 - fy);
  t.w[1] = fx * (1 - fy);
  t.w[2] = (1 - fx) * fy;
  t.w[3] = fx * fy;
  t.dwdx[0] = -(1 - fy);
  t.dwdx[1] = 1 - fy;
  t.dwdx[2] = -fy;
  t.dwdx[3] = fy;
  t.dwdy[0] = -(1 - fx);
  t.dwdy[1] = -fx;
  t.dwdy[2] = 1 - fx;
  t.dwdy[3] = fx;
  for (int i = 0; i < 4; ++i)
    t.idx[i] = (xs[i] >= 0 && xs[i] < w && ys[i] >= 0 && ys[i] < h)
                   ? ys[i] * w + xs[i]
                   : -1;
  return t;
}

// Per-level lazy value-projection table built during the forward pass and
// reused by the backward pass.
struct SavedLevel {
  int h = 0, w = 0;
  std::vector<int32_t> memo_row;  // pixel -> row in proj, -1 if untouched
  std::vector<double> proj;       // touched_count * c, projection results
  std::vector<int32_t> touched;   // pixel ids in projection order
};

struct SavedMsda {
  int q = 0, c = 0, heads = 0, levels = 0, points = 0, dh = 0;
  VarId queries = kNoVar, refs = kNoVar;
  MsdaParams p;
  std::vector<VarId> level_vars;
  std::vector<SavedLevel> lv;
  Tensor attn;  // [q, heads*levels*points], post-softmax
  Tensor loc;   // [q, heads*levels*points*2], sample points in level pixels
  Tensor cat;   // [q, c], concatenated head outputs before output projection
};

}  // namespace

VarId bilinear_sample(GradTape& t, VarId map, VarId point) {
  const Tensor& m = t.val(map);
  const Tensor& pt = t.val(point);
  if (m.rank() != 3)
    throw ShapeError("bilinear_sample expects a [h,w,c] map, got " + m.shape_str());
  if (pt.numel() != 2)
    throw ShapeError("bilinear_sample expects an (x,y) point, got " + pt.shape_str());
  const int h = m.shape[0], w = m.shape[1], c = m.shape[2];
  const Taps taps = make_taps(pt.data[0], pt.data[1], h, w);
  Tensor out = Tensor::zeros({c});
  for (int i = 0; i < 4; ++i) {
    if (taps.idx[i] < 0) continue;
    const double* row = &m.data[static_cast<size_t>(taps.idx[i]) * c];
    for (int j = 0; j < c; ++j) out.data[j] += taps.w[i] * row[j];
  }
  return t.record(std::move(out), [map, point, taps, c](GradTape& tt, VarId self) {
    const Tensor g = tt.grad(self);
    const Tensor& mv = tt.val(map);
    Tensor& gm = tt.grad(map);
    double dx = 0.0, dy = 0.0;
    for (int i = 0; i < 4; ++i) {
      if (taps.idx[i] < 0) continue;
      double* grow = &gm.data[static_cast<size_t>(taps.idx[i]) * c];
      const double* vrow = &mv.data[static_cast<size_t>(taps.idx[i]) * c];
      double dot = 0.0;
      for (int j = 0; j < c; ++j) {
        grow[j] += taps.w[i] * g.data[j];
        dot += vrow[j] * g.data[j];
      }
      dx += taps.dwdx[i] * dot;
      dy += taps.dwdy[i] * dot;
    }
    Tensor& gp = tt.grad(point);
    gp.data[0] += dx;
    gp.data[1] += dy;
  });
}

MsdaParamTensors msda_init(int c, int heads, int levels, int points, Rng& rng) {
  if (heads <= 0 || c % heads != 0)
    throw ConfigError("channel count " + std::to_string(c) +
                      " not divisible by " + std::to_string(heads) + " heads");
  auto xavier = [&rng](int in, int out) {
    Tensor w = Tensor::zeros({in, out});
    const double s = std::sqrt(2.0 / (in + out));
    for (double& e : w.data) e = s * rng.normal();
    return w;
  };
  const int slots = heads * levels * points;
  MsdaParamTensors p;
  p.wv = xavier(c, c);
  p.bv = Tensor::zeros({c});
  p.wo = xavier(c, c);
  p.bo = Tensor::zeros({c});
  p.w_off = Tensor::zeros({c, slots * 2});
  p.b_off = Tensor::zeros({slots * 2});
  p.w_att = Tensor::zeros({c, slots});
  p.b_att = Tensor::zeros({slots});
  // Star of K directions per head, radius growing half a pixel per point,
  // rotated per head so heads start looking in different directions.
  for (int m = 0; m < heads; ++m)
    for (int l = 0; l < levels; ++l)
      for (int k = 0; k < points; ++k) {
        const int s = (m * levels + l) * points + k;
        const double ang = kTwoPi * m / heads + kTwoPi * k / points;
        const double r = 0.5 * (k + 1);
        p.b_off.data[2 * s] = r * std::cos(ang);
        p.b_off.data[2 * s + 1] = r * std::sin(ang);
      }
  return p;
}

MsdaParams msda_leaf(GradTape& t, const MsdaParamTensors& p) {
  MsdaParams out;
  out.wv = t.leaf(p.wv);
  out.bv = t.leaf(p.bv);
  out.w_off = t.leaf(p.w_off);
  out.b_off = t.leaf(p.b_off);
  out.w_att = t.leaf(p.w_att);
  out.b_att = t.leaf(p.b_att);
  out.wo = t.leaf(p.wo);
  out.bo = t.leaf(p.bo);
  return out;
}

VarId msda_forward(GradTape& t, VarId queries, VarId refs,
                   const std::vector<PyramidLevelRef>& pyramid,
                   const MsdaParams& p, int heads, int points,
                   MsdaStats* stats) {
  const Tensor& qv = t.val(queries);
  const Tensor& rv = t.val(refs);
  if (qv.rank() != 2)
    throw ConfigError("queries must be [q,d], got " + qv.shape_str());
  const int q = qv.rows(), d = qv.cols();
  if (rv.rank() != 2 || rv.rows() != q || rv.cols() != 2)
    throw ConfigError("refs must be [" + std::to_string(q) + ",2], got " + rv.shape_str());
  if (pyramid.empty()) throw ConfigError("empty feature pyramid");
  const int levels = static_cast<int>(pyramid.size());
  for (const PyramidLevelRef& l : pyramid) {
    const Tensor& x = t.val(l.values);
    if (x.rank() != 3 || x.shape[0] != l.h || x.shape[1] != l.w || x.shape[2] != d)
      throw ConfigError("pyramid level shape " + x.shape_str() + " does not match " +
                        std::to_string(l.h) + "x" + std::to_string(l.w) + "x" +
                        std::to_string(d));
  }
  if (heads <= 0 || d % heads != 0)
    throw ConfigError("dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  const int slots = heads * levels * points;
  const Tensor& woff = t.val(p.w_off);
  const Tensor& watt = t.val(p.w_att);
  const Tensor& wvv = t.val(p.wv);
  if (woff.rank() != 2 || woff.rows() != d || woff.cols() != slots * 2 ||
      t.val(p.b_off).numel() != slots * 2)
    throw ConfigError("offset projection must emit " + std::to_string(slots * 2) +
                      " values, got " + woff.shape_str());
  if (watt.rank() != 2 || watt.rows() != d || watt.cols() != slots ||
      t.val(p.b_att).numel() != slots)
    throw ConfigError("attention projection must emit " + std::to_string(slots) +
                      " values, got " + watt.shape_str());
  if (wvv.rank() != 2 || wvv.rows() != d || wvv.cols() != d)
    throw ConfigError("value projection must be [" + std::to_string(d) + "," +
                      std::to_string(d) + "], got " + wvv.shape_str());

  auto s = std::make_shared<SavedMsda>();
  s->q = q;
  s->c = d;
  s->heads = heads;
  s->levels = levels;
  s->points = points;
  s->dh = d / heads;
  s->queries = queries;
  s->refs = refs;
  s->p = p;
  s->level_vars.reserve(pyramid.size());
  s->lv.resize(pyramid.size());
  for (int l = 0; l < levels; ++l) {
    s->level_vars.push_back(pyramid[l].values);
    s->lv[l].h = pyramid[l].h;
    s->lv[l].w = pyramid[l].w;
    s->lv[l].memo_row.assign(static_cast<size_t>(pyramid[l].h) * pyramid[l].w, -1);
  }

  // Offset and attention projections of the query vectors.
  const Tensor& boff = t.val(p.b_off);
  const Tensor& batt = t.val(p.b_att);
  Tensor off = Tensor::zeros({q, slots * 2});
  Tensor logits = Tensor::zeros({q, slots});
  for (int i = 0; i < q; ++i) {
    for (int k = 0; k < d; ++k) {
      const double x = qv(i, k);
      if (x == 0.0) continue;
      const double* wr = &woff.data[static_cast<size_t>(k) * slots * 2];
      double* orow = &off.data[static_cast<size_t>(i) * slots * 2];
      for (int j = 0; j < slots * 2; ++j) orow[j] += x * wr[j];
      const double* ar = &watt.data[static_cast<size_t>(k) * slots];
      double* lrow = &logits.data[static_cast<size_t>(i) * slots];
      for (int j = 0; j < slots; ++j) lrow[j] += x * ar[j];
    }
    for (int j = 0; j < slots * 2; ++j) off(i, j) += boff.data[j];
    for (int j = 0; j < slots; ++j) logits(i, j) += batt.data[j];
  }

  // Per-head softmax over the L*K sampling slots.
  const int lk = levels * points;
  s->attn = Tensor::zeros({q, slots});
  for (int i = 0; i < q; ++i)
    for (int m = 0; m < heads; ++m) {
      const int base = m * lk;
      double mx = logits(i, base);
      for (int j = 1; j < lk; ++j) mx = std::max(mx, logits(i, base + j));
      double z = 0.0;
      for (int j = 0; j < lk; ++j)
        z += (s->attn(i, base + j) = std::exp(logits(i, base + j) - mx));
      for (int j = 0; j < lk; ++j) s->attn(i, base + j) /= z;
    }

  // Sample, projecting each touched pixel once.
  const Tensor& bvv = t.val(p.bv);
  s->loc = Tensor::zeros({q, slots * 2});
  s->cat = Tensor::zeros({q, d});
  const int dh = s->dh;
  for (int i = 0; i < q; ++i) {
    const double px = rv(i, 0), py = rv(i, 1);
    for (int m = 0; m < heads; ++m)
      for (int l = 0; l < levels; ++l) {
        SavedLevel& lev = s->lv[l];
        const Tensor& xval = t.val(pyramid[l].values);
        for (int k = 0; k < points; ++k) {
          const int slot = (m * levels + l) * points + k;
          const double x = px * lev.w - 0.5 + off(i, 2 * slot);
          const double y = py * lev.h - 0.5 + off(i, 2 * slot + 1);
          s->loc(i, 2 * slot) = x;
          s->loc(i, 2 * slot + 1) = y;
          const Taps taps = make_taps(x, y, lev.h, lev.w);
          if (stats) stats->samples_taken++;
          const double a = s->attn(i, slot);
          for (int tap = 0; tap < 4; ++tap) {
            const int pix = taps.idx[tap];
            if (pix < 0) continue;
            int32_t row = lev.memo_row[pix];
            if (row < 0) {
              row = static_cast<int32_t>(lev.touched.size());
              lev.memo_row[pix] = row;
              lev.touched.push_back(pix);
              lev.proj.resize(lev.proj.size() + d);
              double* prow = &lev.proj[static_cast<size_t>(row) * d];
              const double* xrow = &xval.data[static_cast<size_t>(pix) * d];
              for (int j = 0; j < d; ++j) {
                double acc = bvv.data[j];
                for (int cc = 0; cc < d; ++cc) acc += xrow[cc] * wvv.data[static_cast<size_t>(cc) * d + j];
                prow[j] = acc;
              }
              if (stats) stats->pixels_projected++;
            }
            const double* prow = &lev.proj[static_cast<size_t>(row) * d];
            const double wa = a * taps.w[tap];
            for (int j = 0; j < dh; ++j)
              s->cat(i, m * dh + j) += wa * prow[m * dh + j];
          }
        }
      }
  }

  // Output projection.
  const Tensor& wov = t.val(p.wo);
  const Tensor& bov = t.val(p.bo);
  Tensor out = Tensor::zeros({q, d});
  for (int i = 0; i < q; ++i)
    for (int k = 0; k < d; ++k) {
      const double x = s->cat(i, k);
      if (x == 0.0) continue;
      for (int j = 0; j < d; ++j) out(i, j) += x * wov.data[static_cast<size_t>(k) * d + j];
    }
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < d; ++j) out(i, j) += bov.data[j];

  return t.record(std::move(out), [s](GradTape& tt, VarId self) {
    const Tensor g = tt.grad(self);  // [q,c]
    const int q = s->q, c = s->c, heads = s->heads, levels = s->levels,
              points = s->points, dh = s->dh;
    const int slots = heads * levels * points;
    const int lk = levels * points;
    const Tensor& wov = tt.val(s->p.wo);

    // Output projection backward.
    Tensor dcat = Tensor::zeros({q, c});
    {
      Tensor& gwo = tt.grad(s->p.wo);
      Tensor& gbo = tt.grad(s->p.bo);
      for (int i = 0; i < q; ++i)
        for (int k = 0; k < c; ++k) {
          double acc = 0.0;
          const double* wr = &wov.data[static_cast<size_t>(k) * c];
          const double* gr = &g.data[static_cast<size_t>(i) * c];
          for (int j = 0; j < c; ++j) acc += wr[j] * gr[j];
          dcat(i, k) = acc;
          const double x = s->cat(i, k);
          if (x != 0.0) {
            double* gw = &gwo.data[static_cast<size_t>(k) * c];
            for (int j = 0; j < c; ++j) gw[j] += x * gr[j];
          }
        }
      for (int i = 0; i < q; ++i)
        for (int j = 0; j < c; ++j) gbo.data[j] += g(i, j);
    }

    // Walk the sampling slots again, pushing gradient into the projection
    // tables, the attention weights, the offsets, and the reference points.
    std::vector<std::vector<double>> dproj(levels);
    for (int l = 0; l < levels; ++l) dproj[l].assign(s->lv[l].proj.size(), 0.0);
    Tensor doff = Tensor::zeros({q, slots * 2});
    Tensor datt = Tensor::zeros({q, slots});
    Tensor& grefs = tt.grad(s->refs);
    for (int i = 0; i < q; ++i)
      for (int m = 0; m < heads; ++m)
        for (int l = 0; l < levels; ++l) {
          SavedLevel& lev = s->lv[l];
          for (int k = 0; k < points; ++k) {
            const int slot = (m * levels + l) * points + k;
            const double x = s->loc(i, 2 * slot), y = s->loc(i, 2 * slot + 1);
            const Taps taps = make_taps(x, y, lev.h, lev.w);
            const double a = s->attn(i, slot);
            const double* gh = &dcat.data[static_cast<size_t>(i) * c + m * dh];
            double dsample_dot = 0.0;  // gh . sampled value
            double dx = 0.0, dy = 0.0;
            for (int tap = 0; tap < 4; ++tap) {
              const int pix = taps.idx[tap];
              if (pix < 0) continue;
              const int32_t row = lev.memo_row[pix];
              const double* prow = &lev.proj[static_cast<size_t>(row) * c + m * dh];
              double dot = 0.0;
              double* dp = &dproj[l][static_cast<size_t>(row) * c + m * dh];
              for (int j = 0; j < dh; ++j) {
                dot += prow[j] * gh[j];
                dp[j] += a * taps.w[tap] * gh[j];
              }
              dsample_dot += taps.w[tap] * dot;
              dx += taps.dwdx[tap] * dot;
              dy += taps.dwdy[tap] * dot;
            }
            datt(i, slot) = dsample_dot;
            doff(i, 2 * slot) = a * dx;
            doff(i, 2 * slot + 1) = a * dy;
            grefs.data[2 * i] += a * dx * lev.w;
            grefs.data[2 * i + 1] += a * dy * lev.h;
          }
        }

    // Softmax backward per head.
    Tensor dlog = Tensor::zeros({q, slots});
    for (int i = 0; i < q; ++i)
      for (int m = 0; m < heads; ++m) {
        const int base = m * lk;
        double inner = 0.0;
        for (int j = 0; j < lk; ++j)
          inner += datt(i, base + j) * s->attn(i, base + j);
        for (int j = 0; j < lk; ++j)
          dlog(i, base + j) =
              s->attn(i, base + j) * (datt(i, base + j) - inner);
      }

    // Offset and attention projection backward.
    const Tensor& qv = tt.val(s->queries);
    const Tensor& woff = tt.val(s->p.w_off);
    const Tensor& watt = tt.val(s->p.w_att);
    Tensor& gq = tt.grad(s->queries);
    Tensor& gwoff = tt.grad(s->p.w_off);
    Tensor& gboff = tt.grad(s->p.b_off);
    Tensor& gwatt = tt.grad(s->p.w_att);
    Tensor& gbatt = tt.grad(s->p.b_att);
    for (int i = 0; i < q; ++i) {
      const double* dor = &doff.data[static_cast<size_t>(i) * slots * 2];
      const double* dlr = &dlog.data[static_cast<size_t>(i) * slots];
      for (int k = 0; k < c; ++k) {
        const double* wr = &woff.data[static_cast<size_t>(k) * slots * 2];
        const double* ar = &watt.data[static_cast<size_t>(k) * slots];
        double acc = 0.0;
        for (int j = 0; j < slots * 2; ++j) acc += wr[j] * dor[j];
        for (int j = 0; j < slots; ++j) acc += ar[j] * dlr[j];
        gq.data[static_cast<size_t>(i) * c + k] += acc;
        const double x = qv(i, k);
        if (x != 0.0) {
          double* gw = &gwoff.data[static_cast<size_t>(k) * slots * 2];
          for (int j = 0; j < slots * 2; ++j) gw[j] += x * dor[j];
          double* ga = &gwatt.data[static_cast<size_t>(k) * slots];
          for (int j = 0; j < slots; ++j) ga[j] += x * dlr[j];
        }
      }
      for (int j = 0; j < slots * 2; ++j) gboff.data[j] += dor[j];
      for (int j = 0; j < slots; ++j) gbatt.data[j] += dlr[j];
    }

    // Value projection backward over exactly the touched pixels.
    const Tensor& wvv = tt.val(s->p.wv);
    Tensor& gwv = tt.grad(s->p.wv);
    Tensor& gbv = tt.grad(s->p.bv);
    for (int l = 0; l < levels; ++l) {
      const SavedLevel& lev = s->lv[l];
      const Tensor& xval = tt.val(s->level_vars[l]);
      Tensor& gx = tt.grad(s->level_vars[l]);
      for (size_t r = 0; r < lev.touched.size(); ++r) {
        const int pix = lev.touched[r];
        const double* drow = &dproj[l][r * c];
        const double* xrow = &xval.data[static_cast<size_t>(pix) * c];
        double* gxrow = &gx.data[static_cast<size_t>(pix) * c];
        for (int i2 = 0; i2 < c; ++i2) {
          const double* wr = &wvv.data[static_cast<size_t>(i2) * c];
          double acc = 0.0;
          for (int j = 0; j < c; ++j) acc += wr[j] * drow[j];
          gxrow[i2] += acc;
          const double x = xrow[i2];
          if (x != 0.0) {
            double* gw = &gwv.data[static_cast<size_t>(i2) * c];
            for (int j = 0; j < c; ++j) gw[j] += x * drow[j];
          }
        }
        for (int j = 0; j < c; ++j) gbv.data[j] += drow[j];
      }
    }
  });
}

}  // namespace mavlkit
