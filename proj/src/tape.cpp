#include "mavlkit/tape.hpp"

#include <algorithm>
#include <cmath>

namespace mavlkit {

VarId GradTape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr});
  return static_cast<VarId>(nodes_.size()) - 1;
}

VarId GradTape::record(Tensor value, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, std::move(backward)});
  return static_cast<VarId>(nodes_.size()) - 1;
}

Tensor& GradTape::grad(VarId id) {
  Node& n = nodes_[id];
  if (!n.grad_allocated) {
    n.grad = Tensor::zeros(n.value.shape);
    n.grad_allocated = true;
  }
  return n.grad;
}

void GradTape::accumulate(VarId id, const Tensor& delta) {
  Tensor& g = grad(id);
  for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += delta.data[i];
}

void GradTape::backward(VarId root) {
  if (val(root).numel() != 1) {
    throw ShapeError("backward without seed requires a scalar root, got " +
                     val(root).shape_str());
  }
  backward(root, Tensor::full(val(root).shape, 1.0));
}

void GradTape::backward(VarId root, const Tensor& seed) {
  require_same_shape(val(root), seed, "backward seed");
  grad(root);  // allocate
  nodes_[root].grad = seed;
  for (VarId id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad_allocated) n.backward(*this, id);
  }
}

namespace {

void require_matrix(const GradTape& t, VarId x, const char* what) {
  if (t.val(x).rank() != 2) {
    throw ShapeError(std::string(what) + ": expected rank-2 tensor, got " +
                     t.val(x).shape_str());
  }
}

// Trailing-axis view: treat tensor as [outer, k].
std::pair<int64_t, int> trailing_view(const Tensor& x, const char* what) {
  if (x.rank() < 1) throw ShapeError(std::string(what) + ": rank-0 tensor");
  const int k = x.shape.back();
  if (k < 1) throw ShapeError(std::string(what) + ": empty trailing axis");
  return {x.numel() / k, k};
}

}  // namespace

VarId matmul(GradTape& t, VarId a, VarId b) {
  require_matrix(t, a, "matmul lhs");
  require_matrix(t, b, "matmul rhs");
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: inner dims " + std::to_string(A.cols()) + " vs " +
                     std::to_string(B.rows()));
  }
  const int n = A.rows(), k = A.cols(), m = B.cols();
  Tensor Y = Tensor::zeros({n, m});
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aip = A(i, p);
      if (aip == 0.0) continue;
      const double* brow = &B.data[static_cast<size_t>(p) * m];
      double* yrow = &Y.data[static_cast<size_t>(i) * m];
      for (int j = 0; j < m; ++j) yrow[j] += aip * brow[j];
    }
  }
  return t.record(std::move(Y), [a, b, n, k, m](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    const Tensor& A2 = tp.val(a);
    const Tensor& B2 = tp.val(b);
    Tensor& dA = tp.grad(a);
    Tensor& dB = tp.grad(b);
    // dA = G B^T
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        const double g = G(i, j);
        if (g == 0.0) continue;
        for (int p = 0; p < k; ++p) dA(i, p) += g * B2(p, j);
      }
    }
    // dB = A^T G
    for (int i = 0; i < n; ++i) {
      for (int p = 0; p < k; ++p) {
        const double av = A2(i, p);
        if (av == 0.0) continue;
        const double* grow = &G.data[static_cast<size_t>(i) * m];
        double* drow = &dB.data[static_cast<size_t>(p) * m];
        for (int j = 0; j < m; ++j) drow[j] += av * grow[j];
      }
    }
  });
}

VarId matmul_nt(GradTape& t, VarId a, VarId b) {
  require_matrix(t, a, "matmul_nt lhs");
  require_matrix(t, b, "matmul_nt rhs");
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  if (A.cols() != B.cols()) {
    throw ShapeError("matmul_nt: inner dims " + std::to_string(A.cols()) +
                     " vs " + std::to_string(B.cols()));
  }
  const int n = A.rows(), k = A.cols(), m = B.rows();
  Tensor Y = Tensor::zeros({n, m});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double* ar = &A.data[static_cast<size_t>(i) * k];
      const double* br = &B.data[static_cast<size_t>(j) * k];
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
      Y(i, j) = acc;
    }
  }
  return t.record(std::move(Y), [a, b, n, k, m](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    const Tensor& A2 = tp.val(a);
    const Tensor& B2 = tp.val(b);
    Tensor& dA = tp.grad(a);
    Tensor& dB = tp.grad(b);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        const double g = G(i, j);
        if (g == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          dA(i, p) += g * B2(j, p);
          dB(j, p) += g * A2(i, p);
        }
      }
    }
  });
}

VarId linear(GradTape& t, VarId x, VarId w, VarId b) {
  require_matrix(t, x, "linear input");
  require_matrix(t, w, "linear weight");
  const Tensor& X = t.val(x);
  const Tensor& W = t.val(w);
  const Tensor& B = t.val(b);
  if (X.cols() != W.rows()) {
    throw ShapeError("linear: input cols " + std::to_string(X.cols()) +
                     " vs weight rows " + std::to_string(W.rows()));
  }
  if (B.rank() != 1 || B.shape[0] != W.cols()) {
    throw ShapeError("linear: bias shape " + B.shape_str() +
                     " vs weight cols " + std::to_string(W.cols()));
  }
  VarId y = matmul(t, x, w);
  return add_row_vector(t, y, b);
}

VarId softmax(GradTape& t, VarId x) {
  const Tensor& X = t.val(x);
  auto [outer, k] = trailing_view(X, "softmax");
  Tensor Y = Tensor::zeros(X.shape);
  for (int64_t o = 0; o < outer; ++o) {
    const double* xr = &X.data[static_cast<size_t>(o) * k];
    double* yr = &Y.data[static_cast<size_t>(o) * k];
    double mx = xr[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (int j = 0; j < k; ++j) yr[j] /= z;
  }
  return t.record(std::move(Y), [x, outer = outer, k = k](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    const Tensor& Y2 = tp.val(self);
    Tensor& dX = tp.grad(x);
    for (int64_t o = 0; o < outer; ++o) {
      const double* g = &G.data[static_cast<size_t>(o) * k];
      const double* y = &Y2.data[static_cast<size_t>(o) * k];
      double dot = 0.0;
      for (int j = 0; j < k; ++j) dot += g[j] * y[j];
      double* dx = &dX.data[static_cast<size_t>(o) * k];
      for (int j = 0; j < k; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  });
}

VarId layer_norm(GradTape& t, VarId x, VarId gamma, VarId beta, double eps) {
  const Tensor& X = t.val(x);
  auto [outer, d] = trailing_view(X, "layer_norm");
  const Tensor& G = t.val(gamma);
  const Tensor& B = t.val(beta);
  if (G.rank() != 1 || G.shape[0] != d || B.rank() != 1 || B.shape[0] != d) {
    throw ShapeError("layer_norm: gamma " + G.shape_str() + " beta " +
                     B.shape_str() + " vs trailing dim " + std::to_string(d));
  }
  if (eps <= 0.0) throw ValidationError("layer_norm: eps must be positive");
  Tensor Y = Tensor::zeros(X.shape);
  std::vector<double> inv_std(outer), means(outer);
  for (int64_t o = 0; o < outer; ++o) {
    const double* xr = &X.data[static_cast<size_t>(o) * d];
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    means[o] = mu;
    inv_std[o] = is;
    double* yr = &Y.data[static_cast<size_t>(o) * d];
    for (int j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * is * G.data[j] + B.data[j];
  }
  return t.record(std::move(Y), [x, gamma, beta, outer = outer, d = d,
                                 inv_std = std::move(inv_std),
                                 means = std::move(means)](GradTape& tp, VarId self) {
    const Tensor& Gout = tp.grad(self);
    const Tensor& X2 = tp.val(x);
    const Tensor& Gam = tp.val(gamma);
    Tensor& dX = tp.grad(x);
    Tensor& dGam = tp.grad(gamma);
    Tensor& dBeta = tp.grad(beta);
    for (int64_t o = 0; o < outer; ++o) {
      const double* g = &Gout.data[static_cast<size_t>(o) * d];
      const double* xr = &X2.data[static_cast<size_t>(o) * d];
      const double mu = means[o];
      const double is = inv_std[o];
      // xhat = (x - mu) * is ; y = xhat*gamma + beta
      double sum_gh = 0.0, sum_gh_xhat = 0.0;
      for (int j = 0; j < d; ++j) {
        const double xhat = (xr[j] - mu) * is;
        const double gh = g[j] * Gam.data[j];
        sum_gh += gh;
        sum_gh_xhat += gh * xhat;
        dGam.data[j] += g[j] * xhat;
        dBeta.data[j] += g[j];
      }
      double* dx = &dX.data[static_cast<size_t>(o) * d];
      for (int j = 0; j < d; ++j) {
        const double xhat = (xr[j] - mu) * is;
        const double gh = g[j] * Gam.data[j];
        dx[j] += is * (gh - sum_gh / d - xhat * sum_gh_xhat / d);
      }
    }
  });
}

VarId add(GradTape& t, VarId a, VarId b) {
  require_same_shape(t.val(a), t.val(b), "add");
  Tensor Y = t.val(a);
  for (size_t i = 0; i < Y.data.size(); ++i) Y.data[i] += t.val(b).data[i];
  return t.record(std::move(Y), [a, b](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    tp.accumulate(a, G);
    tp.accumulate(b, G);
  });
}

VarId sub(GradTape& t, VarId a, VarId b) {
  require_same_shape(t.val(a), t.val(b), "sub");
  Tensor Y = t.val(a);
  for (size_t i = 0; i < Y.data.size(); ++i) Y.data[i] -= t.val(b).data[i];
  return t.record(std::move(Y), [a, b](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    tp.accumulate(a, G);
    Tensor& db = tp.grad(b);
    for (size_t i = 0; i < db.data.size(); ++i) db.data[i] -= G.data[i];
  });
}

VarId mul(GradTape& t, VarId a, VarId b) {
  require_same_shape(t.val(a), t.val(b), "mul");
  Tensor Y = t.val(a);
  for (size_t i = 0; i < Y.data.size(); ++i) Y.data[i] *= t.val(b).data[i];
  return t.record(std::move(Y), [a, b](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    const Tensor& A = tp.val(a);
    const Tensor& B = tp.val(b);
    Tensor& da = tp.grad(a);
    Tensor& db = tp.grad(b);
    for (size_t i = 0; i < G.data.size(); ++i) {
      da.data[i] += G.data[i] * B.data[i];
      db.data[i] += G.data[i] * A.data[i];
    }
  });
}

VarId scale(GradTape& t, VarId a, double c) {
  Tensor Y = t.val(a);
  for (double& v : Y.data) v *= c;
  return t.record(std::move(Y), [a, c](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    Tensor& da = tp.grad(a);
    for (size_t i = 0; i < G.data.size(); ++i) da.data[i] += c * G.data[i];
  });
}

VarId add_row_vector(GradTape& t, VarId x, VarId v) {
  require_matrix(t, x, "add_row_vector input");
  const Tensor& X = t.val(x);
  const Tensor& V = t.val(v);
  if (V.rank() != 1 || V.shape[0] != X.cols()) {
    throw ShapeError("add_row_vector: vector " + V.shape_str() + " vs cols " +
                     std::to_string(X.cols()));
  }
  const int n = X.rows(), d = X.cols();
  Tensor Y = X;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) Y(i, j) += V.data[j];
  return t.record(std::move(Y), [x, v, n, d](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    tp.accumulate(x, G);
    Tensor& dv = tp.grad(v);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) dv.data[j] += G(i, j);
  });
}

VarId relu(GradTape& t, VarId x) {
  Tensor Y = t.val(x);
  for (double& v : Y.data) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(Y), [x](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    const Tensor& X = tp.val(x);
    Tensor& dx = tp.grad(x);
    for (size_t i = 0; i < G.data.size(); ++i) {
      if (X.data[i] > 0.0) dx.data[i] += G.data[i];
    }
  });
}

VarId abs_elems(GradTape& t, VarId x) {
  Tensor Y = t.val(x);
  for (double& v : Y.data) v = std::abs(v);
  return t.record(std::move(Y), [x](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    const Tensor& X = tp.val(x);
    Tensor& dx = tp.grad(x);
    for (size_t i = 0; i < G.data.size(); ++i) {
      if (X.data[i] > 0.0) dx.data[i] += G.data[i];
      else if (X.data[i] < 0.0) dx.data[i] -= G.data[i];
    }
  });
}

VarId sigmoid(GradTape& t, VarId x) {
  Tensor Y = t.val(x);
  for (double& v : Y.data) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                 : std::exp(v) / (1.0 + std::exp(v));
  }
  return t.record(std::move(Y), [x](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    const Tensor& Y2 = tp.val(self);
    Tensor& dx = tp.grad(x);
    for (size_t i = 0; i < G.data.size(); ++i) {
      dx.data[i] += G.data[i] * Y2.data[i] * (1.0 - Y2.data[i]);
    }
  });
}

VarId concat_rows(GradTape& t, const std::vector<VarId>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  int d = t.val(parts[0]).cols();
  int n = 0;
  for (VarId p : parts) {
    require_matrix(t, p, "concat_rows part");
    if (t.val(p).cols() != d) {
      throw ShapeError("concat_rows: col mismatch " +
                       std::to_string(t.val(p).cols()) + " vs " +
                       std::to_string(d));
    }
    n += t.val(p).rows();
  }
  Tensor Y = Tensor::zeros({n, d});
  int r = 0;
  for (VarId p : parts) {
    const Tensor& P = t.val(p);
    std::copy(P.data.begin(), P.data.end(),
              Y.data.begin() + static_cast<size_t>(r) * d);
    r += P.rows();
  }
  return t.record(std::move(Y), [parts, d](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    int r = 0;
    for (VarId p : parts) {
      Tensor& dp = tp.grad(p);
      const int pn = tp.val(p).rows();
      for (int i = 0; i < pn; ++i)
        for (int j = 0; j < d; ++j) dp(i, j) += G(r + i, j);
      r += pn;
    }
  });
}

VarId concat_cols(GradTape& t, const std::vector<VarId>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  int n = t.val(parts[0]).rows();
  int d = 0;
  for (VarId p : parts) {
    require_matrix(t, p, "concat_cols part");
    if (t.val(p).rows() != n) {
      throw ShapeError("concat_cols: row mismatch " +
                       std::to_string(t.val(p).rows()) + " vs " +
                       std::to_string(n));
    }
    d += t.val(p).cols();
  }
  Tensor Y = Tensor::zeros({n, d});
  int c = 0;
  for (VarId p : parts) {
    const Tensor& P = t.val(p);
    const int pc = P.cols();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < pc; ++j) Y(i, c + j) = P(i, j);
    c += pc;
  }
  return t.record(std::move(Y), [parts, n](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    int c = 0;
    for (VarId p : parts) {
      Tensor& dp = tp.grad(p);
      const int pc = tp.val(p).cols();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < pc; ++j) dp(i, j) += G(i, c + j);
      c += pc;
    }
  });
}

VarId slice_rows(GradTape& t, VarId x, int r0, int r1) {
  require_matrix(t, x, "slice_rows");
  const Tensor& X = t.val(x);
  if (r0 < 0 || r1 > X.rows() || r0 >= r1) {
    throw ShapeError("slice_rows: [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") of " + std::to_string(X.rows()));
  }
  const int d = X.cols();
  Tensor Y = Tensor::zeros({r1 - r0, d});
  std::copy(X.data.begin() + static_cast<size_t>(r0) * d,
            X.data.begin() + static_cast<size_t>(r1) * d, Y.data.begin());
  return t.record(std::move(Y), [x, r0, r1, d](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    Tensor& dx = tp.grad(x);
    for (int i = 0; i < r1 - r0; ++i)
      for (int j = 0; j < d; ++j) dx(r0 + i, j) += G(i, j);
  });
}

VarId slice_cols(GradTape& t, VarId x, int c0, int c1) {
  require_matrix(t, x, "slice_cols");
  const Tensor& X = t.val(x);
  if (c0 < 0 || c1 > X.cols() || c0 >= c1) {
    throw ShapeError("slice_cols: [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") of " + std::to_string(X.cols()));
  }
  const int n = X.rows();
  Tensor Y = Tensor::zeros({n, c1 - c0});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c1 - c0; ++j) Y(i, j) = X(i, c0 + j);
  return t.record(std::move(Y), [x, c0, c1, n](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    Tensor& dx = tp.grad(x);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c1 - c0; ++j) dx(i, c0 + j) += G(i, j);
  });
}

VarId gather_rows(GradTape& t, VarId x, const std::vector<int>& indices) {
  require_matrix(t, x, "gather_rows");
  const Tensor& X = t.val(x);
  const int d = X.cols();
  for (int idx : indices) {
    if (idx < 0 || idx >= X.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(idx) +
                       " out of " + std::to_string(X.rows()) + " rows");
    }
  }
  Tensor Y = Tensor::zeros({static_cast<int>(indices.size()), d});
  for (size_t i = 0; i < indices.size(); ++i)
    for (int j = 0; j < d; ++j) Y(static_cast<int>(i), j) = X(indices[i], j);
  return t.record(std::move(Y), [x, indices, d](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    Tensor& dx = tp.grad(x);
    for (size_t i = 0; i < indices.size(); ++i)
      for (int j = 0; j < d; ++j) dx(indices[i], j) += G(static_cast<int>(i), j);
  });
}

VarId reshape(GradTape& t, VarId x, const std::vector<int>& new_shape) {
  Tensor Y = t.val(x).reshaped(new_shape);
  return t.record(std::move(Y), [x](GradTape& tp, VarId self) {
    const Tensor& G = tp.grad(self);
    Tensor& dx = tp.grad(x);
    for (size_t i = 0; i < G.data.size(); ++i) dx.data[i] += G.data[i];
  });
}

VarId sum_all(GradTape& t, VarId x) {
  double s = 0.0;
  for (double v : t.val(x).data) s += v;
  return t.record(Tensor({1}, {s}), [x](GradTape& tp, VarId self) {
    const double g = tp.grad(self).data[0];
    Tensor& dx = tp.grad(x);
    for (double& v : dx.data) v += g;
  });
}

VarId mean_all(GradTape& t, VarId x) {
  const double inv = 1.0 / static_cast<double>(t.val(x).numel());
  return scale(t, sum_all(t, x), inv);
}

VarId dot_const(GradTape& t, VarId x, const Tensor& c) {
  require_same_shape(t.val(x), c, "dot_const");
  double s = 0.0;
  for (size_t i = 0; i < c.data.size(); ++i) s += c.data[i] * t.val(x).data[i];
  return t.record(Tensor({1}, {s}), [x, c](GradTape& tp, VarId self) {
    const double g = tp.grad(self).data[0];
    Tensor& dx = tp.grad(x);
    for (size_t i = 0; i < c.data.size(); ++i) dx.data[i] += g * c.data[i];
  });
}

VarId bce_with_logits_mean(GradTape& t, VarId logits, const Tensor& labels) {
  require_same_shape(t.val(logits), labels, "bce_with_logits");
  const Tensor& Z = t.val(logits);
  const int64_t n = Z.numel();
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double z = Z.data[i];
    const double y = labels.data[i];
    // softplus(z) - y*z, with softplus(z) = max(z,0) + log1p(exp(-|z|))
    loss += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z;
  }
  loss /= static_cast<double>(n);
  return t.record(Tensor({1}, {loss}), [logits, labels, n](GradTape& tp, VarId self) {
    const double g = tp.grad(self).data[0] / static_cast<double>(n);
    const Tensor& Z = tp.val(logits);
    Tensor& dz = tp.grad(logits);
    for (int64_t i = 0; i < n; ++i) {
      const double z = Z.data[i];
      const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                : std::exp(z) / (1.0 + std::exp(z));
      dz.data[i] += g * (p - labels.data[i]);
    }
  });
}

}  // namespace mavlkit
