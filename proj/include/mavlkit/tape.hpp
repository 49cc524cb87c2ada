#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "mavlkit/tensor.hpp"

namespace mavlkit {

using VarId = int;
constexpr VarId kNoVar = -1;

// Reverse-mode tape. Every op records one node; backward() replays nodes in
// exact reverse order of forward execution. Values are immutable once
// recorded; gradients accumulate into per-node buffers.
class GradTape {
 public:
  using BackwardFn = std::function<void(GradTape&, VarId self)>;

  VarId leaf(Tensor value);
  VarId record(Tensor value, BackwardFn backward);

  const Tensor& val(VarId id) const { return nodes_[id].value; }
  bool has_grad(VarId id) const { return nodes_[id].grad_allocated; }
  // Gradient buffer, zero-initialized on first touch.
  Tensor& grad(VarId id);
  void accumulate(VarId id, const Tensor& delta);

  // Seeds d(root)/d(root) = 1 for a scalar root (shape [1]).
  void backward(VarId root);
  // Arbitrary cotangent seed matching val(root)'s shape.
  void backward(VarId root, const Tensor& seed);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_allocated = false;
    BackwardFn backward;
  };
  // Deque so val()/grad() references stay valid while later ops append.
  std::deque<Node> nodes_;
};

// ---- primitive ops ---------------------------------------------------------
// Each returns a new tape node; shapes are validated up front and mismatches
// throw ShapeError naming the offending dimensions.

// y[i,j] = sum_k x[i,k] W[k,j] + b[j]
VarId linear(GradTape& t, VarId x, VarId w, VarId b);
VarId matmul(GradTape& t, VarId a, VarId b);
// a [n,k] times b^T where b is [m,k]  ->  [n,m]
VarId matmul_nt(GradTape& t, VarId a, VarId b);

// Trailing-axis softmax with max-subtraction; slices sum to 1 within 1e-12.
VarId softmax(GradTape& t, VarId x);
// Per-trailing-slice normalization to mean 0 / var 1, then gamma*x + beta.
VarId layer_norm(GradTape& t, VarId x, VarId gamma, VarId beta, double eps = 1e-5);

VarId add(GradTape& t, VarId a, VarId b);
VarId sub(GradTape& t, VarId a, VarId b);
VarId mul(GradTape& t, VarId a, VarId b);  // elementwise
VarId scale(GradTape& t, VarId a, double c);
// Adds a length-d vector to every row of an [n,d] tensor.
VarId add_row_vector(GradTape& t, VarId x, VarId v);
VarId relu(GradTape& t, VarId x);
VarId sigmoid(GradTape& t, VarId x);
VarId abs_elems(GradTape& t, VarId x);

VarId concat_rows(GradTape& t, const std::vector<VarId>& parts);
VarId concat_cols(GradTape& t, const std::vector<VarId>& parts);
VarId slice_rows(GradTape& t, VarId x, int r0, int r1);
VarId slice_cols(GradTape& t, VarId x, int c0, int c1);
// out[i,:] = x[indices[i],:]
VarId gather_rows(GradTape& t, VarId x, const std::vector<int>& indices);
VarId reshape(GradTape& t, VarId x, const std::vector<int>& new_shape);

VarId sum_all(GradTape& t, VarId x);   // scalar [1]
VarId mean_all(GradTape& t, VarId x);  // scalar [1]
// dot(c, flatten(x)) with a constant cotangent; scalar [1]
VarId dot_const(GradTape& t, VarId x, const Tensor& c);

// Mean over elements of BCE(sigmoid(logit), label) with constant labels,
// computed in softplus form so saturated logits stay finite.
VarId bce_with_logits_mean(GradTape& t, VarId logits, const Tensor& labels);

}  // namespace mavlkit
