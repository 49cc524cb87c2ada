#include "mavlkit/nn.hpp"

#include <cmath>

namespace mavlkit {

VarId multi_head_self_attention(GradTape& t, VarId tokens, VarId wq, VarId bq,
                                VarId wk, VarId bk, VarId wv, VarId bv,
                                VarId wo, VarId bo, int heads) {
  const Tensor& x = t.val(tokens);
  if (x.rank() != 2) throw ShapeError("attention expects [n,d] tokens, got " + x.shape_str());
  const int d = x.cols();
  if (heads <= 0 || d % heads != 0)
    throw ConfigError("model dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  const int dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  VarId q = linear(t, tokens, wq, bq);
  VarId k = linear(t, tokens, wk, bk);
  VarId v = linear(t, tokens, wv, bv);

  std::vector<VarId> head_out(heads);
  for (int h = 0; h < heads; ++h) {
    VarId qh = slice_cols(t, q, h * dh, (h + 1) * dh);
    VarId kh = slice_cols(t, k, h * dh, (h + 1) * dh);
    VarId vh = slice_cols(t, v, h * dh, (h + 1) * dh);
    VarId scores = scale(t, matmul_nt(t, qh, kh), inv_sqrt_dh);  // [n,n]
    VarId attn = softmax(t, scores);
    head_out[h] = matmul(t, attn, vh);  // [n,dh]
  }
  return linear(t, concat_cols(t, head_out), wo, bo);
}

VarId ffn(GradTape& t, VarId x, VarId w1, VarId b1, VarId w2, VarId b2) {
  return linear(t, relu(t, linear(t, x, w1, b1)), w2, b2);
}

VarId self_attention_block(GradTape& t, VarId tokens, const SaBlockParams& p,
                           int heads) {
  VarId normed = layer_norm(t, tokens, p.ln1_gamma, p.ln1_beta);
  VarId attn = multi_head_self_attention(t, normed, p.wq, p.bq, p.wk, p.bk,
                                         p.wv, p.bv, p.wo, p.bo, heads);
  VarId x = add(t, tokens, attn);
  VarId normed2 = layer_norm(t, x, p.ln2_gamma, p.ln2_beta);
  return add(t, x, ffn(t, normed2, p.ffn_w1, p.ffn_b1, p.ffn_w2, p.ffn_b2));
}

VarId reduce_with_cotangent(GradTape& t, VarId y, uint64_t seed) {
  Rng rng(seed);
  const Tensor& v = t.val(y);
  Tensor cot = Tensor::zeros(v.shape);
  for (double& c : cot.data) c = rng.uniform(-1.0, 1.0);
  return dot_const(t, y, cot);
}

double grad_check(
    const std::function<VarId(GradTape&, const std::vector<VarId>&)>& build,
    std::vector<Tensor> inputs, double step) {
  // Analytic pass.
  GradTape t;
  std::vector<VarId> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& in : inputs) leaves.push_back(t.leaf(in));
  VarId root = build(t, leaves);
  if (t.val(root).numel() != 1)
    throw ShapeError("grad_check needs a scalar root, got " + t.val(root).shape_str());
  if (!t.val(root).all_finite())
    throw ValidationError("grad_check: non-finite forward value");
  t.backward(root);
  for (VarId leaf : leaves)
    if (t.has_grad(leaf) && !t.grad(leaf).all_finite())
      throw ValidationError("grad_check: non-finite analytic gradient");

  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& analytic = t.grad(leaves[i]);
    for (int e = 0; e < inputs[i].numel(); ++e) {
      const double keep = inputs[i].data[e];

      inputs[i].data[e] = keep + step;
      GradTape tp;
      std::vector<VarId> lp;
      for (const Tensor& in : inputs) lp.push_back(tp.leaf(in));
      const double fplus = tp.val(build(tp, lp)).data[0];

      inputs[i].data[e] = keep - step;
      GradTape tm;
      std::vector<VarId> lm;
      for (const Tensor& in : inputs) lm.push_back(tm.leaf(in));
      const double fminus = tm.val(build(tm, lm)).data[0];

      inputs[i].data[e] = keep;
      const double fd = (fplus - fminus) / (2.0 * step);
      const double a = analytic.data[e];
      const double rel = std::abs(a - fd) / std::max(1.0, std::abs(a));
      if (rel > worst) worst = rel;
    }
  }
  return worst;
}

}  // namespace mavlkit
