#pragma once

#include <functional>
#include <vector>

#include "mavlkit/tape.hpp"

namespace mavlkit {

// Pre-norm transformer block weights, as tape leaves.
struct SaBlockParams {
  VarId ln1_gamma, ln1_beta;
  VarId wq, bq, wk, bk, wv, bv, wo, bo;
  VarId ln2_gamma, ln2_beta;
  VarId ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Multi-head self-attention over [n,d] tokens: softmax(QK^T/sqrt(dh))V per
// head, heads concatenated and projected. d must divide by heads.
VarId multi_head_self_attention(GradTape& t, VarId tokens, VarId wq, VarId bq,
                                VarId wk, VarId bk, VarId wv, VarId bv,
                                VarId wo, VarId bo, int heads);

// tokens + MHSA(LN(tokens)), then + FFN(LN(.)). Output shape equals input.
VarId self_attention_block(GradTape& t, VarId tokens, const SaBlockParams& p,
                           int heads);

VarId ffn(GradTape& t, VarId x, VarId w1, VarId b1, VarId w2, VarId b2);

// Central finite-difference gradient check. `build` constructs a scalar node
// from leaves created for `inputs` (order preserved). Returns the max over
// all input elements of |analytic - central_fd| / max(1, |analytic|).
double grad_check(
    const std::function<VarId(GradTape&, const std::vector<VarId>&)>& build,
    std::vector<Tensor> inputs, double step = 1e-5);

// Fixed random cotangent from `seed` reducing tensor output to a scalar, for
// checking non-scalar ops.
VarId reduce_with_cotangent(GradTape& t, VarId y, uint64_t seed);

}  // namespace mavlkit
