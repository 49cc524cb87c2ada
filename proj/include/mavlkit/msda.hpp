#pragma once

#include <cstdint>
#include <vector>

#include "mavlkit/tape.hpp"

namespace mavlkit {

// One pyramid level: values is a rank-3 [H,W,C] tape node. All levels of a
// pyramid share C; strides (and therefore H,W) shrink as the level index
// grows.
struct PyramidLevelRef {
  int h = 0, w = 0;
  VarId values = kNoVar;
};

// Deformable-attention weights as tape leaves. The value projection is one
// [C,C] map whose output channels are split across heads; offset and
// attention projections read the query vector.
struct MsdaParams {
  VarId wv = kNoVar, bv = kNoVar;        // [C,C], [C]
  VarId w_off = kNoVar, b_off = kNoVar;  // [d, M*L*K*2], [M*L*K*2]
  VarId w_att = kNoVar, b_att = kNoVar;  // [d, M*L*K], [M*L*K]
  VarId wo = kNoVar, bo = kNoVar;        // [C,C], [C]
};

// Plain-tensor twin of MsdaParams for initialization and checkpointing.
struct MsdaParamTensors {
  Tensor wv, bv, w_off, b_off, w_att, b_att, wo, bo;
};

// Zero offset weights with a fixed star of K directions per head in the
// bias, zero attention projection (uniform attention at start), small random
// value/output projections.
MsdaParamTensors msda_init(int c, int heads, int levels, int points, Rng& rng);

MsdaParams msda_leaf(GradTape& t, const MsdaParamTensors& p);

// Forward-pass instrumentation. Sampling work is counted in pixels fed
// through the value projection and sample taps taken, so tests can assert
// cost is independent of pyramid area at fixed query count.
struct MsdaStats {
  int64_t pixels_projected = 0;
  int64_t samples_taken = 0;
};

// Interpolates among the four pixel centers around `point` ([2], x then y,
// in pixel units where integer coordinates are centers). Out-of-map corners
// contribute zero. Differentiable in both the map and the point.
VarId bilinear_sample(GradTape& t, VarId map, VarId point);

// Multi-scale deformable attention. queries [Q,d] with d equal to the
// pyramid channel count, refs [Q,2] normalized to the unit square. Each head
// softmax-normalizes its L*K attention logits, samples the value-projected
// pyramid at ref*level_size - 0.5 plus predicted per-slot offsets (offsets
// live in level-pixel units), and the concatenated heads pass through the
// output projection. Work per query is Theta(M*L*K) regardless of pyramid
// area; value projection is memoized per touched pixel.
VarId msda_forward(GradTape& t, VarId queries, VarId refs,
                   const std::vector<PyramidLevelRef>& pyramid,
                   const MsdaParams& p, int heads, int points,
                   MsdaStats* stats = nullptr);

}  // namespace mavlkit
