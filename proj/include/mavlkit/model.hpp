#pragma once

#include <map>
#include <string>
#include <vector>

#include "mavlkit/geometry.hpp"
#include "mavlkit/matching.hpp"
#include "mavlkit/msda.hpp"
#include "mavlkit/tape.hpp"

namespace mavlkit {

struct ModelConfig {
  int image_h = 64, image_w = 64;
  int in_channels = 1;
  std::vector<int> strides = {8, 16, 32};
  int channels = 64;
  int enc_layers = 2;
  int dec_layers = 2;
  int queries = 24;
  int fusion_blocks = 6;
  int vocab = 16;
  int max_tokens = 8;
  int msda_heads = 4;
  int msda_points = 4;
  int sa_heads = 4;
  int ffn_mult = 2;
  bool decoder_aux_loss = false;
  uint64_t seed = 1;
};

// Throws ConfigError when strides do not divide the image size, counts are
// non-positive, or channel/head divisibility fails.
void validate_config(const ModelConfig& cfg);

// Toy stand-in for the pretrained language model: a fixed 16-word
// vocabulary with id 0 reserved for unknown words.
const std::vector<std::string>& toy_vocabulary();
std::vector<int> tokenize(const std::string& text, int vocab_size);

// Fresh parameter set keyed by canonical dotted names (map order is the
// checkpoint serialization order).
std::map<std::string, Tensor> model_init(const ModelConfig& cfg);

std::map<std::string, VarId> leaf_params(GradTape& t,
                                         const std::map<std::string, Tensor>& p);

using ParamVars = std::map<std::string, VarId>;

// Patch-embedded pyramid with sinusoidal 2-D position and learned level
// embeddings, refined by E deformable self-attention encoder layers where
// every pyramid cell queries from its own normalized location.
std::vector<PyramidLevelRef> encode_image(GradTape& t, const ModelConfig& cfg,
                                          const ParamVars& p,
                                          const Tensor& image);

// Q learned queries decoded against the pyramid: per layer, query
// self-attention then deformable cross-attention at per-query reference
// points squashed from the initial query embeddings. Returns the decoded
// queries and writes the reference-point node to *refs_out when non-null.
// When intermediates_out is non-null it receives the query representations
// after every decoder layer except the last.
VarId decode_queries(GradTape& t, const ModelConfig& cfg, const ParamVars& p,
                     const std::vector<PyramidLevelRef>& pyramid,
                     VarId* refs_out = nullptr,
                     std::vector<VarId>* intermediates_out = nullptr);

// Learned token embeddings plus learned text position embeddings.
VarId embed_tokens(GradTape& t, const ModelConfig& cfg, const ParamVars& p,
                   const std::vector<int>& tokens);

// Concatenate queries and text tokens, add fusion position embeddings, run F
// self-attention blocks, and read the shared detection head off the first Q
// rows after every block. Text rows are never decoded into boxes.
std::vector<DetectionSetVar> late_fusion_forward(GradTape& t,
                                                 const ModelConfig& cfg,
                                                 const ParamVars& p,
                                                 VarId query_reprs,
                                                 VarId text_embs);

// Full forward pass. Returns the F fusion-block detection sets, last entry
// being the final block. With decoder_aux_loss set, the shared head is also
// read off each intermediate decoder layer and those sets are prepended, so
// the final fusion output stays at the back.
std::vector<DetectionSetVar> model_forward(GradTape& t, const ModelConfig& cfg,
                                           const ParamVars& p,
                                           const Tensor& image,
                                           const std::vector<int>& tokens);

// Value-level detections from the final fusion block: normalized cxcywh
// converted to corner pixels in the original image frame, scores sorted
// descending (ties keep the lower query index), length Q.
std::vector<Detection> predict(const ModelConfig& cfg,
                               const std::map<std::string, Tensor>& params,
                               const Tensor& image,
                               const std::vector<int>& tokens,
                               int64_t image_id = 0);

// Little-endian checkpoint: magic "MAVLKIT1", length-prefixed config JSON,
// then per parameter name, rank, dims (u32 each), raw f64 data, in map
// (name-sorted) order. Load-then-save reproduces the file byte for byte.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const std::map<std::string, Tensor>& params);
void load_checkpoint(const std::string& path, ModelConfig* cfg,
                     std::map<std::string, Tensor>* params);

}  // namespace mavlkit
