#include "mavlkit/model.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mavlkit/nn.hpp"

namespace mavlkit {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'V', 'L', 'K', 'I', 'T', '1'};

Tensor xavier(int in, int out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (in + out));
  Tensor w = Tensor::zeros({in, out});
  for (double& v : w.data) v = rng.uniform(-bound, bound);
  return w;
}

Tensor scaled_normal(const std::vector<int>& shape, double scale, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

// Map lookup that names the missing parameter instead of a bare
// out_of_range.
VarId pv(const ParamVars& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ConfigError("missing parameter: " + name);
  return it->second;
}

MsdaParams msda_vars(const ParamVars& p, const std::string& prefix) {
  MsdaParams m;
  m.wv = pv(p, prefix + "wv");
  m.bv = pv(p, prefix + "bv");
  m.w_off = pv(p, prefix + "w_off");
  m.b_off = pv(p, prefix + "b_off");
  m.w_att = pv(p, prefix + "w_att");
  m.b_att = pv(p, prefix + "b_att");
  m.wo = pv(p, prefix + "wo");
  m.bo = pv(p, prefix + "bo");
  return m;
}

SaBlockParams sa_vars(const ParamVars& p, const std::string& prefix) {
  SaBlockParams b;
  b.ln1_gamma = pv(p, prefix + "ln1.gamma");
  b.ln1_beta = pv(p, prefix + "ln1.beta");
  b.wq = pv(p, prefix + "attn.wq");
  b.bq = pv(p, prefix + "attn.bq");
  b.wk = pv(p, prefix + "attn.wk");
  b.bk = pv(p, prefix + "attn.bk");
  b.wv = pv(p, prefix + "attn.wv");
  b.bv = pv(p, prefix + "attn.bv");
  b.wo = pv(p, prefix + "attn.wo");
  b.bo = pv(p, prefix + "attn.bo");
  b.ln2_gamma = pv(p, prefix + "ln2.gamma");
  b.ln2_beta = pv(p, prefix + "ln2.beta");
  b.ffn_w1 = pv(p, prefix + "ffn.w1");
  b.ffn_b1 = pv(p, prefix + "ffn.b1");
  b.ffn_w2 = pv(p, prefix + "ffn.w2");
  b.ffn_b2 = pv(p, prefix + "ffn.b2");
  return b;
}

void init_attention(std::map<std::string, Tensor>& p, const std::string& prefix,
                    int c, Rng& rng) {
  p[prefix + "wq"] = xavier(c, c, rng);
  p[prefix + "bq"] = Tensor::zeros({c});
  p[prefix + "wk"] = xavier(c, c, rng);
  p[prefix + "bk"] = Tensor::zeros({c});
  p[prefix + "wv"] = xavier(c, c, rng);
  p[prefix + "bv"] = Tensor::zeros({c});
  p[prefix + "wo"] = xavier(c, c, rng);
  p[prefix + "bo"] = Tensor::zeros({c});
}

void init_layer_norm(std::map<std::string, Tensor>& p,
                     const std::string& prefix, int c) {
  p[prefix + "gamma"] = Tensor::full({c}, 1.0);
  p[prefix + "beta"] = Tensor::zeros({c});
}

void init_ffn(std::map<std::string, Tensor>& p, const std::string& prefix,
              int c, int mult, Rng& rng) {
  p[prefix + "w1"] = xavier(c, c * mult, rng);
  p[prefix + "b1"] = Tensor::zeros({c * mult});
  p[prefix + "w2"] = xavier(c * mult, c, rng);
  p[prefix + "b2"] = Tensor::zeros({c});
}

void init_msda(std::map<std::string, Tensor>& p, const std::string& prefix,
               int c, int heads, int levels, int points, Rng& rng) {
  MsdaParamTensors m = msda_init(c, heads, levels, points, rng);
  p[prefix + "wv"] = m.wv;
  p[prefix + "bv"] = m.bv;
  p[prefix + "w_off"] = m.w_off;
  p[prefix + "b_off"] = m.b_off;
  p[prefix + "w_att"] = m.w_att;
  p[prefix + "b_att"] = m.b_att;
  p[prefix + "wo"] = m.wo;
  p[prefix + "bo"] = m.bo;
}

// Fixed sinusoidal embedding over the cell centers of an h-by-w grid. The
// first half of the channels encodes x, the second half y, each as
// interleaved sin/cos at geometrically spaced frequencies.
Tensor sinusoidal_grid(int h, int w, int c) {
  const int quarter = c / 4;
  Tensor pe = Tensor::zeros({h * w, c});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double x = (j + 0.5) / w;
      const double y = (i + 0.5) / h;
      double* row = &pe.data[static_cast<size_t>(i * w + j) * c];
      for (int k = 0; k < quarter; ++k) {
        const double omega =
            2.0 * M_PI / std::pow(10000.0, static_cast<double>(k) / quarter);
        row[2 * k] = std::sin(x * omega);
        row[2 * k + 1] = std::cos(x * omega);
        row[c / 2 + 2 * k] = std::sin(y * omega);
        row[c / 2 + 2 * k + 1] = std::cos(y * omega);
      }
    }
  }
  return pe;
}

std::string level_key(int l) { return "patch.l" + std::to_string(l); }

nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["image_h"] = cfg.image_h;
  j["image_w"] = cfg.image_w;
  j["in_channels"] = cfg.in_channels;
  j["strides"] = cfg.strides;
  j["channels"] = cfg.channels;
  j["enc_layers"] = cfg.enc_layers;
  j["dec_layers"] = cfg.dec_layers;
  j["queries"] = cfg.queries;
  j["fusion_blocks"] = cfg.fusion_blocks;
  j["vocab"] = cfg.vocab;
  j["max_tokens"] = cfg.max_tokens;
  j["msda_heads"] = cfg.msda_heads;
  j["msda_points"] = cfg.msda_points;
  j["sa_heads"] = cfg.sa_heads;
  j["ffn_mult"] = cfg.ffn_mult;
  j["decoder_aux_loss"] = cfg.decoder_aux_loss;
  j["seed"] = cfg.seed;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.image_h = j.at("image_h").get<int>();
    cfg.image_w = j.at("image_w").get<int>();
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.strides = j.at("strides").get<std::vector<int>>();
    cfg.channels = j.at("channels").get<int>();
    cfg.enc_layers = j.at("enc_layers").get<int>();
    cfg.dec_layers = j.at("dec_layers").get<int>();
    cfg.queries = j.at("queries").get<int>();
    cfg.fusion_blocks = j.at("fusion_blocks").get<int>();
    cfg.vocab = j.at("vocab").get<int>();
    cfg.max_tokens = j.at("max_tokens").get<int>();
    cfg.msda_heads = j.at("msda_heads").get<int>();
    cfg.msda_points = j.at("msda_points").get<int>();
    cfg.sa_heads = j.at("sa_heads").get<int>();
    cfg.ffn_mult = j.at("ffn_mult").get<int>();
    cfg.decoder_aux_loss = j.at("decoder_aux_loss").get<bool>();
    cfg.seed = j.at("seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad checkpoint config: ") + e.what());
  }
  return cfg;
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  uint64_t bits = std::bit_cast<uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

// Cursor over a fully loaded checkpoint buffer with bounds-checked reads.
struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw ValidationError(std::string("truncated checkpoint while reading ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(bits);
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void validate_config(const ModelConfig& cfg) {
  if (cfg.image_h < 1 || cfg.image_w < 1 || cfg.in_channels < 1)
    throw ConfigError("image dimensions and channels must be positive");
  if (cfg.strides.empty()) throw ConfigError("at least one pyramid stride required");
  for (int s : cfg.strides) {
    if (s < 1 || cfg.image_h % s != 0 || cfg.image_w % s != 0)
      throw ConfigError("stride " + std::to_string(s) + " does not divide " +
                        std::to_string(cfg.image_h) + "x" +
                        std::to_string(cfg.image_w));
  }
  if (cfg.channels < 4 || cfg.channels % 4 != 0)
    throw ConfigError("channels must be a positive multiple of 4");
  if (cfg.channels % cfg.sa_heads != 0 || cfg.channels % cfg.msda_heads != 0)
    throw ConfigError("channels must divide evenly across attention heads");
  if (cfg.enc_layers < 0 || cfg.dec_layers < 0)
    throw ConfigError("layer counts cannot be negative");
  if (cfg.queries < 1) throw ConfigError("need at least one query");
  if (cfg.fusion_blocks < 1) throw ConfigError("need at least one fusion block");
  if (cfg.vocab < 1 || cfg.max_tokens < 1)
    throw ConfigError("vocabulary and token budget must be positive");
  if (cfg.msda_points < 1 || cfg.msda_heads < 1 || cfg.sa_heads < 1)
    throw ConfigError("head and point counts must be positive");
  if (cfg.ffn_mult < 1) throw ConfigError("ffn_mult must be positive");
}

const std::vector<std::string>& toy_vocabulary() {
  static const std::vector<std::string> words = {
      "UNK",   "ALL",    "OBJECTS", "ENTITIES", "SMALL",   "LARGE",
      "TINY",  "BIG",    "THINGS",  "ITEMS",    "SHAPES",  "REGIONS",
      "EVERY", "VISIBLE", "KNOWN",  "OTHER"};
  return words;
}

std::vector<int> tokenize(const std::string& text, int vocab_size) {
  const auto& words = toy_vocabulary();
  std::vector<int> ids;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    for (char& ch : word) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    int id = 0;
    for (size_t i = 0; i < words.size(); ++i) {
      if (words[i] == word) {
        id = static_cast<int>(i);
        break;
      }
    }
    if (id >= vocab_size) id = 0;
    ids.push_back(id);
  }
  return ids;
}

std::map<std::string, Tensor> model_init(const ModelConfig& cfg) {
  validate_config(cfg);
  Rng rng(cfg.seed);
  std::map<std::string, Tensor> p;
  const int c = cfg.channels;
  const int levels = static_cast<int>(cfg.strides.size());

  for (int l = 0; l < levels; ++l) {
    const int in_dim = cfg.strides[l] * cfg.strides[l] * cfg.in_channels;
    p[level_key(l) + ".w"] = xavier(in_dim, c, rng);
    p[level_key(l) + ".b"] = Tensor::zeros({c});
  }
  p["pyramid.level_emb"] = scaled_normal({levels, c}, 0.2, rng);

  for (int e = 0; e < cfg.enc_layers; ++e) {
    const std::string pre = "enc." + std::to_string(e) + ".";
    init_layer_norm(p, pre + "ln1.", c);
    init_msda(p, pre + "msda.", c, cfg.msda_heads, levels, cfg.msda_points, rng);
    init_layer_norm(p, pre + "ln2.", c);
    init_ffn(p, pre + "ffn.", c, cfg.ffn_mult, rng);
  }

  p["dec.query_emb"] = scaled_normal({cfg.queries, c}, 0.5, rng);
  p["dec.ref.w"] = xavier(c, 2, rng);
  p["dec.ref.b"] = Tensor::zeros({2});
  for (int d = 0; d < cfg.dec_layers; ++d) {
    const std::string pre = "dec." + std::to_string(d) + ".";
    init_layer_norm(p, pre + "ln1.", c);
    init_attention(p, pre + "attn.", c, rng);
    init_layer_norm(p, pre + "ln2.", c);
    init_msda(p, pre + "msda.", c, cfg.msda_heads, levels, cfg.msda_points, rng);
    init_layer_norm(p, pre + "ln3.", c);
    init_ffn(p, pre + "ffn.", c, cfg.ffn_mult, rng);
  }

  p["text.tok_emb"] = scaled_normal({cfg.vocab, c}, 0.2, rng);
  p["text.pos_emb"] = scaled_normal({cfg.max_tokens, c}, 0.2, rng);
  p["fusion.pos_emb"] = scaled_normal({cfg.queries + cfg.max_tokens, c}, 0.2, rng);
  for (int f = 0; f < cfg.fusion_blocks; ++f) {
    const std::string pre = "fusion." + std::to_string(f) + ".";
    init_layer_norm(p, pre + "ln1.", c);
    init_attention(p, pre + "attn.", c, rng);
    init_layer_norm(p, pre + "ln2.", c);
    init_ffn(p, pre + "ffn.", c, cfg.ffn_mult, rng);
  }

  p["head.box.w1"] = xavier(c, c, rng);
  p["head.box.b1"] = Tensor::zeros({c});
  p["head.box.w2"] = xavier(c, 4, rng);
  p["head.box.b2"] = Tensor::zeros({4});
  p["head.obj.w"] = xavier(c, 1, rng);
  // Start objectness low so an untrained model does not flood the loss with
  // confident false positives.
  p["head.obj.b"] = Tensor::full({1}, -2.0);
  return p;
}

std::map<std::string, VarId> leaf_params(GradTape& t,
                                         const std::map<std::string, Tensor>& p) {
  std::map<std::string, VarId> out;
  for (const auto& [name, tensor] : p) out[name] = t.leaf(tensor);
  return out;
}

std::vector<PyramidLevelRef> encode_image(GradTape& t, const ModelConfig& cfg,
                                          const ParamVars& p,
                                          const Tensor& image) {
  const int h = cfg.image_h, w = cfg.image_w, ch = cfg.in_channels;
  const bool flat_ok = ch == 1 && image.rank() == 2;
  const bool full_ok =
      image.rank() == 3 && image.shape[0] == h && image.shape[1] == w && image.shape[2] == ch;
  if (!(full_ok || (flat_ok && image.shape[0] == h && image.shape[1] == w)))
    throw ConfigError("image shape " + image.shape_str() + " does not match " +
                      std::to_string(h) + "x" + std::to_string(w) + "x" +
                      std::to_string(ch));

  const int levels = static_cast<int>(cfg.strides.size());
  const int c = cfg.channels;
  std::vector<VarId> level_tokens;
  std::vector<int> level_h(levels), level_w(levels);
  int total = 0;
  for (int l = 0; l < levels; ++l) {
    const int s = cfg.strides[l];
    const int hl = h / s, wl = w / s;
    level_h[l] = hl;
    level_w[l] = wl;
    total += hl * wl;

    // The image itself is constant input, so the patch rearrangement happens
    // outside the tape and only the embedding is differentiable.
    Tensor patches = Tensor::zeros({hl * wl, s * s * ch});
    for (int pi = 0; pi < hl; ++pi) {
      for (int pj = 0; pj < wl; ++pj) {
        double* row = &patches.data[static_cast<size_t>(pi * wl + pj) * s * s * ch];
        int idx = 0;
        for (int di = 0; di < s; ++di) {
          for (int dj = 0; dj < s; ++dj) {
            const int yi = pi * s + di, xj = pj * s + dj;
            for (int cc = 0; cc < ch; ++cc)
              row[idx++] = image.data[(static_cast<size_t>(yi) * w + xj) * ch + cc];
          }
        }
      }
    }
    VarId x = linear(t, t.leaf(patches), pv(p, level_key(l) + ".w"),
                       pv(p, level_key(l) + ".b"));
    x = add(t, x, t.leaf(sinusoidal_grid(hl, wl, c)));
    VarId lev = reshape(t, gather_rows(t, pv(p, "pyramid.level_emb"), {l}), {c});
    x = add_row_vector(t, x, lev);
    level_tokens.push_back(x);
  }

  // Every pyramid cell references its own normalized center.
  Tensor refs = Tensor::zeros({total, 2});
  {
    int row = 0;
    for (int l = 0; l < levels; ++l) {
      for (int i = 0; i < level_h[l]; ++i) {
        for (int j = 0; j < level_w[l]; ++j) {
          refs(row, 0) = (j + 0.5) / level_w[l];
          refs(row, 1) = (i + 0.5) / level_h[l];
          ++row;
        }
      }
    }
  }
  VarId ref_leaf = t.leaf(refs);

  VarId tokens = levels == 1 ? level_tokens[0] : concat_rows(t, level_tokens);
  for (int e = 0; e < cfg.enc_layers; ++e) {
    const std::string pre = "enc." + std::to_string(e) + ".";
    VarId n1 = layer_norm(t, tokens, pv(p, pre + "ln1.gamma"), pv(p, pre + "ln1.beta"));
    std::vector<PyramidLevelRef> views;
    int off = 0;
    for (int l = 0; l < levels; ++l) {
      const int n = level_h[l] * level_w[l];
      views.push_back({level_h[l], level_w[l],
                       reshape(t, slice_rows(t, n1, off, off + n),
                                 {level_h[l], level_w[l], c})});
      off += n;
    }
    VarId att = msda_forward(t, n1, ref_leaf, views, msda_vars(p, pre + "msda."),
                             cfg.msda_heads, cfg.msda_points);
    tokens = add(t, tokens, att);
    VarId n2 = layer_norm(t, tokens, pv(p, pre + "ln2.gamma"), pv(p, pre + "ln2.beta"));
    tokens = add(t, tokens, ffn(t, n2, pv(p, pre + "ffn.w1"), pv(p, pre + "ffn.b1"),
                               pv(p, pre + "ffn.w2"), pv(p, pre + "ffn.b2")));
  }

  std::vector<PyramidLevelRef> out;
  int off = 0;
  for (int l = 0; l < levels; ++l) {
    const int n = level_h[l] * level_w[l];
    out.push_back({level_h[l], level_w[l],
                   reshape(t, slice_rows(t, tokens, off, off + n),
                             {level_h[l], level_w[l], c})});
    off += n;
  }
  return out;
}

VarId decode_queries(GradTape& t, const ModelConfig& cfg, const ParamVars& p,
                     const std::vector<PyramidLevelRef>& pyramid,
                     VarId* refs_out, std::vector<VarId>* intermediates_out) {
  VarId x = pv(p, "dec.query_emb");
  // Reference points come from the initial embeddings and stay fixed across
  // the decoder stack; the squash keeps them inside the unit square.
  VarId refs = sigmoid(t, linear(t, x, pv(p, "dec.ref.w"), pv(p, "dec.ref.b")));
  for (int d = 0; d < cfg.dec_layers; ++d) {
    const std::string pre = "dec." + std::to_string(d) + ".";
    VarId n1 = layer_norm(t, x, pv(p, pre + "ln1.gamma"), pv(p, pre + "ln1.beta"));
    x = add(t, x, multi_head_self_attention(
                     t, n1, pv(p, pre + "attn.wq"), pv(p, pre + "attn.bq"),
                     pv(p, pre + "attn.wk"), pv(p, pre + "attn.bk"),
                     pv(p, pre + "attn.wv"), pv(p, pre + "attn.bv"),
                     pv(p, pre + "attn.wo"), pv(p, pre + "attn.bo"), cfg.sa_heads));
    VarId n2 = layer_norm(t, x, pv(p, pre + "ln2.gamma"), pv(p, pre + "ln2.beta"));
    x = add(t, x, msda_forward(t, n2, refs, pyramid, msda_vars(p, pre + "msda."),
                              cfg.msda_heads, cfg.msda_points));
    VarId n3 = layer_norm(t, x, pv(p, pre + "ln3.gamma"), pv(p, pre + "ln3.beta"));
    x = add(t, x, ffn(t, n3, pv(p, pre + "ffn.w1"), pv(p, pre + "ffn.b1"),
                     pv(p, pre + "ffn.w2"), pv(p, pre + "ffn.b2")));
    if (intermediates_out && d + 1 < cfg.dec_layers)
      intermediates_out->push_back(x);
  }
  if (refs_out) *refs_out = refs;
  return x;
}

VarId embed_tokens(GradTape& t, const ModelConfig& cfg, const ParamVars& p,
                   const std::vector<int>& tokens) {
  if (tokens.empty() || static_cast<int>(tokens.size()) > cfg.max_tokens)
    throw ValidationError("token query length " + std::to_string(tokens.size()) +
                          " outside [1, " + std::to_string(cfg.max_tokens) + "]");
  for (int id : tokens)
    if (id < 0 || id >= cfg.vocab)
      throw ValidationError("token id " + std::to_string(id) +
                            " outside vocabulary of " + std::to_string(cfg.vocab));
  VarId emb = gather_rows(t, pv(p, "text.tok_emb"), tokens);
  VarId pos = slice_rows(t, pv(p, "text.pos_emb"), 0, static_cast<int>(tokens.size()));
  return add(t, emb, pos);
}

// Shared detection head: 2-layer box MLP squashed to normalized cxcywh plus
// a single objectness logit per query row.
static DetectionSetVar detection_head(GradTape& t, const ParamVars& p,
                                      VarId qrows, int q) {
  VarId hidden = relu(t, linear(t, qrows, pv(p, "head.box.w1"), pv(p, "head.box.b1")));
  VarId boxes = sigmoid(t, linear(t, hidden, pv(p, "head.box.w2"), pv(p, "head.box.b2")));
  VarId logits = reshape(t, linear(t, qrows, pv(p, "head.obj.w"), pv(p, "head.obj.b")), {q});
  return {boxes, logits};
}

std::vector<DetectionSetVar> late_fusion_forward(GradTape& t,
                                                 const ModelConfig& cfg,
                                                 const ParamVars& p,
                                                 VarId query_reprs,
                                                 VarId text_embs) {
  const int q = cfg.queries;
  const int text_len = t.val(text_embs).rows();
  VarId cat = concat_rows(t, {query_reprs, text_embs});
  cat = add(t, cat, slice_rows(t, pv(p, "fusion.pos_emb"), 0, q + text_len));

  std::vector<DetectionSetVar> sets;
  for (int f = 0; f < cfg.fusion_blocks; ++f) {
    const std::string pre = "fusion." + std::to_string(f) + ".";
    cat = self_attention_block(t, cat, sa_vars(p, pre), cfg.sa_heads);
    sets.push_back(detection_head(t, p, slice_rows(t, cat, 0, q), q));
  }
  return sets;
}

std::vector<DetectionSetVar> model_forward(GradTape& t, const ModelConfig& cfg,
                                           const ParamVars& p,
                                           const Tensor& image,
                                           const std::vector<int>& tokens) {
  std::vector<PyramidLevelRef> pyramid = encode_image(t, cfg, p, image);
  std::vector<VarId> intermediates;
  VarId queries = decode_queries(t, cfg, p, pyramid, nullptr,
                                 cfg.decoder_aux_loss ? &intermediates : nullptr);
  VarId text = embed_tokens(t, cfg, p, tokens);
  std::vector<DetectionSetVar> sets;
  for (VarId x : intermediates)
    sets.push_back(detection_head(t, p, x, cfg.queries));
  std::vector<DetectionSetVar> fused = late_fusion_forward(t, cfg, p, queries, text);
  sets.insert(sets.end(), fused.begin(), fused.end());
  return sets;
}

std::vector<Detection> predict(const ModelConfig& cfg,
                               const std::map<std::string, Tensor>& params,
                               const Tensor& image,
                               const std::vector<int>& tokens,
                               int64_t image_id) {
  GradTape t;
  ParamVars p = leaf_params(t, params);
  std::vector<DetectionSetVar> sets = model_forward(t, cfg, p, image, tokens);
  const Tensor& boxes = t.val(sets.back().boxes);
  const Tensor& logits = t.val(sets.back().logits);

  std::vector<Detection> dets;
  for (int q = 0; q < cfg.queries; ++q) {
    const double cx = boxes(q, 0) * cfg.image_w;
    const double cy = boxes(q, 1) * cfg.image_h;
    const double bw = boxes(q, 2) * cfg.image_w;
    const double bh = boxes(q, 3) * cfg.image_h;
    Detection d;
    d.image_id = image_id;
    d.box = {cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2};
    d.score = 1.0 / (1.0 + std::exp(-logits.data[q]));
    dets.push_back(d);
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return dets;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const std::map<std::string, Tensor>& params) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  const std::string js = config_to_json(cfg).dump();
  put_u32(out, static_cast<uint32_t>(js.size()));
  out += js;
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(tensor.rank()));
    for (int d : tensor.shape) put_u32(out, static_cast<uint32_t>(d));
    for (double v : tensor.data) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw ValidationError("short write to checkpoint: " + path);
}

void load_checkpoint(const std::string& path, ModelConfig* cfg,
                     std::map<std::string, Tensor>* params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};

  std::string magic = r.bytes(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
    throw ValidationError(path + " is not a checkpoint (bad magic)");

  const uint32_t cfg_len = r.u32("config length");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(r.bytes(cfg_len, "config"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad checkpoint config: ") + e.what());
  }
  ModelConfig parsed = config_from_json(j);
  validate_config(parsed);

  std::map<std::string, Tensor> loaded;
  const uint32_t count = r.u32("parameter count");
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32("name length");
    std::string name = r.bytes(name_len, "name");
    const uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8)
      throw ValidationError("parameter " + name + " has implausible rank " +
                            std::to_string(rank));
    std::vector<int> shape;
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint32_t dim = r.u32("dimension");
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    Tensor t = Tensor::zeros(shape);
    for (int64_t k = 0; k < numel; ++k) t.data[static_cast<size_t>(k)] = r.f64("data");
    if (loaded.count(name))
      throw ValidationError("duplicate parameter in checkpoint: " + name);
    loaded.emplace(std::move(name), std::move(t));
  }
  if (r.pos != buf.size())
    throw ValidationError("trailing bytes after checkpoint payload");

  *cfg = parsed;
  *params = std::move(loaded);
}

}  // namespace mavlkit
