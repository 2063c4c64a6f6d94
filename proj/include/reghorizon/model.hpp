#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "reghorizon/data.hpp"
#include "reghorizon/graph.hpp"
#include "reghorizon/tensor.hpp"

namespace reghorizon {

inline constexpr const char* kCheckpointFormat = "reghorizon-ckpt-v1";

struct ModelConfig {
  int vocab_size = 35;  // includes PAD/BOS/EOS
  int d_model = 32;
  int n_heads = 2;
  int enc_layers = 2;
  int dec_layers = 2;
  int ffn_dim = 64;
  double dropout = 0.1;
  int frame_dim = 16;
  int subsample_stride = 4;
  int conv_kernel = 3;

  void validate() const {
    if (d_model < 1 || n_heads < 1 || enc_layers < 1 || dec_layers < 1 || ffn_dim < 1 ||
        vocab_size < 1 || frame_dim < 1 || subsample_stride < 1 || conv_kernel < 1)
      throw config_error("model: all extents must be >= 1");
    if (d_model % n_heads != 0) throw config_error("model: d_model must divide by n_heads");
    if (dropout < 0.0 || dropout >= 1.0) throw config_error("model: dropout must be in [0,1)");
  }
};

// The five intermediate representations of one teacher-forced pass, per item.
struct ItemTaps {
  Var enc;      // [T_enc, d_model]
  Var xattn;    // [T_dec, d_model]
  Var lds;      // [T_dec, d_model]
  Var logits;   // [T_dec, vocab]
  Var softmax;  // [T_dec, vocab]
};

struct TapBundle {
  std::vector<ItemTaps> items;
  std::vector<int> enc_len;  // valid encoder positions per item
  std::vector<int> dec_len;  // teacher-forced target length per item
};

// The shared encoder/decoder plus the two input branches. One parameter set;
// both branches bind the same tensors, so sharing is structural.
struct Model {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> params;
  std::map<std::string, int> index;

  int add_param(const std::string& name, Tensor t) {
    index[name] = static_cast<int>(params.size());
    names.push_back(name);
    params.push_back(std::move(t));
    return static_cast<int>(params.size()) - 1;
  }
  const Tensor& param(const std::string& name) const { return params[static_cast<size_t>(index.at(name))]; }
  Tensor& param(const std::string& name) { return params[static_cast<size_t>(index.at(name))]; }

  long parameter_count() const {
    long n = 0;
    for (const Tensor& p : params) n += p.size();
    return n;
  }
};

namespace detail {

inline Tensor uniform_init(std::vector<int> shape, double scale, const RngStream& rng,
                           uint64_t counter) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (size_t i = 0; i < t.values.size(); ++i)
    t.values[i] = scale * (2.0 * rng.uniform(counter, i) - 1.0);
  return t;
}

inline void add_attention_params(Model& m, const std::string& prefix, const RngStream& rng,
                                 uint64_t& counter, double scale) {
  int d = m.config.d_model;
  for (const char* w : {"wq", "wk", "wv", "wo"})
    m.add_param(prefix + "." + w, uniform_init({d, d}, scale, rng, counter++));
  for (const char* b : {"bq", "bk", "bv", "bo"})
    m.add_param(prefix + "." + b, Tensor::zeros({d}));
}

inline void add_layernorm_params(Model& m, const std::string& prefix) {
  int d = m.config.d_model;
  m.add_param(prefix + ".gain", Tensor::full({d}, 1.0));
  m.add_param(prefix + ".bias", Tensor::zeros({d}));
}

inline void add_ffn_params(Model& m, const std::string& prefix, const RngStream& rng,
                           uint64_t& counter, double scale) {
  int d = m.config.d_model, f = m.config.ffn_dim;
  m.add_param(prefix + ".w1", uniform_init({d, f}, scale, rng, counter++));
  m.add_param(prefix + ".b1", Tensor::zeros({f}));
  m.add_param(prefix + ".w2", uniform_init({f, d}, scale, rng, counter++));
  m.add_param(prefix + ".b2", Tensor::zeros({d}));
}

}  // namespace detail

inline Model build_model(const ModelConfig& config, const RngStream& rng) {
  config.validate();
  Model m;
  m.config = config;
  double scale = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  uint64_t c = 0;
  m.add_param("tok_emb", detail::uniform_init({config.vocab_size, config.d_model}, scale, rng, c++));
  m.add_param("conv.w",
              detail::uniform_init({config.conv_kernel * config.frame_dim, config.d_model},
                                   scale, rng, c++));
  m.add_param("conv.b", Tensor::zeros({config.d_model}));
  for (int l = 0; l < config.enc_layers; ++l) {
    std::string p = "enc" + std::to_string(l);
    detail::add_attention_params(m, p + ".self", rng, c, scale);
    detail::add_layernorm_params(m, p + ".ln1");
    detail::add_ffn_params(m, p + ".ffn", rng, c, scale);
    detail::add_layernorm_params(m, p + ".ln2");
  }
  for (int l = 0; l < config.dec_layers; ++l) {
    std::string p = "dec" + std::to_string(l);
    detail::add_attention_params(m, p + ".self", rng, c, scale);
    detail::add_layernorm_params(m, p + ".ln1");
    detail::add_attention_params(m, p + ".cross", rng, c, scale);
    detail::add_layernorm_params(m, p + ".ln2");
    detail::add_ffn_params(m, p + ".ffn", rng, c, scale);
    detail::add_layernorm_params(m, p + ".ln3");
  }
  m.add_param("out.w", detail::uniform_init({config.d_model, config.vocab_size}, scale, rng, c++));
  m.add_param("out.b", Tensor::zeros({config.vocab_size}));
  return m;
}

// Per-graph binding of the parameter set as leaf nodes.
struct BoundModel {
  const Model* model = nullptr;
  Graph* graph = nullptr;
  std::vector<Var> vars;

  Var operator[](const std::string& name) const {
    return vars[static_cast<size_t>(model->index.at(name))];
  }
};

inline BoundModel bind(const Model& m, Graph& g) {
  BoundModel b;
  b.model = &m;
  b.graph = &g;
  b.vars.reserve(m.params.size());
  for (const Tensor& p : m.params) b.vars.push_back(g.leaf(p));
  return b;
}

namespace detail {

inline Tensor sinusoidal_pe(int t, int d) {
  Tensor pe = Tensor::zeros({t, d});
  for (int pos = 0; pos < t; ++pos)
    for (int i = 0; i < d; ++i) {
      double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / d);
      pe.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

// Tracks the per-pass dropout substream; each application consumes one
// counter so masks are independent but reproducible.
struct DropoutCtx {
  const RngStream* rng = nullptr;
  double rate = 0.0;
  bool on = false;
  uint64_t counter = 0;

  Var apply(Var x) {
    if (!on || rate == 0.0) return x;
    return reghorizon::dropout(x, rate, *rng, counter++);
  }
};

inline Var multi_head_attention(const BoundModel& bm, const std::string& prefix, Var q_in,
                                Var kv_in, bool causal) {
  const ModelConfig& cfg = bm.model->config;
  int d = cfg.d_model, h = cfg.n_heads, dh = d / h;
  Var q = add_rowvec(matmul(q_in, bm[prefix + ".wq"]), bm[prefix + ".bq"]);
  Var k = add_rowvec(matmul(kv_in, bm[prefix + ".wk"]), bm[prefix + ".bk"]);
  Var v = add_rowvec(matmul(kv_in, bm[prefix + ".wv"]), bm[prefix + ".bv"]);
  int tq = q.val().rows(), tk = k.val().rows();
  Tensor causal_mask;
  if (causal) {
    causal_mask = Tensor::zeros({tq, tk});
    for (int i = 0; i < tq; ++i)
      for (int j = i + 1; j < tk; ++j) causal_mask.at(i, j) = -1e9;
  }
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(h));
  for (int head = 0; head < h; ++head) {
    Var qh = slice_cols(q, head * dh, (head + 1) * dh);
    Var kh = slice_cols(k, head * dh, (head + 1) * dh);
    Var vh = slice_cols(v, head * dh, (head + 1) * dh);
    Var scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (causal) scores = add_const(scores, causal_mask);
    Var probs = softmax_lastdim(scores);
    heads.push_back(matmul(probs, vh));
  }
  Var ctx = h == 1 ? heads[0] : concat_cols(heads);
  return add_rowvec(matmul(ctx, bm[prefix + ".wo"]), bm[prefix + ".bo"]);
}

inline Var encoder_stack(const BoundModel& bm, Var x, DropoutCtx& drop) {
  const ModelConfig& cfg = bm.model->config;
  for (int l = 0; l < cfg.enc_layers; ++l) {
    std::string p = "enc" + std::to_string(l);
    Var attn = multi_head_attention(bm, p + ".self", x, x, /*causal=*/false);
    x = layer_norm(add(x, drop.apply(attn)), bm[p + ".ln1.gain"], bm[p + ".ln1.bias"]);
    Var f = relu(add_rowvec(matmul(x, bm[p + ".ffn.w1"]), bm[p + ".ffn.b1"]));
    f = add_rowvec(matmul(drop.apply(f), bm[p + ".ffn.w2"]), bm[p + ".ffn.b2"]);
    x = layer_norm(add(x, drop.apply(f)), bm[p + ".ln2.gain"], bm[p + ".ln2.bias"]);
  }
  return x;
}

// Decoder over the teacher-forced prefix. Taps: cross-attention sublayer
// output of the last layer (post-residual) and the last layer's final output.
struct DecoderTaps {
  Var xattn, lds;
};

inline DecoderTaps decoder_stack(const BoundModel& bm, Var y, Var enc, DropoutCtx& drop) {
  const ModelConfig& cfg = bm.model->config;
  Var xattn_tap = y;
  for (int l = 0; l < cfg.dec_layers; ++l) {
    std::string p = "dec" + std::to_string(l);
    Var self_attn = multi_head_attention(bm, p + ".self", y, y, /*causal=*/true);
    y = layer_norm(add(y, drop.apply(self_attn)), bm[p + ".ln1.gain"], bm[p + ".ln1.bias"]);
    Var cross = multi_head_attention(bm, p + ".cross", y, enc, /*causal=*/false);
    y = layer_norm(add(y, drop.apply(cross)), bm[p + ".ln2.gain"], bm[p + ".ln2.bias"]);
    if (l == cfg.dec_layers - 1) xattn_tap = y;
    Var f = relu(add_rowvec(matmul(y, bm[p + ".ffn.w1"]), bm[p + ".ffn.b1"]));
    f = add_rowvec(matmul(drop.apply(f), bm[p + ".ffn.w2"]), bm[p + ".ffn.b2"]);
    y = layer_norm(add(y, drop.apply(f)), bm[p + ".ln3.gain"], bm[p + ".ln3.bias"]);
  }
  return {xattn_tap, y};
}

inline Var embed_tokens(const BoundModel& bm, const std::vector<int>& ids, DropoutCtx& drop) {
  const ModelConfig& cfg = bm.model->config;
  Var e = scale(embedding(bm["tok_emb"], ids), std::sqrt(static_cast<double>(cfg.d_model)));
  e = add_const(e, sinusoidal_pe(static_cast<int>(ids.size()), cfg.d_model));
  return drop.apply(e);
}

inline ItemTaps decode_item(const BoundModel& bm, Var enc, const std::vector<int>& target_in,
                            DropoutCtx& drop) {
  Var y = embed_tokens(bm, target_in, drop);
  DecoderTaps dt = decoder_stack(bm, y, enc, drop);
  Var logits = add_rowvec(matmul(dt.lds, bm["out.w"]), bm["out.b"]);
  ItemTaps taps;
  taps.enc = enc;
  taps.xattn = dt.xattn;
  taps.lds = dt.lds;
  taps.logits = logits;
  taps.softmax = softmax_lastdim(logits);
  return taps;
}

}  // namespace detail

inline int subsampled_length(const ModelConfig& cfg, int t_s) {
  int pad = (cfg.conv_kernel - 1) / 2;
  return (t_s + 2 * pad - cfg.conv_kernel) / cfg.subsample_stride + 1;
}

// Teacher-forced pass over the speech branch: subsampler -> shared encoder
// -> shared decoder. `pass_stream` selects the dropout substream, so two
// R-drop passes draw independent masks from one run seed.
inline TapBundle forward_speech(const BoundModel& bm, const Batch& batch, const RngStream& rng,
                                bool dropout_on) {
  const ModelConfig& cfg = bm.model->config;
  TapBundle bundle;
  detail::DropoutCtx drop{&rng, cfg.dropout, dropout_on, 0};
  for (int b = 0; b < batch.batch_size; ++b) {
    Tensor frames = batch.speech_item(b);
    if (frames.rows() < 1) throw std::invalid_argument("forward_speech: empty speech sequence");
    std::vector<int> target_in = batch.target_in_item(b);
    if (target_in.empty()) throw std::invalid_argument("forward_speech: empty target");
    Var x = bm.graph->constant(frames);
    Var sub = conv1d(x, bm["conv.w"], bm["conv.b"], cfg.conv_kernel, cfg.subsample_stride);
    sub = add_const(sub, detail::sinusoidal_pe(sub.val().rows(), cfg.d_model));
    sub = drop.apply(sub);
    Var enc = detail::encoder_stack(bm, sub, drop);
    bundle.items.push_back(detail::decode_item(bm, enc, target_in, drop));
    bundle.enc_len.push_back(enc.val().rows());
    bundle.dec_len.push_back(static_cast<int>(target_in.size()));
  }
  return bundle;
}

// Text branch: shared embedding -> the same shared encoder -> shared decoder.
inline TapBundle forward_text(const BoundModel& bm, const Batch& batch, const RngStream& rng,
                              bool dropout_on) {
  const ModelConfig& cfg = bm.model->config;
  TapBundle bundle;
  detail::DropoutCtx drop{&rng, cfg.dropout, dropout_on, 0};
  for (int b = 0; b < batch.batch_size; ++b) {
    std::vector<int> transcript = batch.transcript_item(b);
    std::vector<int> target_in = batch.target_in_item(b);
    if (transcript.empty() || target_in.empty())
      throw std::invalid_argument("forward_text: empty sequence");
    Var x = detail::embed_tokens(bm, transcript, drop);
    Var enc = detail::encoder_stack(bm, x, drop);
    bundle.items.push_back(detail::decode_item(bm, enc, target_in, drop));
    bundle.enc_len.push_back(enc.val().rows());
    bundle.dec_len.push_back(static_cast<int>(target_in.size()));
  }
  return bundle;
}

// Autoregressive argmax decode of one speech item, dropout off.
inline std::vector<int> greedy_decode(const Model& model, const Tensor& speech_frames,
                                      int max_len) {
  if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  const ModelConfig& cfg = model.config;
  Graph g;
  BoundModel bm = bind(model, g);
  detail::DropoutCtx drop{};
  Var x = g.constant(speech_frames);
  Var sub = conv1d(x, bm["conv.w"], bm["conv.b"], cfg.conv_kernel, cfg.subsample_stride);
  sub = add_const(sub, detail::sinusoidal_pe(sub.val().rows(), cfg.d_model));
  Var enc = detail::encoder_stack(bm, sub, drop);
  std::vector<int> prefix = {BOS_ID};
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    ItemTaps taps = detail::decode_item(bm, enc, prefix, drop);
    const Tensor& logits = taps.logits.val();
    int last = logits.rows() - 1;
    int best = 0;
    for (int v = 1; v < logits.cols(); ++v)
      if (logits.at(last, v) > logits.at(last, best)) best = v;
    if (best == EOS_ID) break;
    out.push_back(best);
    prefix.push_back(best);
  }
  return out;
}

// --- checkpoint io -----------------------------------------------------------

inline void save_checkpoint(const Model& m, const std::string& path,
                            const std::string& config_hash = "") {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["config_hash"] = config_hash;
  nlohmann::json params = nlohmann::json::object();
  for (size_t i = 0; i < m.params.size(); ++i) {
    params[m.names[i]] = {{"shape", m.params[i].shape}, {"values", m.params[i].values}};
  }
  j["params"] = std::move(params);
  std::ofstream os(path);
  if (!os) throw data_error("cannot write checkpoint: " + path);
  os << j.dump();
}

inline void load_checkpoint(Model& m, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot read checkpoint: " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  if (j.at("format").get<std::string>() != kCheckpointFormat)
    throw data_error("unsupported checkpoint format");
  for (size_t i = 0; i < m.params.size(); ++i) {
    const auto& p = j.at("params").at(m.names[i]);
    Tensor t(p.at("shape").get<std::vector<int>>(), p.at("values").get<std::vector<double>>());
    if (!same_shape(t, m.params[i])) throw data_error("checkpoint shape mismatch: " + m.names[i]);
    m.params[i] = std::move(t);
  }
}

}  // namespace reghorizon
