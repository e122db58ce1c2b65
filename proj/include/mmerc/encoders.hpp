#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mmerc/common.hpp"
#include "mmerc/params.hpp"
#include "mmerc/tensor.hpp"

namespace mmerc {

// Widths for the per-modality encoders. d_a/d_v/d_l mirror the corpus meta;
// everything is projected to the shared hidden width d_h.
struct EncoderConfig {
  std::size_t d_a = 100;
  std::size_t d_v = 512;
  std::size_t d_l = 768;
  std::size_t d_h = 200;
  std::size_t text_heads = 4;
  std::size_t text_ffn = 0;  // 0 picks 2*d_l
  std::size_t num_speakers = 2;
  double eta = 1.0;

  std::size_t ffn_width() const { return text_ffn ? text_ffn : 2 * d_l; }

  void validate() const {
    require(d_a > 0 && d_v > 0 && d_l > 0 && d_h > 0,
            "encoder config: widths must be positive");
    require(text_heads >= 1 && d_l % text_heads == 0,
            detail::msg("encoder config: text width ", d_l,
                        " must divide evenly into ", text_heads, " heads"));
    require(eta >= 0.0 && eta <= 1.0,
            detail::msg("encoder config: eta ", eta, " outside [0, 1]"));
    require(num_speakers >= 1, "encoder config: need at least one speaker");
  }
};

inline void register_text_encoder_params(ParamStore& store,
                                         const EncoderConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.d_l;
  store.ones("enc.text.ln1.gamma", {d});
  store.zeros("enc.text.ln1.beta", {d});
  store.weight("enc.text.attn.Wq", d, d, rng);
  store.weight("enc.text.attn.Wk", d, d, rng);
  store.weight("enc.text.attn.Wv", d, d, rng);
  store.weight("enc.text.attn.Wo", d, d, rng);
  store.zeros("enc.text.attn.bo", {d});
  store.ones("enc.text.ln2.gamma", {d});
  store.zeros("enc.text.ln2.beta", {d});
  store.weight("enc.text.ffn.W1", d, cfg.ffn_width(), rng);
  store.zeros("enc.text.ffn.b1", {cfg.ffn_width()});
  store.weight("enc.text.ffn.W2", cfg.ffn_width(), d, rng);
  store.zeros("enc.text.ffn.b2", {d});
  store.weight("enc.text.proj.W", d, cfg.d_h, rng);
  store.zeros("enc.text.proj.b", {cfg.d_h});
}

inline void register_av_encoder_params(ParamStore& store,
                                       const std::string& prefix,
                                       std::size_t d_in, std::size_t d_h,
                                       Rng& rng) {
  store.weight(prefix + ".W", d_in, d_h, rng);
  store.zeros(prefix + ".b", {d_h});
}

inline void register_speaker_params(ParamStore& store,
                                    const EncoderConfig& cfg, Rng& rng) {
  store.normal("enc.speaker.table", {cfg.num_speakers, cfg.d_h}, rng, 0.02);
}

// Conversation-level self-attention over the N pooled utterance text rows
// (pre-norm transformer block, no positional encoding: utterance order is
// modeled by the graph, not here), then projection to d_h.
inline Tensor encode_text(ParamStore& store, const EncoderConfig& cfg,
                          const Tensor& x) {
  require(x.rank() == 2 && x.cols() == cfg.d_l,
          detail::msg("encode_text: input ", shape_str(x.shape()),
                      " does not match text width ", cfg.d_l));
  const std::size_t heads = cfg.text_heads;
  const std::size_t d_head = cfg.d_l / heads;

  Tensor h = layer_norm(x, store.at("enc.text.ln1.gamma"),
                        store.at("enc.text.ln1.beta"));
  Tensor q = matmul(h, store.at("enc.text.attn.Wq"));
  Tensor k = matmul(h, store.at("enc.text.attn.Wk"));
  Tensor v = matmul(h, store.at("enc.text.attn.Wv"));
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (std::size_t c = 0; c < heads; ++c) {
    Tensor qc = slice(q, 1, c * d_head, d_head);
    Tensor kc = slice(k, 1, c * d_head, d_head);
    Tensor vc = slice(v, 1, c * d_head, d_head);
    Tensor scores = scale(matmul(qc, kc, false, true),
                          1.0 / std::sqrt(static_cast<double>(d_head)));
    head_outs.push_back(matmul(softmax(scores, 1), vc));
  }
  Tensor attn = add(matmul(concat(head_outs, 1), store.at("enc.text.attn.Wo")),
                    store.at("enc.text.attn.bo"));
  Tensor z = add(x, attn);

  Tensor f = layer_norm(z, store.at("enc.text.ln2.gamma"),
                        store.at("enc.text.ln2.beta"));
  Tensor ffn = add(
      matmul(relu(add(matmul(f, store.at("enc.text.ffn.W1")),
                      store.at("enc.text.ffn.b1"))),
             store.at("enc.text.ffn.W2")),
      store.at("enc.text.ffn.b2"));
  Tensor y = add(z, ffn);
  return add(matmul(y, store.at("enc.text.proj.W")),
             store.at("enc.text.proj.b"));
}

// Row-wise affine map to d_h for the audio and visual channels.
inline Tensor encode_av(ParamStore& store, const std::string& prefix,
                        const Tensor& x) {
  const Tensor& w = store.at(prefix + ".W");
  require(x.rank() == 2 && x.cols() == w.rows(),
          detail::msg("encode_av: input ", shape_str(x.shape()),
                      " does not match ", prefix, " width ", w.rows()));
  return add(matmul(x, w), store.at(prefix + ".b"));
}

// Adds eta-scaled learned speaker vectors row-wise; a speaker's additive
// term is identical wherever they talk.
inline Tensor add_speaker(ParamStore& store, const EncoderConfig& cfg,
                          const Tensor& x, const std::vector<int>& speakers) {
  require(x.rank() == 2 && x.rows() == speakers.size(),
          detail::msg("add_speaker: ", speakers.size(), " speaker ids for ",
                      x.rows(), " rows"));
  if (cfg.eta == 0.0) return x;
  Tensor emb = embedding_lookup(store.at("enc.speaker.table"), speakers);
  return add(x, scale(emb, cfg.eta));
}

}  // namespace mmerc
