#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mmerc/common.hpp"
#include "mmerc/graph.hpp"
#include "mmerc/params.hpp"
#include "mmerc/probe.hpp"
#include "mmerc/tensor.hpp"

namespace mmerc {

struct PcmConfig {
  std::size_t d_h = 200;
  std::size_t d_k = 200;
  std::size_t d_v = 200;
  std::size_t d_ff = 0;  // 0 picks 4*d_v
  std::size_t heads = 2;
  std::size_t depth = 2;
  double dropout = 0.5;

  std::size_t ffn_width() const { return d_ff ? d_ff : 4 * d_v; }

  void validate() const {
    require(d_h > 0 && d_k > 0 && d_v > 0, "pcm config: widths must be positive");
    require(d_v == d_h,
            detail::msg("pcm config: d_v (", d_v, ") must equal d_h (", d_h,
                        ") so attention outputs can join the residual path"));
    require(heads >= 1 && d_k % heads == 0 && d_v % heads == 0,
            detail::msg("pcm config: d_k ", d_k, " and d_v ", d_v,
                        " must divide evenly into ", heads, " heads"));
    require(dropout >= 0.0 && dropout < 1.0,
            detail::msg("pcm config: dropout ", dropout, " outside [0, 1)"));
  }
};

// The six directed stacks in their canonical order; a direction src->dst
// refines the dst-modality sequence by attending into the src modality.
inline std::vector<std::pair<Modality, Modality>> pcm_directions(
    const std::array<bool, 3>& enabled = {true, true, true}) {
  using M = Modality;
  static constexpr std::pair<M, M> kAll[6] = {
      {M::text, M::audio},  {M::audio, M::text},  {M::text, M::visual},
      {M::visual, M::text}, {M::audio, M::visual}, {M::visual, M::audio},
  };
  std::vector<std::pair<M, M>> out;
  for (const auto& [s, d] : kAll)
    if (enabled[static_cast<std::size_t>(s)] &&
        enabled[static_cast<std::size_t>(d)])
      out.push_back({s, d});
  return out;
}

inline std::string pcm_prefix(Modality src, Modality dst) {
  return detail::msg("pcm.", modality_letter(src), "_to_",
                     modality_letter(dst));
}

inline void register_pcm_params(ParamStore& store, const PcmConfig& cfg,
                                const std::array<bool, 3>& enabled,
                                Rng& rng) {
  for (const auto& [src, dst] : pcm_directions(enabled)) {
    for (std::size_t i = 0; i < cfg.depth; ++i) {
      const std::string p =
          detail::msg(pcm_prefix(src, dst), ".layer", i, ".");
      store.weight(p + "Wq", cfg.d_h, cfg.d_k, rng);
      store.weight(p + "Wk", cfg.d_h, cfg.d_k, rng);
      store.weight(p + "Wv", cfg.d_h, cfg.d_v, rng);
      store.ones(p + "ln1.gamma", {cfg.d_h});
      store.zeros(p + "ln1.beta", {cfg.d_h});
      store.ones(p + "ln2.gamma", {cfg.d_v});
      store.zeros(p + "ln2.beta", {cfg.d_v});
      store.weight(p + "ffn.W1", cfg.d_v, cfg.ffn_width(), rng);
      store.zeros(p + "ffn.b1", {cfg.ffn_width()});
      store.weight(p + "ffn.W2", cfg.ffn_width(), cfg.d_v, rng);
      store.zeros(p + "ffn.b2", {cfg.d_v});
    }
  }
}

// softmax(X_q Wq Wk^T X_kv^T / sqrt(d_head)) X_kv Wv, split column-wise into
// `heads` independent heads whose outputs are concatenated back to d_v.
inline Tensor cross_modal_attention(const Tensor& wq, const Tensor& wk,
                                    const Tensor& wv, std::size_t heads,
                                    const Tensor& x_q, const Tensor& x_kv,
                                    AttnProbe* probe = nullptr,
                                    const std::string& where = "pcm") {
  require(x_q.rank() == 2 && x_kv.rank() == 2 &&
              x_q.cols() == wq.rows() && x_kv.cols() == wk.rows(),
          detail::msg("cross_modal_attention: query ",
                      shape_str(x_q.shape()), " / key-value ",
                      shape_str(x_kv.shape()), " do not match projections"));
  const std::size_t dk_head = wq.cols() / heads;
  const std::size_t dv_head = wv.cols() / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk_head));
  Tensor q = matmul(x_q, wq);
  Tensor k = matmul(x_kv, wk);
  Tensor v = matmul(x_kv, wv);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice(q, 1, h * dk_head, dk_head);
    Tensor kh = slice(k, 1, h * dk_head, dk_head);
    Tensor vh = slice(v, 1, h * dv_head, dv_head);
    Tensor alpha = softmax(scale(matmul(qh, kh, false, true), inv_scale), 1);
    if (probe)
      probe->entries.push_back({detail::msg(where, ".head", h), alpha, {}});
    outs.push_back(matmul(alpha, vh));
  }
  return outs.size() == 1 ? outs[0] : concat(outs, 1);
}

// One pre-norm cross-modal layer. Queries evolve with the stack; keys and
// values always come from the other modality's layer-0 sequence `kv0`:
//   Zbar = CM(LN1(Z_prev), LN1(kv0)) + LN1(Z_prev)
//   Z    = FFN(LN2(Zbar)) + LN2(Zbar)
// Dropout touches the attention and FFN outputs only, train time only.
inline Tensor cross_modal_block(ParamStore& store,
                                const std::string& layer_prefix,
                                const PcmConfig& cfg, const Tensor& z_prev,
                                const Tensor& kv0, bool training, Rng& rng,
                                AttnProbe* probe = nullptr) {
  require(z_prev.rank() == 2 && kv0.rank() == 2 &&
              z_prev.rows() == kv0.rows(),
          detail::msg("cross_modal_block: ", shape_str(z_prev.shape()),
                      " vs ", shape_str(kv0.shape()),
                      " utterance counts differ"));
  const Tensor& g1 = store.at(layer_prefix + "ln1.gamma");
  const Tensor& b1 = store.at(layer_prefix + "ln1.beta");
  Tensor q_in = layer_norm(z_prev, g1, b1);
  Tensor kv_in = layer_norm(kv0, g1, b1);
  Tensor cm = cross_modal_attention(
      store.at(layer_prefix + "Wq"), store.at(layer_prefix + "Wk"),
      store.at(layer_prefix + "Wv"), cfg.heads, q_in, kv_in, probe,
      layer_prefix);
  Tensor zbar = add(dropout(cm, cfg.dropout, training, rng), q_in);

  Tensor f = layer_norm(zbar, store.at(layer_prefix + "ln2.gamma"),
                        store.at(layer_prefix + "ln2.beta"));
  Tensor ffn = add(
      matmul(relu(add(matmul(f, store.at(layer_prefix + "ffn.W1")),
                      store.at(layer_prefix + "ffn.b1"))),
             store.at(layer_prefix + "ffn.W2")),
      store.at(layer_prefix + "ffn.b2"));
  return add(dropout(ffn, cfg.dropout, training, rng), f);
}

// D-layer directional stack src->dst: state starts at the dst-modality
// sequence and repeatedly cross-attends into the src-modality sequence.
// depth 0 returns the dst sequence untouched.
inline Tensor cross_modal_stack(ParamStore& store, const PcmConfig& cfg,
                                Modality src, Modality dst,
                                const Tensor& x_dst, const Tensor& x_src,
                                bool training, Rng& rng,
                                AttnProbe* probe = nullptr) {
  Tensor z = x_dst;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string p = detail::msg(pcm_prefix(src, dst), ".layer", i, ".");
    z = cross_modal_block(store, p, cfg, z, x_src, training, rng, probe);
  }
  return z;
}

struct PcmOutput {
  std::vector<std::string> pair_names;  // e.g. "a<->v"
  std::vector<Tensor> pairs;            // each [N x 2*d_v]
};

// Runs both directional stacks for every enabled modality pair and
// concatenates the two final outputs feature-wise, the stack targeting the
// first-named modality first. Pair order matches the fusion order
// a<->v, v<->l, l<->a.
inline PcmOutput pcm_forward(ParamStore& store, const PcmConfig& cfg,
                             const std::array<Tensor, 3>& inputs,
                             const std::array<bool, 3>& enabled,
                             bool training, Rng& rng,
                             AttnProbe* probe = nullptr) {
  using M = Modality;
  static constexpr std::pair<M, M> kPairs[3] = {
      {M::audio, M::visual}, {M::visual, M::text}, {M::text, M::audio}};
  PcmOutput out;
  for (const auto& [x, y] : kPairs) {
    if (!enabled[static_cast<std::size_t>(x)] ||
        !enabled[static_cast<std::size_t>(y)])
      continue;
    const Tensor& xt = inputs[static_cast<std::size_t>(x)];
    const Tensor& yt = inputs[static_cast<std::size_t>(y)];
    Tensor to_x =
        cross_modal_stack(store, cfg, y, x, xt, yt, training, rng, probe);
    Tensor to_y =
        cross_modal_stack(store, cfg, x, y, yt, xt, training, rng, probe);
    out.pair_names.push_back(detail::msg(modality_letter(x), "<->",
                                         modality_letter(y)));
    out.pairs.push_back(concat({to_x, to_y}, 1));
  }
  return out;
}

}  // namespace mmerc
