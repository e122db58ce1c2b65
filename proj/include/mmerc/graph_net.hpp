#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mmerc/common.hpp"
#include "mmerc/graph.hpp"
#include "mmerc/params.hpp"
#include "mmerc/probe.hpp"
#include "mmerc/tensor.hpp"

namespace mmerc {

struct RtgcnConfig {
  std::size_t d_h = 200;
  std::size_t d_h1 = 200;
  std::size_t d_h2 = 200;
  std::size_t d_alpha = 64;
  std::size_t heads = 7;

  std::size_t output_width() const { return heads * d_h2; }

  void validate() const {
    require(d_h > 0 && d_h1 > 0 && d_h2 > 0 && d_alpha > 0,
            "rtgcn config: widths must be positive");
    require(heads >= 1, "rtgcn config: need at least one attention head");
  }
};

// Immutable per-graph tensors shared by every forward pass over the same
// conversation length: one row-normalized in-adjacency per relation
// (undefined where the relation has no edges) and the 0/1 union-neighbor
// mask for transformer attention.
struct GraphTensors {
  MultimodalGraph graph;
  std::vector<Tensor> adjacency;  // indexed by Relation, row-normalized
  Tensor neighbor_mask;           // [V x V], 1 where some edge j->i exists
};

inline GraphTensors graph_tensors(MultimodalGraph graph) {
  GraphTensors gt;
  const std::size_t v = graph.node_count();
  std::vector<std::vector<double>> adj(kNumRelations);
  std::vector<std::vector<std::size_t>> indeg(
      kNumRelations, std::vector<std::size_t>(v, 0));
  std::vector<double> mask(v * v, 0.0);
  for (const auto& e : graph.edges)
    indeg[static_cast<int>(e.rel)][graph.row_of(e.dst)] += 1;
  for (const auto& e : graph.edges) {
    const int r = static_cast<int>(e.rel);
    const std::size_t di = graph.row_of(e.dst);
    const std::size_t si = graph.row_of(e.src);
    if (adj[r].empty()) adj[r].assign(v * v, 0.0);
    adj[r][di * v + si] = 1.0 / static_cast<double>(indeg[r][di]);
    mask[di * v + si] = 1.0;
  }
  gt.graph = std::move(graph);
  gt.adjacency.resize(kNumRelations);
  for (int r = 0; r < kNumRelations; ++r)
    if (!adj[r].empty())
      gt.adjacency[r] = Tensor::from({v, v}, std::move(adj[r]));
  gt.neighbor_mask = Tensor::from({v, v}, std::move(mask));
  return gt;
}

// Registers relation weights only for relations the graph options can
// produce, so ablated and unimodal models carry no dead parameters.
inline void register_rtgcn_params(ParamStore& store, const RtgcnConfig& cfg,
                                  Rng& rng,
                                  const GraphOptions& opts = GraphOptions{}) {
  store.weight("gnn.rgcn.W0", cfg.d_h1, cfg.d_h, rng);
  for (int r = 0; r < kNumRelations; ++r)
    if (relation_possible(static_cast<Relation>(r), opts))
      store.weight("gnn.rgcn.W." + relation_key(static_cast<Relation>(r)),
                   cfg.d_h1, cfg.d_h, rng);
  for (std::size_t c = 0; c < cfg.heads; ++c) {
    const std::string p = detail::msg("gnn.gt.head", c, ".");
    store.weight(p + "W1", cfg.d_h2, cfg.d_h1, rng);
    store.weight(p + "W2", cfg.d_h2, cfg.d_h1, rng);
    store.weight(p + "W3", cfg.d_alpha, cfg.d_h1, rng);
    store.weight(p + "W4", cfg.d_alpha, cfg.d_h1, rng);
  }
}

// Relational convolution: g_i = W0 x_i + sum_r mean_{j in N_r(i)} W_r x_j.
// Neighbor means are baked into the per-relation adjacency, so the whole
// layer is X W0^T + sum_r A_r X W_r^T.
inline Tensor rgcn_layer(ParamStore& store, const RtgcnConfig& cfg,
                         const GraphTensors& gt, const Tensor& x) {
  require(x.rank() == 2 && x.rows() == gt.graph.node_count(),
          detail::msg("rgcn_layer: input ", shape_str(x.shape()),
                      " does not cover ", gt.graph.node_count(), " nodes"));
  require(x.cols() == cfg.d_h,
          detail::msg("rgcn_layer: feature width ", x.cols(), " != ",
                      cfg.d_h));
  Tensor out = matmul(x, store.at("gnn.rgcn.W0"), false, true);
  for (int r = 0; r < kNumRelations; ++r) {
    if (!gt.adjacency[r].defined()) continue;
    Tensor gathered = matmul(gt.adjacency[r], x);
    Tensor wr = store.at("gnn.rgcn.W." + relation_key(static_cast<Relation>(r)));
    out = add(out, matmul(gathered, wr, false, true));
  }
  return out;
}

// Graph transformer: per head, o_i = W1 g_i + sum_{j in N(i)} a_ij W2 g_j
// with attention logits (W3 g_i)^T (W4 g_j) / sqrt(d_alpha) softmaxed over
// the union in-neighborhood; heads are concatenated feature-wise. Nodes
// without neighbors keep just the W1 term.
inline Tensor graph_transformer_layer(ParamStore& store,
                                      const RtgcnConfig& cfg,
                                      const GraphTensors& gt, const Tensor& g,
                                      AttnProbe* probe = nullptr) {
  require(g.rank() == 2 && g.rows() == gt.graph.node_count(),
          detail::msg("graph_transformer_layer: input ",
                      shape_str(g.shape()), " does not cover ",
                      gt.graph.node_count(), " nodes"));
  require(g.cols() == cfg.d_h1,
          detail::msg("graph_transformer_layer: feature width ", g.cols(),
                      " != ", cfg.d_h1));
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_alpha));
  std::vector<Tensor> heads;
  heads.reserve(cfg.heads);
  for (std::size_t c = 0; c < cfg.heads; ++c) {
    const std::string p = detail::msg("gnn.gt.head", c, ".");
    Tensor self = matmul(g, store.at(p + "W1"), false, true);
    Tensor queries = matmul(g, store.at(p + "W3"), false, true);
    Tensor keys = matmul(g, store.at(p + "W4"), false, true);
    Tensor scores = scale(matmul(queries, keys, false, true), inv_scale);
    Tensor alpha = masked_softmax_rows(scores, gt.neighbor_mask);
    if (probe)
      probe->entries.push_back({detail::msg("gnn.gt.head", c), alpha,
                                gt.neighbor_mask});
    Tensor messages = matmul(alpha, matmul(g, store.at(p + "W2"), false, true));
    heads.push_back(add(self, messages));
  }
  return heads.size() == 1 ? heads[0] : concat(heads, 1);
}

// Full local-context stage over stacked modality blocks: blocks are given in
// the graph's row order, each [N x d_h]; outputs come back de-interleaved in
// the same order, each [N x heads*d_h2].
inline std::vector<Tensor> rt_gcn_forward(ParamStore& store,
                                          const RtgcnConfig& cfg,
                                          const GraphTensors& gt,
                                          const std::vector<Tensor>& blocks,
                                          AttnProbe* probe = nullptr) {
  const std::size_t n = gt.graph.n_utterances;
  require(blocks.size() == gt.graph.options.enabled_count(),
          detail::msg("rt_gcn_forward: ", blocks.size(), " blocks for ",
                      gt.graph.options.enabled_count(),
                      " enabled modalities"));
  for (const auto& b : blocks)
    require(b.rank() == 2 && b.rows() == n,
            detail::msg("rt_gcn_forward: block ", shape_str(b.shape()),
                        " does not have ", n, " rows"));
  Tensor x = blocks.size() == 1 ? blocks[0] : concat(blocks, 0);
  Tensor o = graph_transformer_layer(store, cfg, gt,
                                     rgcn_layer(store, cfg, gt, x), probe);
  std::vector<Tensor> out;
  out.reserve(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b)
    out.push_back(slice(o, 0, b * n, n));
  return out;
}

}  // namespace mmerc
