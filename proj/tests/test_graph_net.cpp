#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "mmerc/graph_net.hpp"
#include "testutil.hpp"

using mmerc::GraphTensors;
using mmerc::Modality;
using mmerc::ParamStore;
using mmerc::Relation;
using mmerc::RtgcnConfig;
using mmerc::Tensor;

namespace {

RtgcnConfig tiny_config() {
  RtgcnConfig cfg;
  cfg.d_h = 4;
  cfg.d_h1 = 5;
  cfg.d_h2 = 3;
  cfg.d_alpha = 2;
  cfg.heads = 2;
  return cfg;
}

Tensor random_input(mmerc::Shape shape, mmerc::Rng& rng) {
  std::vector<double> d(mmerc::numel(shape));
  for (auto& x : d) x = mmerc::uniform_in(rng, -1, 1);
  return Tensor::from(std::move(shape), std::move(d));
}

void set_values(Tensor& t, const std::vector<double>& v) {
  auto data = t.mutable_data();
  std::copy(v.begin(), v.end(), data.begin());
}

// Edge-by-edge reference: walk the raw edge list, average neighbor features
// per relation, multiply by the relation matrix with explicit loops.
std::vector<double> rgcn_oracle(ParamStore& store, const RtgcnConfig& cfg,
                                const GraphTensors& gt,
                                const Tensor& x) {
  const std::size_t v = gt.graph.node_count();
  std::vector<double> out(v * cfg.d_h1, 0.0);
  auto apply = [&](const Tensor& w, const double* in, double* acc,
                   double factor) {
    for (std::size_t r = 0; r < cfg.d_h1; ++r)
      for (std::size_t c = 0; c < cfg.d_h; ++c)
        acc[r] += factor * w.at(r, c) * in[c];
  };
  const Tensor& w0 = store.at("gnn.rgcn.W0");
  for (std::size_t i = 0; i < v; ++i)
    apply(w0, x.data().data() + i * cfg.d_h, out.data() + i * cfg.d_h1, 1.0);
  std::vector<std::vector<std::size_t>> indeg(
      mmerc::kNumRelations, std::vector<std::size_t>(v, 0));
  for (const auto& e : gt.graph.edges)
    indeg[static_cast<int>(e.rel)][gt.graph.row_of(e.dst)] += 1;
  for (const auto& e : gt.graph.edges) {
    const std::size_t di = gt.graph.row_of(e.dst);
    const std::size_t si = gt.graph.row_of(e.src);
    const Tensor& wr = store.at("gnn.rgcn.W." + mmerc::relation_key(e.rel));
    apply(wr, x.data().data() + si * cfg.d_h, out.data() + di * cfg.d_h1,
          1.0 / static_cast<double>(indeg[static_cast<int>(e.rel)][di]));
  }
  return out;
}

}  // namespace

TEST_CASE("relational convolution matches the edge-walking oracle") {
  mmerc::Rng rng(3);
  auto cfg = tiny_config();
  ParamStore store;
  mmerc::register_rtgcn_params(store, cfg, rng);
  auto gt = mmerc::graph_tensors(mmerc::build_graph(3, 1, 1));
  Tensor x = random_input({9, cfg.d_h}, rng);
  Tensor got = mmerc::rgcn_layer(store, cfg, gt, x);
  auto want = rgcn_oracle(store, cfg, gt, x);
  CHECK(testutil::max_abs_diff(got.data(), want) < 1e-10);
}

TEST_CASE("a single neighbor with identity weights passes features through") {
  mmerc::Rng rng(5);
  RtgcnConfig cfg = tiny_config();
  cfg.d_h = 4;
  cfg.d_h1 = 4;
  ParamStore store;
  mmerc::register_rtgcn_params(store, cfg, rng);
  for (auto& [path, t] : store) {
    if (path.rfind("gnn.rgcn.", 0) == 0)
      set_values(t, std::vector<double>(t.size(), 0.0));
  }
  Tensor& w = store.at("gnn.rgcn.W.past_a");
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  set_values(w, eye);

  // Hand-built graph: one past_a edge from utterance 0 into utterance 1.
  mmerc::MultimodalGraph g;
  g.n_utterances = 2;
  g.past = 1;
  g.future = 0;
  g.edges = {{{0, Modality::audio}, {1, Modality::audio}, Relation::past_a}};
  auto gt = mmerc::graph_tensors(std::move(g));

  Tensor x = random_input({6, cfg.d_h}, rng);
  Tensor out = mmerc::rgcn_layer(store, cfg, gt, x);
  for (std::size_t j = 0; j < cfg.d_h; ++j) {
    CHECK(out.at(1, j) == Catch::Approx(x.at(0, j)).margin(1e-12));
    CHECK(out.at(0, j) == Catch::Approx(0.0).margin(1e-12));  // W0 zeroed
  }
}

TEST_CASE("transformer layer reduces to the self path without neighbors") {
  mmerc::Rng rng(7);
  auto cfg = tiny_config();
  ParamStore store;
  mmerc::register_rtgcn_params(store, cfg, rng);

  mmerc::MultimodalGraph g;  // no edges at all
  g.n_utterances = 2;
  auto gt = mmerc::graph_tensors(std::move(g));
  Tensor feats = random_input({6, cfg.d_h1}, rng);
  Tensor out = mmerc::graph_transformer_layer(store, cfg, gt, feats);
  REQUIRE(out.shape() == mmerc::Shape{6, cfg.heads * cfg.d_h2});

  Tensor want = mmerc::concat(
      {mmerc::matmul(feats, store.at("gnn.gt.head0.W1"), false, true),
       mmerc::matmul(feats, store.at("gnn.gt.head1.W1"), false, true)},
      1);
  CHECK(testutil::max_abs_diff(out.data(), want.data()) < 1e-12);
}

TEST_CASE("zeroing the message projection removes neighbor influence") {
  mmerc::Rng rng(9);
  auto cfg = tiny_config();
  ParamStore store;
  mmerc::register_rtgcn_params(store, cfg, rng);
  for (std::size_t c = 0; c < cfg.heads; ++c) {
    Tensor& w2 = store.at(mmerc::detail::msg("gnn.gt.head", c, ".W2"));
    set_values(w2, std::vector<double>(w2.size(), 0.0));
  }
  auto gt = mmerc::graph_tensors(mmerc::build_graph(2, 1, 1));
  Tensor feats = random_input({6, cfg.d_h1}, rng);
  Tensor out = mmerc::graph_transformer_layer(store, cfg, gt, feats);
  Tensor want = mmerc::concat(
      {mmerc::matmul(feats, store.at("gnn.gt.head0.W1"), false, true),
       mmerc::matmul(feats, store.at("gnn.gt.head1.W1"), false, true)},
      1);
  CHECK(testutil::max_abs_diff(out.data(), want.data()) < 1e-12);
}

TEST_CASE("two-node attention matches an explicit computation") {
  mmerc::Rng rng(11);
  RtgcnConfig cfg = tiny_config();
  cfg.heads = 1;
  ParamStore store;
  mmerc::register_rtgcn_params(store, cfg, rng);

  // Mutual past/future audio edges between two utterances.
  mmerc::MultimodalGraph g;
  g.n_utterances = 2;
  g.edges = {{{0, Modality::audio}, {1, Modality::audio}, Relation::past_a},
             {{1, Modality::audio}, {0, Modality::audio}, Relation::future_a}};
  auto gt = mmerc::graph_tensors(std::move(g));

  Tensor feats = random_input({6, cfg.d_h1}, rng);
  mmerc::AttnProbe probe;
  Tensor out = mmerc::graph_transformer_layer(store, cfg, gt, feats, &probe);

  const Tensor& w1 = store.at("gnn.gt.head0.W1");
  const Tensor& w2 = store.at("gnn.gt.head0.W2");
  // Each audio node has exactly one neighbor, so its attention weight is 1
  // and o_i = W1 g_i + W2 g_j.
  Tensor self = mmerc::matmul(feats, w1, false, true);
  Tensor msg = mmerc::matmul(feats, w2, false, true);
  for (std::size_t j = 0; j < cfg.d_h2; ++j) {
    CHECK(out.at(0, j) ==
          Catch::Approx(self.at(0, j) + msg.at(1, j)).margin(1e-10));
    CHECK(out.at(1, j) ==
          Catch::Approx(self.at(1, j) + msg.at(0, j)).margin(1e-10));
    // Non-audio nodes have no edges.
    CHECK(out.at(2, j) == Catch::Approx(self.at(2, j)).margin(1e-10));
  }

  REQUIRE(probe.entries.size() == 1);
  CHECK(probe.entries[0].weights.at(0, 1) == 1.0);
  CHECK(probe.entries[0].weights.at(1, 0) == 1.0);
}

TEST_CASE("attention rows over nonempty neighborhoods sum to one") {
  mmerc::Rng rng(13);
  auto cfg = tiny_config();
  ParamStore store;
  mmerc::register_rtgcn_params(store, cfg, rng);
  auto gt = mmerc::graph_tensors(mmerc::build_graph(4, 2, 1));
  Tensor feats = random_input({12, cfg.d_h1}, rng);
  mmerc::AttnProbe probe;
  mmerc::graph_transformer_layer(store, cfg, gt, feats, &probe);
  REQUIRE(probe.entries.size() == cfg.heads);
  for (const auto& entry : probe.entries) {
    const auto& a = entry.weights;
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double s = 0.0;
      bool any = false;
      for (std::size_t j = 0; j < a.cols(); ++j) {
        s += a.at(i, j);
        if (entry.mask.at(i, j) != 0.0) any = true;
      }
      CHECK(any);  // every node here has at least its multimodal neighbors
      CHECK(s == Catch::Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("full stage equals the two layers composed by hand") {
  mmerc::Rng rng(17);
  auto cfg = tiny_config();
  ParamStore store;
  mmerc::register_rtgcn_params(store, cfg, rng);
  auto gt = mmerc::graph_tensors(mmerc::build_graph(3, 1, 1));
  Tensor xa = random_input({3, cfg.d_h}, rng);
  Tensor xv = random_input({3, cfg.d_h}, rng);
  Tensor xl = random_input({3, cfg.d_h}, rng);

  auto outs = mmerc::rt_gcn_forward(store, cfg, gt, {xa, xv, xl});
  REQUIRE(outs.size() == 3);

  Tensor stacked = mmerc::concat({xa, xv, xl}, 0);
  Tensor composed = mmerc::graph_transformer_layer(
      store, cfg, gt, mmerc::rgcn_layer(store, cfg, gt, stacked));
  for (std::size_t b = 0; b < 3; ++b) {
    Tensor block = mmerc::slice(composed, 0, b * 3, 3);
    CHECK(testutil::max_abs_diff(outs[b].data(), block.data()) == 0.0);
  }
}

TEST_CASE("rgcn locality: only in-neighbors influence a node") {
  mmerc::Rng rng(19);
  auto cfg = tiny_config();
  ParamStore store;
  mmerc::register_rtgcn_params(store, cfg, rng);
  auto gt = mmerc::graph_tensors(mmerc::build_graph(3, 1, 0));
  const std::size_t v = 9;
  Tensor x = random_input({v, cfg.d_h}, rng);
  Tensor base = mmerc::rgcn_layer(store, cfg, gt, x);

  std::vector<std::vector<bool>> has_edge(v, std::vector<bool>(v, false));
  for (const auto& e : gt.graph.edges)
    has_edge[gt.graph.row_of(e.dst)][gt.graph.row_of(e.src)] = true;

  for (std::size_t j = 0; j < v; ++j) {
    std::vector<double> bumped(x.data().begin(), x.data().end());
    for (std::size_t c = 0; c < cfg.d_h; ++c) bumped[j * cfg.d_h + c] += 0.5;
    Tensor out =
        mmerc::rgcn_layer(store, cfg, gt, Tensor::from({v, cfg.d_h}, bumped));
    for (std::size_t i = 0; i < v; ++i) {
      double delta = 0.0;
      for (std::size_t c = 0; c < cfg.d_h1; ++c)
        delta = std::max(delta, std::abs(out.at(i, c) - base.at(i, c)));
      if (i == j || has_edge[i][j])
        CHECK(delta > 1e-12);
      else
        CHECK(delta == 0.0);
    }
  }
}

TEST_CASE("without cross-modality edges the audio block ignores other inputs") {
  mmerc::Rng rng(23);
  auto cfg = tiny_config();
  ParamStore store;
  mmerc::register_rtgcn_params(store, cfg, rng);
  mmerc::GraphOptions opts;
  opts.multimodal = false;
  auto gt = mmerc::graph_tensors(mmerc::build_graph(3, 1, 1, opts));

  Tensor xa = random_input({3, cfg.d_h}, rng);
  Tensor xv = random_input({3, cfg.d_h}, rng);
  Tensor xl = random_input({3, cfg.d_h}, rng);
  xv.set_requires_grad(true);
  xl.set_requires_grad(true);

  auto outs = mmerc::rt_gcn_forward(store, cfg, gt, {xa, xv, xl});
  mmerc::backward(mmerc::sum(mmerc::mul(outs[0], outs[0])));
  for (double gv : xv.grad()) CHECK(gv == 0.0);
  for (double gl : xl.grad()) CHECK(gl == 0.0);

  // Changing the visual block leaves the audio block bit-identical.
  Tensor xv2 = random_input({3, cfg.d_h}, rng);
  auto outs2 = mmerc::rt_gcn_forward(store, cfg, gt, {xa, xv2, xl});
  CHECK(testutil::max_abs_diff(outs[0].data(), outs2[0].data()) == 0.0);
}

TEST_CASE("stage gradients match finite differences") {
  mmerc::Rng rng(29);
  RtgcnConfig cfg;
  cfg.d_h = 3;
  cfg.d_h1 = 3;
  cfg.d_h2 = 2;
  cfg.d_alpha = 2;
  cfg.heads = 2;
  ParamStore store;
  mmerc::register_rtgcn_params(store, cfg, rng);
  auto gt = mmerc::graph_tensors(mmerc::build_graph(3, 1, 1));
  Tensor xa = random_input({3, cfg.d_h}, rng);
  Tensor xv = random_input({3, cfg.d_h}, rng);
  Tensor xl = random_input({3, cfg.d_h}, rng);
  xa.set_requires_grad(true);

  std::vector<Tensor> leaves{xa, store.at("gnn.rgcn.W0"),
                             store.at("gnn.rgcn.W.a_to_v"),
                             store.at("gnn.gt.head0.W2"),
                             store.at("gnn.gt.head1.W3")};
  auto res = testutil::grad_check(leaves, [&] {
    auto outs = mmerc::rt_gcn_forward(store, cfg, gt, {xa, xv, xl});
    return mmerc::mean(mmerc::mul(mmerc::concat(outs, 1),
                                  mmerc::concat(outs, 1)));
  });
  CHECK(res.max_rel_err < 1e-4);
}
