// End-to-end acceptance checks. Each criterion prints exactly one PASS/FAIL
// line; the process exit code is the number of failed criteria.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "mmerc/config.hpp"
#include "mmerc/crossmodal.hpp"
#include "mmerc/data.hpp"
#include "mmerc/graph.hpp"
#include "mmerc/graph_net.hpp"
#include "mmerc/head.hpp"
#include "mmerc/metrics.hpp"
#include "mmerc/model.hpp"
#include "mmerc/probe.hpp"
#include "mmerc/tensor.hpp"
#include "mmerc/train.hpp"
#include "testutil.hpp"

using mmerc::Tensor;

namespace {

int failures = 0;

template <class... A>
std::string str(A&&... a) {
  std::ostringstream os;
  (os << ... << a);
  return os.str();
}

std::string fmt_e(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", x);
  return buf;
}

std::string fmt_f(double x, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

void report(int criterion, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion,
              detail.c_str());
  if (!ok) ++failures;
}

template <class F>
void criterion(int n, F&& body) {
  try {
    auto [ok, detail] = body();
    report(n, ok, detail);
  } catch (const std::exception& e) {
    report(n, false, str("unexpected exception: ", e.what()));
  }
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw std::runtime_error("cannot read " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

int run_cli(const std::string& args) {
  std::string cmd =
      std::string(MMERC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status))
    throw std::runtime_error("could not run: " + cmd);
  return WEXITSTATUS(status);
}

// Shared small-model setup used wherever full structure matters but width
// does not.
mmerc::CorpusMeta tiny_meta() {
  mmerc::CorpusMeta m;
  m.d_a = 6;
  m.d_v = 7;
  m.d_l = 8;
  m.num_classes = 3;
  m.num_speakers = 2;
  return m;
}

mmerc::RunConfig tiny_cfg() {
  mmerc::RunConfig cfg;
  cfg.seed = 5;
  cfg.learning_rate = 3e-3;
  cfg.batch_dialogues = 4;
  cfg.epochs = 2;
  cfg.dropout = 0.2;
  cfg.past = 2;
  cfg.future = 1;
  cfg.heads_gt = 2;
  cfg.heads_pcm = 2;
  cfg.pcm_depth = 2;
  cfg.d_h = 6;
  cfg.d_h1 = 6;
  cfg.d_h2 = 5;
  cfg.d_alpha = 4;
  cfg.text_heads = 2;
  return cfg;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// ---- criterion 2 helpers ----------------------------------------------

struct OpWorst {
  double err = 0.0;
  std::string op;

  void take(const std::string& name, double e) {
    if (e > err) {
      err = e;
      op = name;
    }
  }
};

Tensor away_from_zero(Tensor t, double margin = 0.1) {
  for (double& v : t.mutable_data())
    if (std::abs(v) < margin) v = v < 0 ? -2 * margin : 2 * margin;
  return t;
}

void per_op_battery(OpWorst& worst) {
  using namespace mmerc;
  Rng rng(2024);
  auto mix = [&](Shape s) { return Tensor::randn(std::move(s), rng); };
  auto leaf = [&](Shape s) {
    Tensor t = Tensor::randn(std::move(s), rng);
    t.set_requires_grad(true);
    return t;
  };
  auto check = [&](const std::string& name, std::vector<Tensor> leaves,
                   const std::function<Tensor()>& f) {
    worst.take(name, testutil::grad_check(leaves, f).max_rel_err);
  };

  {
    Tensor a = leaf({3, 4}), b = leaf({4, 2}), c = mix({3, 2});
    check("matmul", {a, b}, [&] { return sum(mul(matmul(a, b), c)); });
  }
  {
    Tensor a = leaf({3, 4}), b = leaf({2, 4}), c = mix({3, 2});
    check("matmul_nt", {a, b},
          [&] { return sum(mul(matmul(a, b, false, true), c)); });
  }
  {
    Tensor a = leaf({4, 3}), b = leaf({4, 2}), c = mix({3, 2});
    check("matmul_tn", {a, b},
          [&] { return sum(mul(matmul(a, b, true, false), c)); });
  }
  {
    Tensor a = leaf({4, 3}), b = leaf({2, 4}), c = mix({3, 2});
    check("matmul_tt", {a, b},
          [&] { return sum(mul(matmul(a, b, true, true), c)); });
  }
  {
    Tensor a = leaf({3, 4}), b = leaf({3, 4}), c = mix({3, 4});
    check("add", {a, b}, [&] { return sum(mul(add(a, b), c)); });
    check("sub", {a, b}, [&] { return sum(mul(sub(a, b), c)); });
    check("mul", {a, b}, [&] { return sum(mul(mul(a, b), c)); });
    check("scale", {a}, [&] { return sum(mul(scale(a, 1.7), c)); });
    check("mean", {a}, [&] { return mean(mul(a, c)); });
  }
  {
    Tensor a = leaf({4});
    Tensor x = leaf({3, 4});
    Tensor c = mix({3, 4});
    check("add_bias_row", {x, a}, [&] { return sum(mul(add(x, a), c)); });
  }
  {
    Tensor x = away_from_zero(Tensor::randn({3, 5}, rng));
    x.set_requires_grad(true);
    Tensor c = mix({3, 5});
    check("relu", {x}, [&] { return sum(mul(relu(x), c)); });
  }
  {
    Tensor x = leaf({4, 5});
    Tensor c = mix({4, 5});
    check("softmax_rows", {x},
          [&] { return sum(mul(softmax(x, 1), c)); });
    check("softmax_cols", {x},
          [&] { return sum(mul(softmax(x, 0), c)); });
  }
  {
    Tensor x = leaf({4, 5});
    Tensor c = mix({4, 5});
    Tensor mask = Tensor::from({4, 5}, {1, 1, 1, 1, 1,  //
                                        1, 0, 1, 0, 0,  //
                                        0, 0, 0, 0, 0,  //
                                        0, 1, 0, 0, 1});
    check("masked_softmax", {x},
          [&] { return sum(mul(masked_softmax_rows(x, mask), c)); });
  }
  {
    Tensor x = leaf({3, 6});
    Tensor gamma = leaf({6}), beta = leaf({6});
    Tensor c = mix({3, 6});
    check("layer_norm", {x, gamma, beta},
          [&] { return sum(mul(layer_norm(x, gamma, beta), c)); });
  }
  {
    Tensor a = leaf({2, 4}), b = leaf({3, 4}), c = mix({4, 4});
    check("concat_rows_slice", {a, b}, [&] {
      return sum(mul(slice(concat({a, b}, 0), 0, 1, 4), c));
    });
  }
  {
    Tensor a = leaf({3, 2}), b = leaf({3, 3}), c = mix({3, 4});
    check("concat_cols_slice", {a, b}, [&] {
      return sum(mul(slice(concat({a, b}, 1), 1, 1, 4), c));
    });
  }
  {
    Tensor x = leaf({4, 5});
    Tensor c = mix({4, 5});
    check("dropout", {x}, [&] {
      Rng mask_rng(99);
      return sum(mul(dropout(x, 0.3, true, mask_rng), c));
    });
  }
  {
    Tensor table = leaf({5, 4});
    Tensor c = mix({4, 4});
    check("embedding_lookup", {table}, [&] {
      return sum(mul(embedding_lookup(table, {0, 2, 4, 2}), c));
    });
  }
  {
    Tensor logits = leaf({4, 3});
    std::vector<int> labels{0, 2, 1, 1};
    check("cross_entropy", {logits},
          [&] { return cross_entropy(logits, labels); });
  }
}

// ---- criterion 3 helpers ----------------------------------------------

using EdgeKey = std::tuple<std::size_t, int, std::size_t, int, int>;

std::set<EdgeKey> edge_set(const std::vector<mmerc::Edge>& edges) {
  std::set<EdgeKey> s;
  for (const auto& e : edges)
    s.insert({e.src.utterance, static_cast<int>(e.src.modality),
              e.dst.utterance, static_cast<int>(e.dst.modality),
              static_cast<int>(e.rel)});
  return s;
}

// Slow first-principles enumeration over every node pair and relation tag,
// written independently of the builder.
std::set<EdgeKey> brute_force_edges(std::size_t n, std::size_t p,
                                    std::size_t f) {
  std::set<EdgeKey> s;
  for (std::size_t si = 0; si < n; ++si)
    for (int sm = 0; sm < 3; ++sm)
      for (std::size_t di = 0; di < n; ++di)
        for (int dm = 0; dm < 3; ++dm)
          for (int r = 0; r < mmerc::kNumRelations; ++r) {
            const auto rel = static_cast<mmerc::Relation>(r);
            if (static_cast<int>(mmerc::relation_src_modality(rel)) != sm ||
                static_cast<int>(mmerc::relation_dst_modality(rel)) != dm)
              continue;
            bool member = false;
            if (mmerc::is_multimodal(rel))
              member = si == di;
            else if (r < 12)
              member = si < di && di - si <= p;
            else
              member = si > di && si - di <= f;
            if (member) s.insert({si, sm, di, dm, r});
          }
  return s;
}

std::size_t closed_form_count(std::size_t n, std::size_t p, std::size_t f) {
  std::size_t total = 9 * n;
  for (std::size_t i = 0; i < n; ++i)
    total += 3 * std::min(i, p) + 3 * std::min(n - 1 - i, f);
  return total;
}

// ---- criterion 5 helper ------------------------------------------------

struct OracleMetrics {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::vector<double> f1;
};

OracleMetrics metric_oracle(const std::vector<int>& gold,
                            const std::vector<int>& pred, int num_classes) {
  OracleMetrics o;
  o.f1.resize(static_cast<std::size_t>(num_classes), 0.0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (gold[i] == pred[i]) ++hits;
  o.accuracy = gold.empty()
                   ? 0.0
                   : static_cast<double>(hits) / static_cast<double>(gold.size());
  for (int k = 0; k < num_classes; ++k) {
    std::size_t tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (gold[i] == k) ++support;
      if (gold[i] == k && pred[i] == k) ++tp;
      if (gold[i] != k && pred[i] == k) ++fp;
      if (gold[i] == k && pred[i] != k) ++fn;
    }
    double p = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
    double r = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
    double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    o.f1[static_cast<std::size_t>(k)] = f1;
    if (!gold.empty())
      o.weighted_f1 +=
          (static_cast<double>(support) / static_cast<double>(gold.size())) *
          f1;
  }
  return o;
}

}  // namespace

int main() {
  criterion(1, [] {
    const std::string readme = slurp(std::string(MMERC_SOURCE_DIR) +
                                     "/README.md");
    const bool has_acc = readme.find("69.93") != std::string::npos;
    const bool has_f1 = readme.find("70.02") != std::string::npos;
    return std::pair{has_acc && has_f1,
                     std::string("README records the published six-way "
                                 "reference figures (accuracy 69.93, "
                                 "weighted F1 70.02) as documentation-only "
                                 "targets")};
  });

  criterion(2, [] {
    const auto t0 = std::chrono::steady_clock::now();

    OpWorst ops;
    per_op_battery(ops);

    auto meta = tiny_meta();
    auto corpus = mmerc::synth_corpus(1, 2, 2, meta, 11);
    const auto& conv = corpus.conversations[0];
    const auto labels = mmerc::conversation_labels(conv);
    mmerc::Model model(tiny_cfg(), meta);
    auto& store = model.params();
    std::vector<Tensor> leaves{
        store.at("enc.audio.W"),          store.at("enc.visual.b"),
        store.at("enc.text.attn.Wq"),     store.at("enc.text.ln1.gamma"),
        store.at("enc.speaker.table"),    store.at("gnn.rgcn.W0"),
        store.at("gnn.rgcn.W.a_to_v"),    store.at("gnn.rgcn.W.past_l"),
        store.at("gnn.gt.head1.W2"),      store.at("pcm.a_to_v.layer0.Wv"),
        store.at("pcm.l_to_a.layer1.Wk"), store.at("head.W0"),
        store.at("head.b1")};
    auto e2e = testutil::grad_check(
        leaves,
        [&] {
          mmerc::Rng r(0);
          return mmerc::cross_entropy(model.logits(conv, false, r), labels);
        },
        1e-5, 1e-6);

    const double secs = elapsed_s(t0);
    const bool ok = ops.err < 1e-4 && e2e.max_rel_err < 1e-3 && secs < 60.0;
    return std::pair{
        ok, str("finite differences: worst per-op rel err ", fmt_e(ops.err),
                " (", ops.op, ", bound 1e-4); end-to-end two-utterance "
                "model ", fmt_e(e2e.max_rel_err), " (bound 1e-3); ",
                fmt_f(secs, 1), " s (bound 60 s)")};
  });

  criterion(3, [] {
    std::size_t cases = 0;
    for (std::size_t n = 1; n <= 6; ++n)
      for (std::size_t p = 0; p <= 3; ++p)
        for (std::size_t f = 0; f <= 3; ++f) {
          auto g = mmerc::build_graph(n, p, f);
          auto got = edge_set(g.edges);
          if (got.size() != g.edges.size())
            return std::pair{false, str("duplicate edges at N=", n)};
          if (got != brute_force_edges(n, p, f))
            return std::pair{false, str("edge mismatch at N=", n, " P=", p,
                                        " F=", f)};
          if (g.edges.size() != closed_form_count(n, p, f) ||
              g.edges.size() != mmerc::expected_edge_count(n, p, f))
            return std::pair{false, str("count mismatch at N=", n, " P=", p,
                                        " F=", f)};
          ++cases;
        }
    return std::pair{cases == 96,
                     str("graph builder matches brute-force enumeration and "
                         "the closed-form count on all ", cases,
                         " (N<=6, windows<=3) combinations")};
  });

  criterion(4, [] {
    const std::size_t one = mmerc::build_graph(1, 11, 9).edges.size();
    const std::size_t three = mmerc::build_graph(3, 1, 1).edges.size();
    const std::size_t iso = mmerc::build_graph(3, 0, 0).edges.size();
    const bool ok = one == 9 && three == 39 && iso == 27;
    return std::pair{ok, str("spot edge counts: N=1 gives ", one,
                             " (want 9); N=3 window [1,1] gives ", three,
                             " (want 39); N=3 window [0,0] gives ", iso,
                             " (want 27)")};
  });

  criterion(5, [] {
    mmerc::Rng rng(424242);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      int m = 2 + static_cast<int>(mmerc::uniform_below(rng, 7));
      std::size_t n = 1 + mmerc::uniform_below(rng, 40);
      std::vector<int> gold(n), pred(n);
      for (std::size_t i = 0; i < n; ++i) {
        gold[i] = static_cast<int>(mmerc::uniform_below(rng, std::size_t(m)));
        pred[i] = static_cast<int>(mmerc::uniform_below(rng, std::size_t(m)));
      }
      auto got = mmerc::evaluate_predictions(gold, pred, std::size_t(m));
      auto want = metric_oracle(gold, pred, m);
      worst = std::max(worst, std::abs(got.accuracy - want.accuracy));
      worst = std::max(worst, std::abs(got.weighted_f1 - want.weighted_f1));
      for (int k = 0; k < m; ++k)
        worst = std::max(worst, std::abs(got.per_class_f1[std::size_t(k)] -
                                         want.f1[std::size_t(k)]));
    }
    return std::pair{worst < 1e-12,
                     str("accuracy, per-class F1 and weighted F1 match an "
                         "independent oracle on 1000 random label/prediction "
                         "pairs; worst abs diff ", fmt_e(worst),
                         " (bound 1e-12)")};
  });

  criterion(6, [] {
    mmerc::CorpusMeta meta;
    meta.d_a = meta.d_v = meta.d_l = 16;
    meta.num_classes = 4;
    meta.num_speakers = 2;
    auto corpus = mmerc::synth_corpus(40, 3, 6, meta, 20260814, 3.0);

    const double oracle = mmerc::centroid_oracle_accuracy(corpus);
    if (oracle < 0.95)
      return std::pair{false,
                       str("centroid oracle only reaches ", fmt_f(oracle),
                           "; the planted corpus is not separable enough")};

    mmerc::RunConfig cfg;  // stock hyperparameters
    cfg.early_stop_train_acc = 0.95;
    const auto t0 = std::chrono::steady_clock::now();
    auto out = mmerc::train(cfg, corpus);
    const double secs = elapsed_s(t0);

    const auto& log = out.result.log;
    const double final_acc = log.empty() ? 0.0 : log.back().train_accuracy;
    const bool ok = final_acc >= 0.95 && out.result.epochs_run <= 100 &&
                    secs < 300.0;
    return std::pair{
        ok, str("centroid oracle ", fmt_f(oracle),
                " certifies separability; stock training reached train "
                "accuracy ", fmt_f(final_acc), " after ",
                out.result.epochs_run, " epoch(s) in ", fmt_f(secs, 1),
                " s (bounds: 0.95 within 100 epochs, 300 s)")};
  });

  criterion(7, [] {
    const std::size_t n = 7, p = 2, f = 2;

    mmerc::GraphOptions no_temp;
    no_temp.temporal = false;
    auto g_mm = mmerc::build_graph(n, p, f, no_temp);
    const bool temp_ok =
        g_mm.edges.size() == 9 * n &&
        std::all_of(g_mm.edges.begin(), g_mm.edges.end(),
                    [](const mmerc::Edge& e) { return is_multimodal(e.rel); });

    mmerc::GraphOptions no_multi;
    no_multi.multimodal = false;
    auto g_t = mmerc::build_graph(n, p, f, no_multi);
    const bool multi_ok =
        g_t.edges.size() == mmerc::expected_edge_count(n, p, f) - 9 * n &&
        std::all_of(g_t.edges.begin(), g_t.edges.end(),
                    [](const mmerc::Edge& e) { return is_temporal(e.rel); });

    auto meta = tiny_meta();
    mmerc::Model full(tiny_cfg(), meta);
    const auto& fs = full.params();

    auto uni_cfg = tiny_cfg();
    uni_cfg.modalities = "l";
    mmerc::Model uni(uni_cfg, meta);
    const auto& us = uni.params();
    const bool uni_ok = us.param_count("pcm.") == 0 &&
                        !us.contains("gnn.rgcn.W.l_to_l") &&
                        !us.contains("gnn.rgcn.W.a_to_v") &&
                        us.contains("gnn.rgcn.W.past_l") &&
                        us.contains("gnn.rgcn.W.future_l") &&
                        us.param_count("enc.audio") == 0 &&
                        us.param_count("enc.visual") == 0;

    auto ng_cfg = tiny_cfg();
    ng_cfg.no_rtgcn = true;
    mmerc::Model no_graph(ng_cfg, meta);
    const auto& ns = no_graph.params();
    const bool ng_ok =
        fs.param_count() - ns.param_count() ==
            fs.param_count("gnn.") + fs.param_count("head.") -
                ns.param_count("head.") &&
        ns.param_count("gnn.") == 0 &&
        ns.param_count("pcm.") == fs.param_count("pcm.") &&
        ns.param_count("enc.") == fs.param_count("enc.");

    auto np_cfg = tiny_cfg();
    np_cfg.no_pcm = true;
    mmerc::Model no_cross(np_cfg, meta);
    const auto& ps = no_cross.params();
    const bool np_ok =
        fs.param_count() - ps.param_count() ==
            fs.param_count("pcm.") + fs.param_count("head.") -
                ps.param_count("head.") &&
        ps.param_count("pcm.") == 0 &&
        ps.param_count("gnn.") == fs.param_count("gnn.") &&
        ps.param_count("enc.") == fs.param_count("enc.");

    const bool ok = temp_ok && multi_ok && uni_ok && ng_ok && np_ok;
    return std::pair{
        ok, str("ablations: temporal-off graph has exactly 9N edges (",
                g_mm.edges.size(), " for N=", n,
                "); multimodal-off keeps only temporal edges (",
                g_t.edges.size(), "); a text-only model instantiates zero "
                "cross-modal and zero same-utterance relation parameters; "
                "graph/cross-modal removal deltas equal their parameter "
                "path totals")};
  });

  criterion(8, [] {
    using namespace mmerc;
    GraphOptions opts;
    opts.multimodal = false;
    const std::size_t n = 4;
    auto gt = graph_tensors(build_graph(n, 2, 1, opts));

    RtgcnConfig cfg;
    cfg.d_h = 6;
    cfg.d_h1 = 6;
    cfg.d_h2 = 5;
    cfg.d_alpha = 4;
    cfg.heads = 2;
    ParamStore store;
    Rng rng(3);
    register_rtgcn_params(store, cfg, rng, opts);

    Rng data_rng(4);
    Tensor xa = Tensor::randn({n, cfg.d_h}, data_rng).set_requires_grad(true);
    Tensor xv = Tensor::randn({n, cfg.d_h}, data_rng).set_requires_grad(true);
    Tensor xl = Tensor::randn({n, cfg.d_h}, data_rng).set_requires_grad(true);

    auto outs = rt_gcn_forward(store, cfg, gt, {xa, xv, xl});
    backward(sum(outs[0]));

    const double gv = max_abs(std::vector<double>(xv.grad()));
    const double gl = max_abs(std::vector<double>(xl.grad()));
    const double ga = max_abs(std::vector<double>(xa.grad()));
    const bool ok = gv == 0.0 && gl == 0.0 && ga > 0.0;
    return std::pair{
        ok, str("with same-utterance relations removed and no cross-modal "
                "branch, audio graph output gradients are exactly zero with "
                "respect to visual (", fmt_e(gv), ") and text (", fmt_e(gl),
                ") inputs while audio inputs stay live (", fmt_e(ga), ")")};
  });

  criterion(9, [] {
    namespace fs = std::filesystem;
    const std::string dir = testutil::temp_path("acceptance_det");
    fs::create_directories(dir);

    auto corpus = mmerc::synth_corpus(8, 2, 4, tiny_meta(), 21);
    mmerc::save_corpus(corpus, dir + "/corpus.jsonl");
    {
      std::ofstream cfg(dir + "/run.cfg");
      cfg << "seed = 11\nlearning_rate = 3e-3\nbatch_dialogues = 4\n"
             "epochs = 2\ndropout = 0.2\npast = 2\nfuture = 1\n"
             "heads_gt = 2\nheads_pcm = 2\npcm_depth = 1\nd_h = 6\n"
             "d_h1 = 6\nd_h2 = 5\nd_alpha = 4\ntext_heads = 2\n";
    }
    for (const char* run : {"a", "b"})
      if (run_cli(str("train --config ", dir, "/run.cfg --data ", dir,
                      "/corpus.jsonl --out ", dir, "/", run)) != 0)
        return std::pair{false, std::string("train run failed")};

    bool ok = true;
    std::string diffs;
    for (const char* name :
         {"checkpoint.bin", "final.bin", "metrics.json", "train_log.json"}) {
      if (slurp(str(dir, "/a/", name)) != slurp(str(dir, "/b/", name))) {
        ok = false;
        diffs += str(" ", name);
      }
    }
    return std::pair{
        ok, ok ? std::string("two identically configured training runs "
                             "produce byte-identical checkpoints, metrics "
                             "and training logs")
               : str("runs differ in:", diffs)};
  });

  criterion(10, [] {
    using namespace mmerc;

    auto meta = tiny_meta();
    auto corpus = synth_corpus(1, 5, 5, meta, 13);
    const auto& conv = corpus.conversations[0];
    Model model(tiny_cfg(), meta);
    AttnProbe probe;
    Rng rng(0);
    model.logits(conv, false, rng, &probe);
    std::size_t rows_checked = 0;
    double worst_row = 0.0;
    for (const auto& entry : probe.entries) {
      const auto& w = entry.weights;
      for (std::size_t i = 0; i < w.rows(); ++i) {
        double wsum = 0.0, msum = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) {
          wsum += w.at(i, j);
          if (entry.mask.defined()) msum += entry.mask.at(i, j);
        }
        const double want = entry.mask.defined() && msum == 0.0 ? 0.0 : 1.0;
        worst_row = std::max(worst_row, std::abs(wsum - want));
        ++rows_checked;
      }
    }
    const bool rows_ok = probe.entries.size() > 0 && worst_row <= 1e-9;

    Rng lrng(8);
    Tensor logits = Tensor::randn({6, 4}, lrng);
    const auto base = argmax_rows(logits);
    bool scale_ok = true;
    for (double s : {0.1, 2.0, 37.5})
      scale_ok = scale_ok && argmax_rows(scale(logits, s)) == base;

    PcmConfig pcfg;
    pcfg.d_h = pcfg.d_k = pcfg.d_v = 6;
    pcfg.heads = 2;
    pcfg.depth = 2;
    ParamStore store;
    Rng prng(5);
    const std::array<bool, 3> all{true, true, true};
    register_pcm_params(store, pcfg, all, prng);
    const std::size_t n = 5;
    Rng xrng(6);
    std::array<Tensor, 3> inputs{Tensor::randn({n, 6}, xrng),
                                 Tensor::randn({n, 6}, xrng),
                                 Tensor::randn({n, 6}, xrng)};
    std::array<Tensor, 3> reversed;
    for (int m = 0; m < 3; ++m) {
      std::vector<double> d(inputs[m].size());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 6; ++j)
          d[(n - 1 - i) * 6 + j] = inputs[m].at(i, j);
      reversed[m] = Tensor::from({n, 6}, std::move(d));
    }
    Rng r1(0), r2(0);
    auto out = pcm_forward(store, pcfg, inputs, all, false, r1);
    auto rout = pcm_forward(store, pcfg, reversed, all, false, r2);
    double perm_diff = 0.0;
    for (std::size_t k = 0; k < out.pairs.size(); ++k)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out.pairs[k].cols(); ++j)
          perm_diff = std::max(perm_diff,
                               std::abs(out.pairs[k].at(i, j) -
                                        rout.pairs[k].at(n - 1 - i, j)));
    const bool perm_ok = out.pairs.size() == 3 && perm_diff <= 1e-12;

    const bool ok = rows_ok && scale_ok && perm_ok;
    return std::pair{
        ok, str("attention rows over ", probe.entries.size(),
                " probed matrices sum to one within ", fmt_e(worst_row),
                " (bound 1e-9); prediction argmax is invariant to positive "
                "logit rescaling; cross-modal outputs are "
                "permutation-equivariant within ", fmt_e(perm_diff))};
  });

  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures;
}
