#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmerc/train.hpp"

namespace {

using namespace mmerc;

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), detail::msg("cannot open '", path, "' for writing"));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), detail::msg("write to '", path, "' failed"));
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(csv);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<std::string> class_names(const CorpusMeta& meta) {
  if (meta.label_names.size() == meta.num_classes) return meta.label_names;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < meta.num_classes; ++k)
    names.push_back(detail::msg("class", k));
  return names;
}

void print_metrics(const std::string& title, const MetricsReport& m,
                   const std::vector<std::string>& names) {
  std::printf("%s: accuracy %.4f, weighted F1 %.4f (%zu utterances)\n",
              title.c_str(), m.accuracy, m.weighted_f1, m.total);
  for (std::size_t k = 0; k < m.per_class_f1.size(); ++k)
    std::printf("  F1 %-12s %.4f\n", names[k].c_str(), m.per_class_f1[k]);
}

struct TrainArgs {
  std::string config, data, out;
  std::vector<std::string> overrides;
};

void run_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  apply_overrides(cfg, a.overrides);
  cfg.validate();
  Corpus corpus = load_corpus(a.data);
  std::filesystem::create_directories(a.out);

  auto out = train(cfg, corpus, [](const TrainLogEntry& e) {
    std::printf(
        "epoch %zu: train loss %.4f acc %.4f wF1 %.4f | "
        "valid loss %.4f acc %.4f wF1 %.4f\n",
        e.epoch, e.train_loss, e.train_accuracy, e.train_wf1, e.valid_loss,
        e.valid_accuracy, e.valid_wf1);
  });

  const auto path = [&](const char* name) {
    return (std::filesystem::path(a.out) / name).string();
  };
  write_file(path("checkpoint.bin"), out.result.best_checkpoint);
  save_checkpoint(out.model, path("final.bin"));
  write_file(path("train_log.json"),
             train_log_to_json(out.result).dump(2) + "\n");
  save_corpus(out.splits.train, path("split_train.jsonl"));
  save_corpus(out.splits.valid, path("split_valid.jsonl"));
  save_corpus(out.splits.test, path("split_test.jsonl"));

  Model best = deserialize_checkpoint(out.result.best_checkpoint,
                                      path("checkpoint.bin"));
  nlohmann::json metrics{{"best_epoch", out.result.best_epoch},
                         {"epochs_run", out.result.epochs_run}};
  const std::pair<const char*, const Corpus*> parts[] = {
      {"train", &out.splits.train},
      {"valid", &out.splits.valid},
      {"test", &out.splits.test}};
  for (const auto& [name, part] : parts)
    if (!part->conversations.empty())
      metrics[name] = metrics_to_json(evaluate_model(best, *part).metrics);
  write_file(path("metrics.json"), metrics.dump(2) + "\n");

  std::printf("best epoch %zu (selection wF1 %.4f); wrote %s\n",
              out.result.best_epoch, out.result.best_selection_wf1,
              path("checkpoint.bin").c_str());
}

void run_eval(const std::string& checkpoint, const std::string& data,
              bool as_json) {
  Model model = load_checkpoint(checkpoint);
  Corpus corpus = load_corpus(data);
  EvalOutput ev = evaluate_model(model, corpus);
  if (as_json) {
    std::cout << metrics_to_json(ev.metrics).dump() << "\n";
    return;
  }
  print_metrics("eval", ev.metrics, class_names(model.meta()));
  std::printf("  mean loss    %.4f\n", ev.mean_loss);
}

struct SynthArgs {
  std::string out;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double mu = 3.0;
  std::size_t classes = 6, speakers = 2;
  std::size_t d_a = 100, d_v = 512, d_l = 768;
  std::size_t len_lo = 4, len_hi = 12;
};

void run_synth(const SynthArgs& a) {
  CorpusMeta meta;
  meta.d_a = a.d_a;
  meta.d_v = a.d_v;
  meta.d_l = a.d_l;
  meta.num_classes = a.classes;
  meta.num_speakers = a.speakers;
  if (a.classes == 6)
    meta.label_names = {"happy", "sad",     "neutral",
                        "angry", "excited", "frustrated"};
  Corpus corpus = synth_corpus(a.n, a.len_lo, a.len_hi, meta, a.seed, a.mu);
  save_corpus(corpus, a.out);
  std::printf("wrote %zu conversations (%zu utterances) to %s\n",
              corpus.conversations.size(), corpus.utterance_count(),
              a.out.c_str());
}

void run_graph_export(std::size_t n, std::size_t past, std::size_t future,
                      const std::string& format, const std::string& out) {
  MultimodalGraph g = build_graph(n, past, future);
  export_graph(g, out, format);
  std::printf("wrote %zu nodes, %zu edges to %s\n", g.node_count(),
              g.edges.size(), out.c_str());
}

void run_ablate(const std::string& config, const std::string& data,
                const std::string& flags, bool as_json) {
  RunConfig cfg = load_config(config);
  cfg.validate();
  Corpus corpus = load_corpus(data);
  AblationReport report = ablate(cfg, corpus, split_csv(flags));
  if (as_json) {
    std::cout << ablation_to_json(report).dump() << "\n";
    return;
  }
  std::printf("%-16s %12s %10s %6s %10s %12s\n", "variant", "params",
              "edges", "split", "accuracy", "weighted_f1");
  for (const auto& r : report.rows)
    std::printf("%-16s %12zu %10zu %6s %10.4f %12.4f\n", r.name.c_str(),
                r.param_total, r.corpus_edges, r.eval_split.c_str(),
                r.accuracy, r.weighted_f1);
}

void run_report_confusion(const std::string& checkpoint,
                          const std::string& data, const std::string& out) {
  Model model = load_checkpoint(checkpoint);
  Corpus corpus = load_corpus(data);
  EvalOutput ev = evaluate_model(model, corpus);
  write_confusion_csv(ev.metrics, class_names(model.meta()), out);
  std::printf("wrote %zux%zu confusion matrix (%zu utterances) to %s\n",
              model.meta().num_classes, model.meta().num_classes,
              ev.metrics.total, out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal conversation emotion classifier"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* t = app.add_subcommand("train",
                               "train and keep the best-validation model");
  t->add_option("--config", train_args.config, "config file")->required();
  t->add_option("--data", train_args.data, "corpus JSONL")->required();
  t->add_option("--out", train_args.out, "output directory")->required();
  t->add_option("--set", train_args.overrides,
                "override a config value (key=value, repeatable)");
  t->callback([&] { run_train(train_args); });

  std::string eval_checkpoint, eval_data;
  bool eval_json = false;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  e->add_option("--checkpoint", eval_checkpoint, "checkpoint file")
      ->required();
  e->add_option("--data", eval_data, "corpus JSONL")->required();
  e->add_flag("--json", eval_json, "emit machine-readable JSON metrics");
  e->callback([&] { run_eval(eval_checkpoint, eval_data, eval_json); });

  SynthArgs synth_args;
  auto* s = app.add_subcommand("synth",
                               "write a planted-signal synthetic corpus");
  s->add_option("--out", synth_args.out, "output JSONL path")->required();
  s->add_option("--n", synth_args.n, "number of conversations")->required();
  s->add_option("--seed", synth_args.seed, "generator seed")->required();
  s->add_option("--mu", synth_args.mu, "planted signal strength");
  s->add_option("--classes", synth_args.classes, "number of classes");
  s->add_option("--speakers", synth_args.speakers, "number of speakers");
  s->add_option("--d-a", synth_args.d_a, "audio feature width");
  s->add_option("--d-v", synth_args.d_v, "visual feature width");
  s->add_option("--d-l", synth_args.d_l, "text feature width");
  s->add_option("--len-lo", synth_args.len_lo, "shortest conversation");
  s->add_option("--len-hi", synth_args.len_hi, "longest conversation");
  s->callback([&] { run_synth(synth_args); });

  std::size_t graph_n = 0, graph_past = 11, graph_future = 9;
  std::string graph_format = "edgelist", graph_out;
  auto* g = app.add_subcommand("graph", "conversation graph utilities");
  g->require_subcommand(1);
  auto* ge = g->add_subcommand("export", "write the graph for N utterances");
  ge->add_option("--n", graph_n, "utterance count")->required();
  ge->add_option("--past", graph_past, "past window");
  ge->add_option("--future", graph_future, "future window");
  ge->add_option("--format", graph_format, "edgelist or dot")
      ->check(CLI::IsMember({"edgelist", "dot"}));
  ge->add_option("--out", graph_out, "output path")->required();
  ge->callback([&] {
    run_graph_export(graph_n, graph_past, graph_future, graph_format,
                     graph_out);
  });

  std::string ab_config, ab_data, ab_flags;
  bool ab_json = false;
  auto* ab = app.add_subcommand(
      "ablate", "train the base config plus one variant per flag");
  ab->add_option("--config", ab_config, "config file")->required();
  ab->add_option("--data", ab_data, "corpus JSONL")->required();
  ab->add_option("--flags", ab_flags,
                 "comma-separated variants: no_rtgcn, no_pcm, no_rmulti, "
                 "no_rtemp, modalities=<subset>")
      ->required();
  ab->add_flag("--json", ab_json, "emit machine-readable JSON");
  ab->callback([&] { run_ablate(ab_config, ab_data, ab_flags, ab_json); });

  std::string rep_checkpoint, rep_data, rep_out;
  auto* rep = app.add_subcommand("report", "derived reports");
  rep->require_subcommand(1);
  auto* rc = rep->add_subcommand("confusion",
                                 "write the confusion matrix as CSV");
  rc->add_option("--checkpoint", rep_checkpoint, "checkpoint file")
      ->required();
  rc->add_option("--data", rep_data, "corpus JSONL")->required();
  rc->add_option("--out", rep_out, "output CSV path")->required();
  rc->callback(
      [&] { run_report_confusion(rep_checkpoint, rep_data, rep_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "mmerc: error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
