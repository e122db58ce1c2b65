#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mmerc/metrics.hpp"
#include "mmerc/model.hpp"
#include "mmerc/optim.hpp"

namespace mmerc {

inline std::vector<int> conversation_labels(const Conversation& conv) {
  std::vector<int> out(conv.utterances.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = conv.utterances[i].label;
  return out;
}

inline void require_compatible(const Model& model, const CorpusMeta& meta) {
  const CorpusMeta& m = model.meta();
  require(meta.d_a == m.d_a && meta.d_v == m.d_v && meta.d_l == m.d_l,
          detail::msg("corpus feature widths (", meta.d_a, ", ", meta.d_v,
                      ", ", meta.d_l, ") do not match the checkpoint (",
                      m.d_a, ", ", m.d_v, ", ", m.d_l, ")"));
  require(meta.num_classes == m.num_classes,
          detail::msg("corpus has ", meta.num_classes,
                      " classes, the checkpoint ", m.num_classes));
  require(meta.num_speakers <= m.num_speakers,
          detail::msg("corpus has ", meta.num_speakers,
                      " speakers, the checkpoint table holds ",
                      m.num_speakers));
}

struct EvalOutput {
  MetricsReport metrics;
  double mean_loss = 0.0;
};

// Dropout-free pass over every conversation; loss is the mean objective per
// utterance.
inline EvalOutput evaluate_model(Model& model, const Corpus& corpus) {
  require_compatible(model, corpus.meta);
  EvalOutput out;
  std::vector<int> gold, pred;
  Rng rng(0);
  double loss_sum = 0.0;
  std::size_t total = 0;
  for (const auto& conv : corpus.conversations) {
    Tensor lg = model.logits(conv, false, rng);
    const auto labels = conversation_labels(conv);
    loss_sum += cross_entropy(lg, labels).scalar_value() *
                static_cast<double>(labels.size());
    total += labels.size();
    auto p = argmax_rows(lg);
    gold.insert(gold.end(), labels.begin(), labels.end());
    pred.insert(pred.end(), p.begin(), p.end());
  }
  out.metrics =
      evaluate_predictions(gold, pred, model.meta().num_classes);
  out.mean_loss = total ? loss_sum / static_cast<double>(total) : 0.0;
  return out;
}

inline EvalOutput evaluate_checkpoint(const std::string& checkpoint_path,
                                      const Corpus& corpus) {
  Model model = load_checkpoint(checkpoint_path);
  return evaluate_model(model, corpus);
}

struct TrainLogEntry {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // optimization-pass objective, dropout active
  double train_accuracy = 0.0;
  double train_wf1 = 0.0;
  double valid_loss = 0.0;
  double valid_accuracy = 0.0;
  double valid_wf1 = 0.0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;           // 0 marks the initialization
  double best_selection_wf1 = -1.0;
  std::string best_checkpoint;          // serialized bytes
};

struct TrainOutput {
  Model model;  // final-epoch parameters
  SplitCorpus splits;
  TrainResult result;
};

inline nlohmann::json train_log_to_json(const TrainResult& r) {
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : r.log)
    log.push_back(nlohmann::json{{"epoch", e.epoch},
                                 {"train_loss", e.train_loss},
                                 {"train_accuracy", e.train_accuracy},
                                 {"train_wf1", e.train_wf1},
                                 {"valid_loss", e.valid_loss},
                                 {"valid_accuracy", e.valid_accuracy},
                                 {"valid_wf1", e.valid_wf1}});
  return nlohmann::json{{"epochs_run", r.epochs_run},
                        {"best_epoch", r.best_epoch},
                        {"log", log}};
}

// Splits the corpus by conversation, then runs seeded mini-batch Adam over
// whole dialogues, the objective averaged across every utterance in the
// batch. Keeps the checkpoint with the best validation weighted F1 (ties go
// to the earlier epoch; with an empty validation split the training
// weighted F1 selects instead). Stops early once eval-mode train accuracy
// reaches early_stop_train_acc, when that is set.
inline TrainOutput train(
    const RunConfig& cfg, const Corpus& corpus,
    const std::function<void(const TrainLogEntry&)>& on_epoch = nullptr) {
  cfg.validate();
  validate_corpus(corpus);
  TrainOutput out{Model(cfg, corpus.meta),
                  split(corpus, cfg.train_ratio, cfg.valid_ratio,
                        cfg.test_ratio, cfg.seed),
                  TrainResult{}};
  Model& model = out.model;
  const Corpus& train_set = out.splits.train;
  require(cfg.epochs == 0 || !train_set.conversations.empty(),
          "train: the training split is empty; widen train_ratio or add "
          "conversations");

  TrainResult& res = out.result;
  res.best_checkpoint = serialize_checkpoint(model);

  AdamOptimizer opt(AdamConfig{cfg.learning_rate});
  Rng shuffle_rng(derive_seed(cfg.seed, 101));
  Rng dropout_rng(derive_seed(cfg.seed, 102));
  const bool have_valid = !out.splits.valid.conversations.empty();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order =
        shuffled_indices(train_set.conversations.size(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t utt_sum = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_dialogues) {
      const std::size_t stop =
          std::min(order.size(), start + cfg.batch_dialogues);
      std::size_t batch_utts = 0;
      for (std::size_t b = start; b < stop; ++b)
        batch_utts += train_set.conversations[order[b]].utterances.size();

      model.params().zero_grads();
      Tensor batch_loss;
      for (std::size_t b = start; b < stop; ++b) {
        const Conversation& conv = train_set.conversations[order[b]];
        Tensor ce = cross_entropy(model.logits(conv, true, dropout_rng),
                                  conversation_labels(conv));
        Tensor weighted =
            scale(ce, static_cast<double>(conv.utterances.size()) /
                          static_cast<double>(batch_utts));
        batch_loss = batch_loss.defined() ? add(batch_loss, weighted)
                                          : weighted;
      }
      const double loss_value = batch_loss.scalar_value();
      if (!std::isfinite(loss_value))
        throw std::runtime_error(detail::msg(
            "training diverged: non-finite loss at epoch ", epoch,
            ", batch ", start / cfg.batch_dialogues + 1,
            "; lower the learning rate"));
      backward(batch_loss);
      for (auto& [path, t] : model.params()) opt.update(t);
      loss_sum += loss_value * static_cast<double>(batch_utts);
      utt_sum += batch_utts;
    }

    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.train_loss = utt_sum ? loss_sum / static_cast<double>(utt_sum)
                               : 0.0;
    const EvalOutput train_eval = evaluate_model(model, train_set);
    entry.train_accuracy = train_eval.metrics.accuracy;
    entry.train_wf1 = train_eval.metrics.weighted_f1;
    if (have_valid) {
      const EvalOutput valid_eval = evaluate_model(model, out.splits.valid);
      entry.valid_loss = valid_eval.mean_loss;
      entry.valid_accuracy = valid_eval.metrics.accuracy;
      entry.valid_wf1 = valid_eval.metrics.weighted_f1;
    }
    res.log.push_back(entry);
    res.epochs_run = epoch;

    const double selection = have_valid ? entry.valid_wf1 : entry.train_wf1;
    if (selection > res.best_selection_wf1) {
      res.best_selection_wf1 = selection;
      res.best_epoch = epoch;
      res.best_checkpoint = serialize_checkpoint(model);
    }
    if (on_epoch) on_epoch(entry);
    if (cfg.early_stop_train_acc > 0.0 &&
        entry.train_accuracy >= cfg.early_stop_train_acc)
      break;
  }
  return out;
}

struct AblationRow {
  std::string name;
  std::size_t param_total = 0;
  std::size_t corpus_edges = 0;  // summed over all conversations; 0 when the
                                 // graph branch is off
  std::string eval_split;
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
};

// A variant token is one of the four no_* flags or `modalities=<subset>`.
inline RunConfig apply_ablation_token(RunConfig cfg,
                                      const std::string& token) {
  if (token == "no_rtgcn") cfg.no_rtgcn = true;
  else if (token == "no_pcm") cfg.no_pcm = true;
  else if (token == "no_rmulti") cfg.no_rmulti = true;
  else if (token == "no_rtemp") cfg.no_rtemp = true;
  else if (token.rfind("modalities=", 0) == 0)
    cfg.modalities = token.substr(std::string("modalities=").size());
  else
    fail(detail::msg("ablate: unknown variant '", token, "'"));
  return cfg;
}

// Trains the base config plus one variant per token (same data, same seed)
// and reports structural counts next to the metrics, evaluated on the test
// split when it is nonempty, else validation, else training.
inline AblationReport ablate(const RunConfig& base, const Corpus& corpus,
                             const std::vector<std::string>& tokens) {
  AblationReport report;
  std::vector<std::pair<std::string, RunConfig>> variants{{"full", base}};
  for (const auto& t : tokens)
    variants.push_back({t, apply_ablation_token(base, t)});
  for (auto& [name, cfg] : variants) {
    TrainOutput to = train(cfg, corpus);
    AblationRow row;
    row.name = name;
    row.param_total = to.model.params().param_count();
    if (to.model.uses_rtgcn())
      for (const auto& conv : corpus.conversations)
        row.corpus_edges +=
            to.model.graph_for(conv.utterances.size()).graph.edges.size();
    const Corpus* eval_set = &to.splits.test;
    row.eval_split = "test";
    if (eval_set->conversations.empty()) {
      eval_set = &to.splits.valid;
      row.eval_split = "valid";
    }
    if (eval_set->conversations.empty()) {
      eval_set = &to.splits.train;
      row.eval_split = "train";
    }
    const EvalOutput ev = evaluate_model(to.model, *eval_set);
    row.accuracy = ev.metrics.accuracy;
    row.weighted_f1 = ev.metrics.weighted_f1;
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline nlohmann::json ablation_to_json(const AblationReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back(nlohmann::json{{"name", row.name},
                                  {"params", row.param_total},
                                  {"edges", row.corpus_edges},
                                  {"eval_split", row.eval_split},
                                  {"accuracy", row.accuracy},
                                  {"weighted_f1", row.weighted_f1}});
  return nlohmann::json{{"variants", rows}};
}

}  // namespace mmerc
