#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmerc/common.hpp"

namespace mmerc {

// One labeled turn: fixed-length audio/visual vectors plus a text token
// matrix (a pooled text vector is the T=1 case).
struct Utterance {
  int speaker = 0;
  int label = 0;
  std::vector<double> audio;
  std::vector<double> visual;
  std::vector<std::vector<double>> text;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;
};

struct CorpusMeta {
  std::size_t d_a = 100;
  std::size_t d_v = 512;
  std::size_t d_l = 768;
  std::size_t num_classes = 6;
  std::size_t num_speakers = 2;
  std::vector<std::string> label_names;
};

struct Corpus {
  CorpusMeta meta;
  std::vector<Conversation> conversations;

  std::size_t utterance_count() const {
    std::size_t n = 0;
    for (const auto& c : conversations) n += c.utterances.size();
    return n;
  }
};

inline void validate_corpus(const Corpus& corpus) {
  const auto& m = corpus.meta;
  require(m.d_a > 0 && m.d_v > 0 && m.d_l > 0,
          "corpus meta: feature dims must be positive");
  require(m.num_classes > 0, "corpus meta: label count must be positive");
  require(m.num_speakers > 0, "corpus meta: speaker count must be positive");
  require(m.label_names.empty() || m.label_names.size() == m.num_classes,
          detail::msg("corpus meta: ", m.label_names.size(),
                      " label names for ", m.num_classes, " classes"));
  auto check_vec = [](const std::vector<double>& v, std::size_t want,
                      const std::string& where, const std::string& field) {
    require(v.size() == want,
            detail::msg(where, ": ", field, " has length ", v.size(),
                        ", expected ", want));
    for (double x : v)
      require(std::isfinite(x),
              detail::msg(where, ": ", field, " contains a non-finite value"));
  };
  for (std::size_t ci = 0; ci < corpus.conversations.size(); ++ci) {
    const auto& conv = corpus.conversations[ci];
    const std::string cwhere =
        detail::msg("conversation '", conv.id, "' (#", ci, ")");
    require(!conv.utterances.empty(), cwhere + ": has no utterances");
    for (std::size_t ui = 0; ui < conv.utterances.size(); ++ui) {
      const auto& u = conv.utterances[ui];
      const std::string where = detail::msg(cwhere, " utterance ", ui);
      require(u.speaker >= 0 &&
                  static_cast<std::size_t>(u.speaker) < m.num_speakers,
              detail::msg(where, ": speaker ", u.speaker,
                          " outside [0, ", m.num_speakers, ")"));
      require(u.label >= 0 &&
                  static_cast<std::size_t>(u.label) < m.num_classes,
              detail::msg(where, ": label ", u.label, " outside [0, ",
                          m.num_classes, ")"));
      check_vec(u.audio, m.d_a, where, "audio");
      check_vec(u.visual, m.d_v, where, "visual");
      require(!u.text.empty(), where + ": text has no token rows");
      for (const auto& row : u.text) check_vec(row, m.d_l, where, "text row");
    }
  }
}

namespace detail {

using nlohmann::json;

inline json meta_to_json(const CorpusMeta& m) {
  return json{{"d_a", m.d_a},
              {"d_v", m.d_v},
              {"d_l", m.d_l},
              {"M", m.num_classes},
              {"N_S", m.num_speakers},
              {"label_names", m.label_names}};
}

inline json conv_to_json(const Conversation& c) {
  json utts = json::array();
  for (const auto& u : c.utterances) {
    utts.push_back(json{{"speaker", u.speaker},
                        {"label", u.label},
                        {"audio", u.audio},
                        {"visual", u.visual},
                        {"text", u.text}});
  }
  return json{{"id", c.id}, {"utterances", std::move(utts)}};
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  require(it != j.end(), msg(where, ": missing field '", key, "'"));
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    fail(msg(where, ": field '", key, "' has the wrong type (", e.what(), ")"));
  }
}

inline CorpusMeta meta_from_json(const json& j, const std::string& where) {
  CorpusMeta m;
  m.d_a = field<std::size_t>(j, "d_a", where);
  m.d_v = field<std::size_t>(j, "d_v", where);
  m.d_l = field<std::size_t>(j, "d_l", where);
  m.num_classes = field<std::size_t>(j, "M", where);
  m.num_speakers = field<std::size_t>(j, "N_S", where);
  m.label_names =
      field<std::vector<std::string>>(j, "label_names", where);
  return m;
}

}  // namespace detail

// JSON Lines: line 1 metadata, each following line one conversation.
inline void save_corpus(const Corpus& corpus, const std::string& path) {
  validate_corpus(corpus);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), detail::msg("cannot open '", path, "' for writing"));
  out << detail::meta_to_json(corpus.meta).dump() << "\n";
  for (const auto& c : corpus.conversations)
    out << detail::conv_to_json(c).dump() << "\n";
  require(out.good(), detail::msg("write to '", path, "' failed"));
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), detail::msg("cannot open '", path, "' for reading"));
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  bool have_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = detail::msg(path, ":", line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(detail::msg(where, ": malformed JSON record (", e.what(), ")"));
    }
    if (!have_meta) {
      corpus.meta = detail::meta_from_json(j, where);
      have_meta = true;
      continue;
    }
    Conversation conv;
    conv.id = detail::field<std::string>(j, "id", where);
    auto utts = detail::field<nlohmann::json>(j, "utterances", where);
    require(utts.is_array(),
            detail::msg(where, ": field 'utterances' must be an array"));
    for (const auto& ju : utts) {
      Utterance u;
      u.speaker = detail::field<int>(ju, "speaker", where);
      u.label = detail::field<int>(ju, "label", where);
      u.audio = detail::field<std::vector<double>>(ju, "audio", where);
      u.visual = detail::field<std::vector<double>>(ju, "visual", where);
      u.text = detail::field<std::vector<std::vector<double>>>(ju, "text",
                                                               where);
      conv.utterances.push_back(std::move(u));
    }
    corpus.conversations.push_back(std::move(conv));
  }
  require(have_meta,
          detail::msg(path, ": empty file, expected a metadata line"));
  validate_corpus(corpus);
  return corpus;
}

// Synthetic conversations with a planted signal: class k adds +mu to a
// disjoint coordinate block of every modality (and every text token row), so
// classes are linearly separable by construction once mu is a few noise
// standard deviations. mu = 0 produces class-blind features.
inline Corpus synth_corpus(std::size_t n_conversations, std::size_t len_lo,
                           std::size_t len_hi, const CorpusMeta& meta,
                           std::uint64_t seed, double mu = 3.0) {
  require(len_lo >= 1 && len_lo <= len_hi,
          detail::msg("synth_corpus: bad length range [", len_lo, ", ",
                      len_hi, "]"));
  const std::size_t M = meta.num_classes;
  require(meta.d_a >= M && meta.d_v >= M && meta.d_l >= M,
          detail::msg("synth_corpus: all feature dims must be >= class count ",
                      M, " to plant disjoint blocks"));
  Corpus corpus;
  corpus.meta = meta;
  if (corpus.meta.label_names.empty())
    for (std::size_t k = 0; k < M; ++k)
      corpus.meta.label_names.push_back(detail::msg("class", k));

  Rng rng(derive_seed(seed, 0xDA7A));
  auto planted = [&](std::size_t dim, int label) {
    std::vector<double> v(dim);
    for (auto& x : v) x = normal01(rng);
    const std::size_t block = dim / M;
    const std::size_t lo = static_cast<std::size_t>(label) * block;
    for (std::size_t i = lo; i < lo + block; ++i) v[i] += mu;
    return v;
  };

  for (std::size_t c = 0; c < n_conversations; ++c) {
    Conversation conv;
    conv.id = detail::msg("synth", c);
    const std::size_t len = static_cast<std::size_t>(
        uniform_int(rng, static_cast<long>(len_lo), static_cast<long>(len_hi)));
    for (std::size_t i = 0; i < len; ++i) {
      Utterance u;
      u.speaker = static_cast<int>(uniform_below(rng, meta.num_speakers));
      u.label = static_cast<int>(uniform_below(rng, M));
      u.audio = planted(meta.d_a, u.label);
      u.visual = planted(meta.d_v, u.label);
      const std::size_t tokens = static_cast<std::size_t>(uniform_int(rng, 1, 3));
      for (std::size_t t = 0; t < tokens; ++t)
        u.text.push_back(planted(meta.d_l, u.label));
      conv.utterances.push_back(std::move(u));
    }
    corpus.conversations.push_back(std::move(conv));
  }
  return corpus;
}

// Raw per-utterance feature vector [audio | visual | mean of text rows],
// the view of the data a model-free classifier gets.
inline std::vector<double> pooled_features(const Utterance& u) {
  std::vector<double> out;
  out.reserve(u.audio.size() + u.visual.size() + u.text[0].size());
  out.insert(out.end(), u.audio.begin(), u.audio.end());
  out.insert(out.end(), u.visual.begin(), u.visual.end());
  const std::size_t d = u.text[0].size();
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (const auto& row : u.text) s += row[j];
    out.push_back(s / static_cast<double>(u.text.size()));
  }
  return out;
}

// Nearest-centroid classifier on raw pooled features. Used to certify that
// a synthetic corpus carries enough signal to be learnable at all before any
// model training is attempted.
inline double centroid_oracle_accuracy(const Corpus& corpus) {
  const std::size_t M = corpus.meta.num_classes;
  std::vector<std::vector<double>> centroid(M);
  std::vector<std::size_t> count(M, 0);
  for (const auto& conv : corpus.conversations) {
    for (const auto& u : conv.utterances) {
      auto f = pooled_features(u);
      auto& c = centroid[static_cast<std::size_t>(u.label)];
      if (c.empty()) c.assign(f.size(), 0.0);
      for (std::size_t j = 0; j < f.size(); ++j) c[j] += f[j];
      ++count[static_cast<std::size_t>(u.label)];
    }
  }
  for (std::size_t k = 0; k < M; ++k)
    if (count[k])
      for (auto& x : centroid[k]) x /= static_cast<double>(count[k]);

  std::size_t hits = 0, total = 0;
  for (const auto& conv : corpus.conversations) {
    for (const auto& u : conv.utterances) {
      auto f = pooled_features(u);
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t k = 0; k < M; ++k) {
        if (centroid[k].empty()) continue;
        double d2 = 0.0;
        for (std::size_t j = 0; j < f.size(); ++j) {
          const double t = f[j] - centroid[k][j];
          d2 += t * t;
        }
        if (d2 < best) {
          best = d2;
          arg = k;
        }
      }
      hits += (arg == static_cast<std::size_t>(u.label));
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

struct SplitCorpus {
  Corpus train;
  Corpus valid;
  Corpus test;
};

// Splits whole conversations, never utterances. Boundary counts follow the
// cumulative rounded ratios so e.g. 10 conversations at (0.8, 0.1, 0.1)
// give exactly 8/1/1.
inline SplitCorpus split(const Corpus& corpus, double r_train, double r_valid,
                         double r_test, std::uint64_t seed) {
  require(std::abs(r_train + r_valid + r_test - 1.0) <= 1e-9,
          detail::msg("split: ratios sum to ", r_train + r_valid + r_test,
                      ", expected 1"));
  require(r_train >= 0 && r_valid >= 0 && r_test >= 0,
          "split: ratios must be nonnegative");
  const std::size_t n = corpus.conversations.size();
  Rng rng(derive_seed(seed, 0x59717));
  auto idx = shuffled_indices(n, rng);
  const auto b1 = static_cast<std::size_t>(
      std::llround(r_train * static_cast<double>(n)));
  const auto b2 = static_cast<std::size_t>(
      std::llround((r_train + r_valid) * static_cast<double>(n)));
  SplitCorpus out;
  out.train.meta = out.valid.meta = out.test.meta = corpus.meta;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& conv = corpus.conversations[idx[i]];
    if (i < b1)
      out.train.conversations.push_back(conv);
    else if (i < b2)
      out.valid.conversations.push_back(conv);
    else
      out.test.conversations.push_back(conv);
  }
  return out;
}

}  // namespace mmerc
