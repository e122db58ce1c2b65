#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mmerc/common.hpp"

namespace mmerc {

enum class Modality : int { audio = 0, visual = 1, text = 2 };

inline char modality_letter(Modality m) {
  switch (m) {
    case Modality::audio: return 'a';
    case Modality::visual: return 'v';
    case Modality::text: return 'l';
  }
  fail("modality_letter: invalid modality");
}

inline Modality modality_from_letter(char c) {
  switch (c) {
    case 'a': return Modality::audio;
    case 'v': return Modality::visual;
    case 'l': return Modality::text;
  }
  fail(detail::msg("modality_from_letter: unknown modality '", c, "'"));
}

// The 15 relation tags: 9 same-utterance cross-modality tags (self-loop tags
// included) followed by past/future same-modality tags. Enum order is the
// canonical relation order used for sorting and parameter naming.
enum class Relation : int {
  a_to_v = 0,
  v_to_a,
  a_to_a,
  v_to_l,
  l_to_v,
  v_to_v,
  l_to_a,
  a_to_l,
  l_to_l,
  past_a,
  past_v,
  past_l,
  future_a,
  future_v,
  future_l,
};

inline constexpr int kNumRelations = 15;
inline constexpr int kNumMultimodalRelations = 9;

inline bool is_multimodal(Relation r) {
  return static_cast<int>(r) < kNumMultimodalRelations;
}

inline bool is_temporal(Relation r) { return !is_multimodal(r); }

// Source/destination modality of a multimodal tag, or the shared modality of
// a temporal tag.
inline Modality relation_src_modality(Relation r) {
  static constexpr Modality kSrc[kNumRelations] = {
      Modality::audio,  Modality::visual, Modality::audio,
      Modality::visual, Modality::text,   Modality::visual,
      Modality::text,   Modality::audio,  Modality::text,
      Modality::audio,  Modality::visual, Modality::text,
      Modality::audio,  Modality::visual, Modality::text,
  };
  return kSrc[static_cast<int>(r)];
}

inline Modality relation_dst_modality(Relation r) {
  static constexpr Modality kDst[kNumRelations] = {
      Modality::visual, Modality::audio,  Modality::audio,
      Modality::text,   Modality::visual, Modality::visual,
      Modality::audio,  Modality::text,   Modality::text,
      Modality::audio,  Modality::visual, Modality::text,
      Modality::audio,  Modality::visual, Modality::text,
  };
  return kDst[static_cast<int>(r)];
}

inline std::string relation_name(Relation r) {
  static const char* kNames[kNumRelations] = {
      "a->v", "v->a", "a->a", "v->l", "l->v", "v->v", "l->a", "a->l", "l->l",
      "past_a", "past_v", "past_l", "future_a", "future_v", "future_l",
  };
  return kNames[static_cast<int>(r)];
}

// Identifier-safe form used in parameter paths.
inline std::string relation_key(Relation r) {
  static const char* kKeys[kNumRelations] = {
      "a_to_v", "v_to_a", "a_to_a", "v_to_l", "l_to_v", "v_to_v", "l_to_a",
      "a_to_l", "l_to_l", "past_a", "past_v", "past_l", "future_a",
      "future_v", "future_l",
  };
  return kKeys[static_cast<int>(r)];
}

inline Relation relation_from_name(const std::string& name) {
  for (int r = 0; r < kNumRelations; ++r)
    if (relation_name(static_cast<Relation>(r)) == name)
      return static_cast<Relation>(r);
  fail(detail::msg("relation_from_name: unknown relation '", name, "'"));
}

struct NodeId {
  std::size_t utterance = 0;
  Modality modality = Modality::audio;

  friend bool operator==(const NodeId&, const NodeId&) = default;
  friend auto operator<=>(const NodeId& a, const NodeId& b) {
    return std::tie(a.modality, a.utterance) <=>
           std::tie(b.modality, b.utterance);
  }
};

struct Edge {
  NodeId src;
  NodeId dst;
  Relation rel = Relation::a_to_v;

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct GraphOptions {
  bool multimodal = true;          // same-utterance cross-modality family
  bool temporal = true;            // past/future family
  bool strict_window = false;      // exclusive window bounds (see build_graph)
  std::array<bool, 3> modalities = {true, true, true};  // a, v, l

  std::size_t enabled_count() const {
    std::size_t n = 0;
    for (bool b : modalities) n += b;
    return n;
  }
  bool enabled(Modality m) const {
    return modalities[static_cast<std::size_t>(m)];
  }
};

struct MultimodalGraph {
  std::size_t n_utterances = 0;
  std::size_t past = 0;
  std::size_t future = 0;
  GraphOptions options;
  std::vector<Edge> edges;

  // Rows are grouped by modality block in (a, v, l) order restricted to the
  // enabled set, block b holding utterances 0..N-1 of that modality.
  std::size_t node_count() const {
    return options.enabled_count() * n_utterances;
  }

  std::size_t row_of(const NodeId& id) const {
    require(options.enabled(id.modality),
            detail::msg("row_of: modality '", modality_letter(id.modality),
                        "' is not part of this graph"));
    require(id.utterance < n_utterances,
            detail::msg("row_of: utterance ", id.utterance,
                        " outside conversation of length ", n_utterances));
    std::size_t block = 0;
    for (int m = 0; m < static_cast<int>(id.modality); ++m)
      block += options.modalities[m];
    return block * n_utterances + id.utterance;
  }
};

// Builds the conversation graph for N utterances with window [P, F]:
// every utterance contributes one node per enabled modality; the 9
// multimodal tags connect the modality nodes of the same utterance; the
// temporal tags connect each utterance to the P previous and F following
// same-modality nodes, directed context -> query. With strict_window the
// window bounds are exclusive, shrinking each side by one.
//
// When fewer than two modalities are enabled the multimodal family is empty
// even for self-loop tags, mirroring the model's unimodal configuration.
// The edge list is sorted by (dst, rel, src) so downstream aggregation
// always sums in one fixed order.
inline MultimodalGraph build_graph(std::size_t n, std::size_t past,
                                   std::size_t future,
                                   const GraphOptions& opts = {}) {
  require(n >= 1, "build_graph: need at least one utterance");
  require(opts.enabled_count() >= 1,
          "build_graph: at least one modality must be enabled");
  MultimodalGraph g;
  g.n_utterances = n;
  g.past = past;
  g.future = future;
  g.options = opts;

  const bool emit_multi = opts.multimodal && opts.enabled_count() >= 2;
  for (int ri = 0; ri < kNumRelations; ++ri) {
    const auto rel = static_cast<Relation>(ri);
    const Modality ms = relation_src_modality(rel);
    const Modality md = relation_dst_modality(rel);
    if (!opts.enabled(ms) || !opts.enabled(md)) continue;
    if (is_multimodal(rel)) {
      if (!emit_multi) continue;
      for (std::size_t i = 0; i < n; ++i)
        g.edges.push_back({{i, ms}, {i, md}, rel});
    } else {
      if (!opts.temporal) continue;
      const bool past_rel = static_cast<int>(rel) < 12;
      const std::size_t span =
          past_rel ? past : future;  // window radius on this side
      const std::size_t reach = opts.strict_window
                                    ? (span == 0 ? 0 : span - 1)
                                    : span;
      for (std::size_t i = 0; i < n; ++i) {
        if (past_rel) {
          const std::size_t lo = i > reach ? i - reach : 0;
          for (std::size_t j = lo; j < i; ++j)
            g.edges.push_back({{j, ms}, {i, md}, rel});
        } else {
          const std::size_t hi = std::min(n - 1, i + reach);
          for (std::size_t j = i + 1; j <= hi; ++j)
            g.edges.push_back({{j, ms}, {i, md}, rel});
        }
      }
    }
  }
  std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.dst, a.rel, a.src) < std::tie(b.dst, b.rel, b.src);
  });
  return g;
}

// Whether a relation can ever carry an edge under these options; multimodal
// tags need two live modalities even when they are self-loops.
inline bool relation_possible(Relation r, const GraphOptions& opts) {
  if (is_multimodal(r))
    return opts.multimodal && opts.enabled_count() >= 2 &&
           opts.enabled(relation_src_modality(r)) &&
           opts.enabled(relation_dst_modality(r));
  return opts.temporal && opts.enabled(relation_src_modality(r));
}

inline std::map<Relation, std::size_t> edge_stats(const MultimodalGraph& g) {
  std::map<Relation, std::size_t> counts;
  for (int r = 0; r < kNumRelations; ++r)
    counts[static_cast<Relation>(r)] = 0;
  for (const auto& e : g.edges) counts[e.rel] += 1;
  return counts;
}

// Closed form for the default full-modality graph.
inline std::size_t expected_edge_count(std::size_t n, std::size_t past,
                                       std::size_t future) {
  std::size_t total = 9 * n;
  for (std::size_t i = 0; i < n; ++i) {
    total += 3 * std::min(i, past);
    total += 3 * std::min(n - 1 - i, future);
  }
  return total;
}

inline void export_graph(const MultimodalGraph& g, const std::string& path,
                         const std::string& format) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), detail::msg("cannot open '", path, "' for writing"));
  if (format == "edgelist") {
    for (const auto& e : g.edges)
      out << e.src.utterance << " " << modality_letter(e.src.modality) << " "
          << e.dst.utterance << " " << modality_letter(e.dst.modality) << " "
          << relation_name(e.rel) << "\n";
  } else if (format == "dot") {
    out << "digraph conversation {\n";
    out << "  rankdir=LR;\n";
    static const char* kShape[3] = {"box", "circle", "triangle"};
    for (int m = 0; m < 3; ++m) {
      const auto mod = static_cast<Modality>(m);
      if (!g.options.enabled(mod)) continue;
      for (std::size_t i = 0; i < g.n_utterances; ++i)
        out << "  " << modality_letter(mod) << i << " [shape=" << kShape[m]
            << "];\n";
    }
    for (const auto& e : g.edges)
      out << "  " << modality_letter(e.src.modality) << e.src.utterance
          << " -> " << modality_letter(e.dst.modality) << e.dst.utterance
          << " [label=\"" << relation_name(e.rel) << "\"];\n";
    out << "}\n";
  } else {
    fail(detail::msg("export_graph: unknown format '", format,
                     "', expected edgelist or dot"));
  }
  require(out.good(), detail::msg("write to '", path, "' failed"));
}

inline std::vector<Edge> read_edgelist(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), detail::msg("cannot open '", path, "' for reading"));
  std::vector<Edge> edges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::size_t si, di;
    char sm, dm;
    std::string rel;
    require(static_cast<bool>(is >> si >> sm >> di >> dm >> rel),
            detail::msg(path, ":", line_no, ": malformed edgelist line"));
    edges.push_back({{si, modality_from_letter(sm)},
                     {di, modality_from_letter(dm)},
                     relation_from_name(rel)});
  }
  return edges;
}

}  // namespace mmerc
