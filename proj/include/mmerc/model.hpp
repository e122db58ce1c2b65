#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mmerc/config.hpp"
#include "mmerc/crossmodal.hpp"
#include "mmerc/data.hpp"
#include "mmerc/encoders.hpp"
#include "mmerc/graph.hpp"
#include "mmerc/graph_net.hpp"
#include "mmerc/head.hpp"
#include "mmerc/params.hpp"
#include "mmerc/probe.hpp"

namespace mmerc {

// The full per-conversation pipeline: unimodal encoders with speaker
// vectors, local-context graph features, pairwise cross-modal features, and
// the fused classifier. Ablation flags and the modality subset reshape which
// parts exist; parameters for removed parts are never created.
class Model {
 public:
  Model(RunConfig cfg, CorpusMeta meta)
      : cfg_(std::move(cfg)), meta_(std::move(meta)) {
    cfg_.validate();
    enabled_ = cfg_.enabled_modalities();
    require(!enabled_[2] || meta_.d_l % cfg_.text_heads == 0,
            detail::msg("model: text width ", meta_.d_l,
                        " must divide evenly into ", cfg_.text_heads,
                        " heads"));
    require(fused_width() > 0,
            "model: the active flags leave nothing to fuse; at least one of "
            "the graph and cross-modal branches must survive");

    enc_cfg_ = EncoderConfig{meta_.d_a,          meta_.d_v, meta_.d_l,
                             cfg_.d_h,           cfg_.text_heads,
                             0,                  meta_.num_speakers,
                             cfg_.eta};
    if (!enabled_[2]) enc_cfg_.text_heads = 1;  // unused, keep validate happy
    enc_cfg_.validate();
    gnn_cfg_ = RtgcnConfig{cfg_.d_h, cfg_.d_h1, cfg_.d_h2, cfg_.d_alpha,
                           cfg_.heads_gt};
    gnn_cfg_.validate();
    pcm_cfg_ = PcmConfig{cfg_.d_h,      cfg_.d_h, cfg_.d_h, 0,
                         cfg_.heads_pcm, cfg_.pcm_depth, cfg_.dropout};
    pcm_cfg_.validate();
    head_cfg_ = HeadConfig{fused_width(), cfg_.d_hidden, meta_.num_classes};
    head_cfg_.validate();

    register_params();
  }

  const RunConfig& config() const { return cfg_; }
  const CorpusMeta& meta() const { return meta_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const std::array<bool, 3>& enabled() const { return enabled_; }

  bool uses_rtgcn() const { return !cfg_.no_rtgcn; }
  bool uses_pcm() const { return !cfg_.no_pcm && enabled_count() >= 2; }
  std::size_t enabled_count() const {
    return std::size_t(enabled_[0]) + enabled_[1] + enabled_[2];
  }
  std::size_t pair_count() const {
    if (!uses_pcm()) return 0;
    return enabled_count() == 3 ? 3 : 1;
  }

  std::size_t fused_width() const {
    std::size_t w = 0;
    if (!cfg_.no_rtgcn) w += enabled_count() * cfg_.heads_gt * cfg_.d_h2;
    if (!cfg_.no_pcm && enabled_count() >= 2)
      w += (enabled_count() == 3 ? 3 : 1) * 2 * cfg_.d_h;
    return w;
  }

  GraphOptions graph_options() const {
    GraphOptions opts;
    opts.multimodal = !cfg_.no_rmulti;
    opts.temporal = !cfg_.no_rtemp;
    opts.strict_window = cfg_.strict_window;
    opts.modalities = enabled_;
    return opts;
  }

  // Graph structure depends only on the conversation length, so one build
  // per length serves every pass.
  const GraphTensors& graph_for(std::size_t n) {
    auto it = graph_cache_.find(n);
    if (it == graph_cache_.end())
      it = graph_cache_
               .emplace(n, graph_tensors(build_graph(n, cfg_.past,
                                                     cfg_.future,
                                                     graph_options())))
               .first;
    return it->second;
  }

  // Per-utterance class scores [N x M]. `rng` feeds dropout and is only
  // consumed when training.
  Tensor logits(const Conversation& conv, bool training, Rng& rng,
                AttnProbe* probe = nullptr) {
    const std::size_t n = conv.utterances.size();
    require(n >= 1, detail::msg("model: conversation '", conv.id,
                                "' has no utterances"));
    std::vector<int> speakers(n);
    for (std::size_t i = 0; i < n; ++i)
      speakers[i] = conv.utterances[i].speaker;

    std::array<Tensor, 3> x{};
    if (enabled_[0])
      x[0] = add_speaker(store_, enc_cfg_,
                         encode_av(store_, "enc.audio",
                                   modality_input(conv, Modality::audio)),
                         speakers);
    if (enabled_[1])
      x[1] = add_speaker(store_, enc_cfg_,
                         encode_av(store_, "enc.visual",
                                   modality_input(conv, Modality::visual)),
                         speakers);
    if (enabled_[2])
      x[2] = add_speaker(
          store_, enc_cfg_,
          encode_text(store_, enc_cfg_, modality_input(conv, Modality::text)),
          speakers);

    std::vector<Tensor> parts;
    if (uses_rtgcn()) {
      std::vector<Tensor> blocks;
      for (std::size_t m = 0; m < 3; ++m)
        if (enabled_[m]) blocks.push_back(x[m]);
      auto g = rt_gcn_forward(store_, gnn_cfg_, graph_for(n), blocks, probe);
      parts.insert(parts.end(), g.begin(), g.end());
    }
    if (uses_pcm()) {
      auto z = pcm_forward(store_, pcm_cfg_, x, enabled_, training, rng,
                           probe);
      parts.insert(parts.end(), z.pairs.begin(), z.pairs.end());
    }
    return classifier_logits(store_, fuse(parts));
  }

  // Raw feature rows for one modality; text token rows are mean-pooled into
  // a single row per utterance.
  Tensor modality_input(const Conversation& conv, Modality m) const {
    const std::size_t n = conv.utterances.size();
    const std::size_t width =
        m == Modality::audio ? meta_.d_a
                             : (m == Modality::visual ? meta_.d_v : meta_.d_l);
    std::vector<double> data(n * width);
    for (std::size_t i = 0; i < n; ++i) {
      const Utterance& u = conv.utterances[i];
      if (m == Modality::audio) {
        require(u.audio.size() == width,
                detail::msg("model: conversation '", conv.id, "' utterance ",
                            i, ": audio width ", u.audio.size(), " != ",
                            width));
        std::copy(u.audio.begin(), u.audio.end(), data.begin() + i * width);
      } else if (m == Modality::visual) {
        require(u.visual.size() == width,
                detail::msg("model: conversation '", conv.id, "' utterance ",
                            i, ": visual width ", u.visual.size(), " != ",
                            width));
        std::copy(u.visual.begin(), u.visual.end(), data.begin() + i * width);
      } else {
        require(!u.text.empty(),
                detail::msg("model: conversation '", conv.id, "' utterance ",
                            i, ": text has no token rows"));
        for (const auto& row : u.text) {
          require(row.size() == width,
                  detail::msg("model: conversation '", conv.id,
                              "' utterance ", i, ": text row width ",
                              row.size(), " != ", width));
          for (std::size_t j = 0; j < width; ++j)
            data[i * width + j] += row[j];
        }
        const double inv = 1.0 / static_cast<double>(u.text.size());
        for (std::size_t j = 0; j < width; ++j) data[i * width + j] *= inv;
      }
    }
    return Tensor::from({n, width}, std::move(data));
  }

 private:
  // Each parameter group draws from its own seed stream, so e.g. disabling
  // the cross-modal branch does not shift the graph weights.
  void register_params() {
    if (enabled_[2]) {
      Rng rng(derive_seed(cfg_.seed, 1));
      register_text_encoder_params(store_, enc_cfg_, rng);
    }
    if (enabled_[0]) {
      Rng rng(derive_seed(cfg_.seed, 2));
      register_av_encoder_params(store_, "enc.audio", meta_.d_a, cfg_.d_h,
                                 rng);
    }
    if (enabled_[1]) {
      Rng rng(derive_seed(cfg_.seed, 3));
      register_av_encoder_params(store_, "enc.visual", meta_.d_v, cfg_.d_h,
                                 rng);
    }
    {
      Rng rng(derive_seed(cfg_.seed, 4));
      register_speaker_params(store_, enc_cfg_, rng);
    }
    if (uses_rtgcn()) {
      Rng rng(derive_seed(cfg_.seed, 5));
      register_rtgcn_params(store_, gnn_cfg_, rng, graph_options());
    }
    if (uses_pcm()) {
      Rng rng(derive_seed(cfg_.seed, 6));
      register_pcm_params(store_, pcm_cfg_, enabled_, rng);
    }
    {
      Rng rng(derive_seed(cfg_.seed, 7));
      register_head_params(store_, head_cfg_, rng);
    }
  }

  RunConfig cfg_;
  CorpusMeta meta_;
  std::array<bool, 3> enabled_{};
  EncoderConfig enc_cfg_;
  RtgcnConfig gnn_cfg_;
  PcmConfig pcm_cfg_;
  HeadConfig head_cfg_;
  ParamStore store_;
  std::map<std::size_t, GraphTensors> graph_cache_;
};

inline constexpr char kCheckpointMagic[9] = "MMERCKP1";

// Layout: 8-byte magic, little JSON header (config, corpus meta, parameter
// paths and shapes in store order) preceded by its uint64 byte length, then
// the raw host-endian doubles of every parameter in that same order.
inline std::string serialize_checkpoint(const Model& model) {
  nlohmann::json header{{"config", config_to_json(model.config())},
                        {"meta", detail::meta_to_json(model.meta())},
                        {"params", nlohmann::json::array()}};
  for (const auto& [path, t] : model.params())
    header["params"].push_back(
        nlohmann::json{{"path", path}, {"shape", t.shape()}});
  const std::string h = header.dump();
  std::string out;
  out.append(kCheckpointMagic, 8);
  const std::uint64_t len = h.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += h;
  for (const auto& [path, t] : model.params()) {
    const auto d = t.data();
    out.append(reinterpret_cast<const char*>(d.data()),
               d.size() * sizeof(double));
  }
  return out;
}

inline void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), detail::msg("cannot open '", path, "' for writing"));
  const std::string bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), detail::msg("write to '", path, "' failed"));
}

inline Model deserialize_checkpoint(const std::string& bytes,
                                    const std::string& name) {
  const std::string where = detail::msg("checkpoint '", name, "'");
  require(bytes.size() >= 16 && bytes.compare(0, 8, kCheckpointMagic, 8) == 0,
          detail::msg(where, ": not a checkpoint file"));
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  require(16 + len <= bytes.size(),
          detail::msg(where, ": truncated header"));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    fail(detail::msg(where, ": malformed header (", e.what(), ")"));
  }
  Model model(config_from_json(header.at("config")),
              detail::meta_from_json(header.at("meta"), where));
  std::size_t off = 16 + len;
  std::size_t records = 0;
  for (const auto& p : header.at("params")) {
    const std::string path = p.at("path").get<std::string>();
    const Shape shape = p.at("shape").get<Shape>();
    require(model.params().contains(path),
            detail::msg(where, ": unexpected parameter '", path, "'"));
    Tensor& t = model.params().at(path);
    require(t.shape() == shape,
            detail::msg(where, ": parameter '", path, "' has shape ",
                        shape_str(shape), ", model expects ",
                        shape_str(t.shape())));
    const std::size_t n = t.size() * sizeof(double);
    require(off + n <= bytes.size(),
            detail::msg(where, ": truncated data for '", path, "'"));
    std::memcpy(t.mutable_data().data(), bytes.data() + off, n);
    off += n;
    ++records;
  }
  require(records == model.params().size(),
          detail::msg(where, ": header lists ", records, " parameters, the "
                      "model has ", model.params().size()));
  require(off == bytes.size(), detail::msg(where, ": trailing bytes"));
  return model;
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), detail::msg("cannot open '", path, "' for reading"));
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str(), path);
}

}  // namespace mmerc
