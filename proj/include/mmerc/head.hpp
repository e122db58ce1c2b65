#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mmerc/common.hpp"
#include "mmerc/params.hpp"
#include "mmerc/tensor.hpp"

namespace mmerc {

struct HeadConfig {
  std::size_t d_fused = 0;   // width of the fused per-utterance feature
  std::size_t d_hidden = 0;  // 0 picks d_fused / 2, minimum 1
  std::size_t num_classes = 6;

  std::size_t hidden_width() const {
    if (d_hidden) return d_hidden;
    return d_fused / 2 ? d_fused / 2 : 1;
  }

  void validate() const {
    require(d_fused > 0, "head config: fused width must be positive");
    require(num_classes >= 2, "head config: need at least two classes");
  }
};

inline void register_head_params(ParamStore& store, const HeadConfig& cfg,
                                 Rng& rng) {
  store.weight("head.W0", cfg.d_fused, cfg.hidden_width(), rng);
  store.zeros("head.b0", {cfg.hidden_width()});
  store.weight("head.W1", cfg.hidden_width(), cfg.num_classes, rng);
  store.zeros("head.b1", {cfg.num_classes});
}

// Feature-wise concatenation of the per-utterance representations in their
// fixed order (local-context blocks first, then the cross-modal pairs).
inline Tensor fuse(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "fuse: nothing to fuse");
  const std::size_t n = parts[0].rows();
  for (const auto& p : parts)
    require(p.rank() == 2 && p.rows() == n,
            detail::msg("fuse: part ", shape_str(p.shape()),
                        " does not have ", n, " rows"));
  return parts.size() == 1 ? parts[0] : concat(parts, 1);
}

inline Tensor classifier_logits(ParamStore& store, const Tensor& fused) {
  Tensor v = relu(add(matmul(fused, store.at("head.W0")),
                      store.at("head.b0")));
  return add(matmul(v, store.at("head.W1")), store.at("head.b1"));
}

// Row argmax with ties resolved toward the lowest class index.
inline std::vector<int> argmax_rows(const Tensor& t) {
  require(t.rank() == 2, "argmax_rows: expects a 2-d tensor");
  std::vector<int> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < t.cols(); ++j)
      if (t.at(i, j) > t.at(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

struct Classification {
  Tensor logits;
  Tensor probabilities;
  std::vector<int> predictions;
};

inline Classification classify(ParamStore& store, const Tensor& fused) {
  Classification c;
  c.logits = classifier_logits(store, fused);
  c.probabilities = softmax(c.logits, 1);
  c.predictions = argmax_rows(c.probabilities);
  return c;
}

// Mean negative log-likelihood, computed from the logits so huge confident
// scores cannot overflow the probabilities first.
inline Tensor objective(ParamStore& store, const Tensor& fused,
                        const std::vector<int>& labels) {
  return cross_entropy(classifier_logits(store, fused), labels);
}

}  // namespace mmerc
