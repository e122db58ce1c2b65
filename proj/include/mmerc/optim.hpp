#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "mmerc/common.hpp"
#include "mmerc/tensor.hpp"

namespace mmerc {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter moment buffers. `step` counts how many updates this
// parameter has received; bias correction uses it, so a parameter that sits
// out early batches still warms up correctly.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

inline void adam_step(std::span<double> param, std::span<const double> grad,
                      AdamState& state, const AdamConfig& cfg) {
  require(param.size() == grad.size(),
          detail::msg("adam_step: param size ", param.size(),
                      " != grad size ", grad.size()));
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  require(state.m.size() == param.size(),
          "adam_step: state buffers sized for a different parameter");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

inline void adam_step(std::vector<double>& param,
                      const std::vector<double>& grad, AdamState& state,
                      const AdamConfig& cfg) {
  adam_step(std::span<double>(param), std::span<const double>(grad), state,
            cfg);
}

// Keeps one AdamState per parameter tensor, keyed by the tensor's node
// identity, and applies updates straight into the leaf values. A parameter
// whose gradient buffer is still empty (nothing flowed to it) is skipped,
// which also keeps its step count untouched.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  void update(Tensor& param) {
    auto g = param.grad_span();
    if (g.empty()) return;
    auto& st = states_[param.node().get()];
    adam_step(param.mutable_data(), g, st, cfg_);
  }

 private:
  AdamConfig cfg_;
  std::unordered_map<const TensorNode*, AdamState> states_;
};

}  // namespace mmerc
