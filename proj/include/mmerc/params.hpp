#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mmerc/common.hpp"
#include "mmerc/tensor.hpp"

namespace mmerc {

// Registry of named trainable tensors. Paths are dotted, e.g.
// "pcm.l_to_a.layer0.Wq"; the map is ordered so iteration, checkpointing and
// seeded initialization all see parameters in one canonical order.
class ParamStore {
 public:
  // Glorot-uniform weight: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
  Tensor& weight(const std::string& path, std::size_t fan_in,
                 std::size_t fan_out, Rng& rng) {
    auto it = params_.find(path);
    if (it != params_.end()) return it->second;
    const double bound =
        std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> d(fan_in * fan_out);
    for (auto& x : d) x = uniform_in(rng, -bound, bound);
    Tensor t = Tensor::from({fan_in, fan_out}, std::move(d));
    t.set_requires_grad(true);
    return params_.emplace(path, std::move(t)).first->second;
  }

  Tensor& zeros(const std::string& path, Shape shape) {
    auto it = params_.find(path);
    if (it != params_.end()) return it->second;
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad(true);
    return params_.emplace(path, std::move(t)).first->second;
  }

  Tensor& ones(const std::string& path, Shape shape) {
    auto it = params_.find(path);
    if (it != params_.end()) return it->second;
    Tensor t = Tensor::full(std::move(shape), 1.0);
    t.set_requires_grad(true);
    return params_.emplace(path, std::move(t)).first->second;
  }

  Tensor& normal(const std::string& path, Shape shape, Rng& rng,
                 double stddev) {
    auto it = params_.find(path);
    if (it != params_.end()) return it->second;
    Tensor t = Tensor::randn(std::move(shape), rng, stddev);
    t.set_requires_grad(true);
    return params_.emplace(path, std::move(t)).first->second;
  }

  bool contains(const std::string& path) const {
    return params_.count(path) != 0;
  }

  Tensor& at(const std::string& path) {
    auto it = params_.find(path);
    require(it != params_.end(),
            detail::msg("param store: no parameter named '", path, "'"));
    return it->second;
  }

  const Tensor& at(const std::string& path) const {
    auto it = params_.find(path);
    require(it != params_.end(),
            detail::msg("param store: no parameter named '", path, "'"));
    return it->second;
  }

  std::size_t size() const { return params_.size(); }

  std::size_t param_count(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (const auto& [path, t] : params_)
      if (path.rfind(prefix, 0) == 0) n += t.size();
    return n;
  }

  void zero_grads() {
    for (auto& [path, t] : params_) t.zero_grad();
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace mmerc
