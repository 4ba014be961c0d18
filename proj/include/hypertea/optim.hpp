#pragma once

#include <cstdint>
#include <vector>

#include "hypertea/nn.hpp"
#include "hypertea/tensor.hpp"

namespace hypertea {

template <typename T>
struct SgdConfig {
  T lr = T(0.01);
  T momentum = T(0.937);
  T weight_decay = T(5e-4);
};

// SGD with momentum and coupled weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
template <typename T>
class Sgd {
 public:
  Sgd(ParamRegistry<T> registry, SgdConfig<T> config)
      : registry_(std::move(registry)), config_(config) {
    velocity_.reserve(registry_.params.size());
    for (const auto& [name, p] : registry_.params) {
      velocity_.emplace_back(p.numel(), T(0));
    }
  }

  void zero_grad() {
    for (const auto& [name, p] : registry_.params) p.zero_grad();
  }

  void step(T lr) {
    for (size_t i = 0; i < registry_.params.size(); ++i) {
      auto& p = registry_.params[i].second;
      auto& v = velocity_[i];
      auto& value = p.data();
      const auto& g = p.grad();
      for (size_t j = 0; j < v.size(); ++j) {
        T grad_j = g.empty() ? T(0) : g[j];
        v[j] = config_.momentum * v[j] + grad_j + config_.weight_decay * value[j];
        value[j] -= lr * v[j];
      }
    }
  }

  void step() { step(config_.lr); }

  const SgdConfig<T>& config() const { return config_; }
  const ParamRegistry<T>& registry() const { return registry_; }
  std::vector<std::vector<T>>& velocity() { return velocity_; }
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }

 private:
  ParamRegistry<T> registry_;
  SgdConfig<T> config_;
  std::vector<std::vector<T>> velocity_;  // one buffer per parameter, same order
};

// Piecewise-constant schedule: the base rate drops by 10x after 80% of the
// planned steps.
template <typename T>
T lr_at_step(T base_lr, int64_t step, int64_t total_steps) {
  if (total_steps > 0 && step >= (total_steps * 8) / 10) return base_lr * T(0.1);
  return base_lr;
}

}  // namespace hypertea
