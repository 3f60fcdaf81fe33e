#pragma once

#include <string_view>

#include "fedcon/parameters.hpp"

namespace fedcon {

enum class OptimizerScheme { sgd, sgd_momentum };

inline std::string_view scheme_name(OptimizerScheme s) {
  return s == OptimizerScheme::sgd ? "sgd" : "sgd_momentum";
}

struct OptimizerConfig {
  OptimizerScheme scheme = OptimizerScheme::sgd_momentum;
  double lr = 0.01;
  double momentum = 0.9;
};

/// SGD with optional heavy-ball momentum: v <- m v + g; w <- w - lr v.
/// Velocity buffers are created lazily per weight entry; buffers are skipped.
template <typename T>
class Optimizer {
public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  const OptimizerConfig& config() const noexcept { return config_; }
  const ParameterSet<T>& velocity() const noexcept { return velocity_; }
  ParameterSet<T>& velocity() noexcept { return velocity_; }

  void step(ParameterSet<T>& params, const ParameterSet<T>& grads) {
    const T lr = T(config_.lr);
    const bool momentum = config_.scheme == OptimizerScheme::sgd_momentum;
    const T m = T(config_.momentum);
    for (auto& [name, e] : params) {
      if (e.kind != EntryKind::weight) continue;
      const auto& g = grads.at(name);
      if (g.shape() != e.value.shape()) throw ParameterError("optimizer: gradient shape mismatch for '" + name + "'");
      T* w = e.value.data();
      if (!momentum) {
        for (std::size_t i = 0; i < g.size(); ++i) w[i] -= lr * g[i];
        continue;
      }
      if (!velocity_.contains(name)) velocity_.add(name, Tensor<T>(e.value.shape()), e.role);
      T* v = velocity_.at(name).data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        v[i] = m * v[i] + g[i];
        w[i] -= lr * v[i];
      }
    }
  }

  void reset() { velocity_ = {}; }

private:
  OptimizerConfig config_;
  ParameterSet<T> velocity_;
};

}  // namespace fedcon
