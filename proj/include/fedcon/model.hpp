#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "fedcon/layers.hpp"
#include "fedcon/parameters.hpp"
#include "fedcon/rng.hpp"

namespace fedcon {

/// Which layer stack to build. `toy` is a small fully connected network used by
/// the finite-difference suites.
enum class ArchFamily { mnist, cifar, toy };

struct ArchitectureSpec {
  ArchFamily family = ArchFamily::mnist;
  bool dropout_enabled = true;
  // toy family only
  std::size_t toy_input = 4;
  std::size_t toy_hidden = 3;
  std::size_t toy_classes = 2;
  bool toy_linear_projector = false;  // single linear layer instead of linear-bn-relu-linear
};

struct Architecture {
  ArchitectureSpec spec;
  Shape input_shape;  // per-example shape without the batch dimension
  std::size_t repr_dim = 0;
  std::size_t num_classes = 0;
  LayerStack backbone;
  LayerStack head;       // produces logits; softmax is applied by forward_head
  LayerStack projector;

  const LayerStack& stack(Role role) const {
    switch (role) {
      case Role::backbone: return backbone;
      case Role::head: return head;
      case Role::projector: return projector;
    }
    return backbone;
  }
};

inline LayerStack make_projector_stack(std::size_t d, bool linear_only) {
  if (linear_only) return {LayerSpec::fc("projector.fc1", d, d)};
  return {LayerSpec::fc("projector.fc1", d, d), LayerSpec::bn("projector.bn1", d), LayerSpec::relu(),
          LayerSpec::fc("projector.fc2", d, d)};
}

inline Architecture build_architecture(const ArchitectureSpec& spec) {
  Architecture a;
  a.spec = spec;
  switch (spec.family) {
    case ArchFamily::mnist:
      a.input_shape = {1, 28, 28};
      a.repr_dim = 320;
      a.num_classes = 10;
      a.backbone = {LayerSpec::conv("backbone.conv1", 1, 10, 5), LayerSpec::pool(), LayerSpec::relu(),
                    LayerSpec::conv("backbone.conv2", 10, 20, 5), LayerSpec::pool(), LayerSpec::relu(),
                    LayerSpec::flatten()};
      a.head = {LayerSpec::fc("head.fc1", 320, 50), LayerSpec::relu(), LayerSpec::fc("head.fc2", 50, 10)};
      a.projector = make_projector_stack(320, false);
      break;
    case ArchFamily::cifar: {
      a.input_shape = {3, 32, 32};
      a.repr_dim = 4096;
      a.num_classes = 10;
      auto& b = a.backbone;
      b = {LayerSpec::conv("backbone.conv1", 3, 32, 3, 1),    LayerSpec::bn("backbone.bn1", 32),
           LayerSpec::relu(),
           LayerSpec::conv("backbone.conv2", 32, 64, 3, 1),   LayerSpec::relu(), LayerSpec::pool(),
           LayerSpec::conv("backbone.conv3", 64, 128, 3, 1),  LayerSpec::bn("backbone.bn3", 128),
           LayerSpec::relu(),
           LayerSpec::conv("backbone.conv4", 128, 128, 3, 1), LayerSpec::relu(), LayerSpec::pool()};
      if (spec.dropout_enabled) b.push_back(LayerSpec::dropout(0.05));
      b.insert(b.end(), {LayerSpec::conv("backbone.conv5", 128, 256, 3, 1), LayerSpec::bn("backbone.bn5", 256),
                         LayerSpec::relu(), LayerSpec::conv("backbone.conv6", 256, 256, 3, 1), LayerSpec::relu(),
                         LayerSpec::pool(), LayerSpec::flatten()});
      auto& h = a.head;
      h = {LayerSpec::fc("head.fc1", 4096, 1024), LayerSpec::relu()};
      if (spec.dropout_enabled) h.push_back(LayerSpec::dropout(0.1));
      h.insert(h.end(), {LayerSpec::fc("head.fc2", 1024, 512), LayerSpec::relu()});
      if (spec.dropout_enabled) h.push_back(LayerSpec::dropout(0.1));
      h.push_back(LayerSpec::fc("head.fc3", 512, 10));
      a.projector = make_projector_stack(4096, false);
      break;
    }
    case ArchFamily::toy:
      a.input_shape = {spec.toy_input};
      a.repr_dim = spec.toy_hidden;
      a.num_classes = spec.toy_classes;
      a.backbone = {LayerSpec::fc("backbone.fc1", spec.toy_input, spec.toy_hidden), LayerSpec::relu()};
      a.head = {LayerSpec::fc("head.fc1", spec.toy_hidden, spec.toy_classes)};
      a.projector = make_projector_stack(spec.toy_hidden, spec.toy_linear_projector);
      break;
  }
  return a;
}

/// Adds zero-valued entries for every parameter of `stack` under `role`.
template <typename T>
void add_stack_parameters(ParameterSet<T>& params, const LayerStack& stack, Role role) {
  for (const auto& layer : stack) {
    switch (layer.kind) {
      case LayerKind::conv2d:
        params.add(layer.name + ".weight", Tensor<T>({layer.out, layer.in, layer.kernel, layer.kernel}), role);
        params.add(layer.name + ".bias", Tensor<T>({layer.out}), role);
        break;
      case LayerKind::linear:
        params.add(layer.name + ".weight", Tensor<T>({layer.out, layer.in}), role);
        params.add(layer.name + ".bias", Tensor<T>({layer.out}), role);
        break;
      case LayerKind::batch_norm:
        params.add(layer.name + ".weight", Tensor<T>({layer.in}, T{1}), role);
        params.add(layer.name + ".bias", Tensor<T>({layer.in}), role);
        params.add(layer.name + ".running_mean", Tensor<T>({layer.in}), role, EntryKind::buffer);
        params.add(layer.name + ".running_var", Tensor<T>({layer.in}, T{1}), role, EntryKind::buffer);
        break;
      default: break;
    }
  }
}

/// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases;
/// batch-norm starts as the identity with unit running variance.
template <typename T>
ParameterSet<T> init_parameters(const LayerStack& stack, Role role, std::uint64_t seed) {
  ParameterSet<T> params;
  add_stack_parameters(params, stack, role);
  Rng rng(seed);
  for (const auto& layer : stack) {
    if (layer.kind != LayerKind::conv2d && layer.kind != LayerKind::linear) continue;
    auto& w = params.at(layer.name + ".weight");
    const std::size_t fan_in = w.size() / layer.out;
    const double bound = 1.0 / std::sqrt(double(fan_in));
    for (auto& v : w.values()) v = T(uniform(rng, -bound, bound));
  }
  return params;
}

/// Online (theta) and target (xi) parameters plus the optimizer step counter.
template <typename T>
struct ContrastiveState {
  ParameterSet<T> online;
  ParameterSet<T> target;
  std::uint64_t step = 0;

  friend bool operator==(const ContrastiveState&, const ContrastiveState&) = default;
};

/// Server-side state: backbone + head online net, target an exact copy.
template <typename T>
ContrastiveState<T> init_state(const Architecture& arch, std::uint64_t seed) {
  ContrastiveState<T> s;
  s.online = init_parameters<T>(arch.backbone, Role::backbone, derive_seed(seed, {stream::init, 0}));
  s.online = stitch(s.online, init_parameters<T>(arch.head, Role::head, derive_seed(seed, {stream::init, 1})));
  s.target = s.online;
  s.step = 0;
  return s;
}

/// Fresh client projector seeded by (global seed, client id).
template <typename T>
ParameterSet<T> init_projector(const Architecture& arch, std::uint64_t seed, std::uint64_t client_id) {
  return init_parameters<T>(arch.projector, Role::projector, derive_seed(seed, {stream::projector, client_id}));
}

namespace detail {
inline void check_input(const Architecture& arch, const Shape& shape) {
  if (shape.size() != arch.input_shape.size() + 1 ||
      !std::equal(arch.input_shape.begin(), arch.input_shape.end(), shape.begin() + 1))
    throw DimensionError("input batch shape " + shape_string(shape) + " does not match model input " +
                         shape_string(arch.input_shape));
}
inline void check_repr(const Architecture& arch, const Shape& shape) {
  if (shape.size() != 2 || shape[1] != arch.repr_dim)
    throw DimensionError("representation shape " + shape_string(shape) + " does not match backbone output dim " +
                         std::to_string(arch.repr_dim));
}
}  // namespace detail

/// Representation y = b(x), shape (N, repr_dim).
template <typename T>
Tensor<T> forward_backbone(const Architecture& arch, const ParameterSet<T>& params, const Tensor<T>& batch,
                           const ForwardMode& mode, Tape<T>* tape = nullptr,
                           std::vector<BatchNormUpdate<T>>* bn_updates = nullptr) {
  detail::check_input(arch, batch.shape());
  return forward(arch.backbone, params, batch, mode, tape, bn_updates);
}

template <typename T>
Tensor<T> head_logits(const Architecture& arch, const ParameterSet<T>& params, const Tensor<T>& y,
                      const ForwardMode& mode, Tape<T>* tape = nullptr) {
  detail::check_repr(arch, y.shape());
  return forward(arch.head, params, y, mode, tape);
}

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> out(logits.shape());
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const T* l = logits.data() + i * c;
    T* p = out.data() + i * c;
    const T mx = *std::max_element(l, l + c);
    double sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += (p[j] = T(std::exp(double(l[j] - mx))));
    for (std::size_t j = 0; j < c; ++j) p[j] = T(p[j] / sum);
  }
  return out;
}

/// Backpropagates dL/dp through p = softmax(l): dl = p * (g - <g, p>).
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs) {
  Tensor<T> out(probs.shape());
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const T* p = probs.data() + i * c;
    const T* g = grad_probs.data() + i * c;
    double dot = 0;
    for (std::size_t j = 0; j < c; ++j) dot += double(g[j]) * p[j];
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = T(p[j] * (g[j] - dot));
  }
  return out;
}

/// Class probabilities c = softmax(f(y)), shape (N, num_classes).
template <typename T>
Tensor<T> forward_head(const Architecture& arch, const ParameterSet<T>& params, const Tensor<T>& y,
                       const ForwardMode& mode, Tape<T>* tape = nullptr) {
  return softmax_rows(head_logits(arch, params, y, mode, tape));
}

/// Projection z = p(y), shape (N, repr_dim).
template <typename T>
Tensor<T> forward_projector(const Architecture& arch, const ParameterSet<T>& params, const Tensor<T>& y,
                            const ForwardMode& mode, Tape<T>* tape = nullptr,
                            std::vector<BatchNormUpdate<T>>* bn_updates = nullptr) {
  detail::check_repr(arch, y.shape());
  return forward(arch.projector, params, y, mode, tape, bn_updates);
}

/// xi <- decay * xi + (1 - decay) * theta for every target entry; the online set
/// must contain each target entry with the same shape and role.
template <typename T>
void ema_update(ContrastiveState<T>& state, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw ParameterError("ema decay must lie in [0, 1]");
  const T d = T(decay);
  const T rest = T(1.0 - decay);
  for (auto& [name, e] : state.target) {
    if (!state.online.contains(name)) throw ParameterError("ema: online net lacks '" + name + "'");
    const auto& o = state.online.entry(name);
    if (o.value.shape() != e.value.shape() || o.role != e.role)
      throw ParameterError("ema: incompatible entry '" + name + "'");
    T* x = e.value.data();
    const T* th = o.value.data();
    for (std::size_t i = 0; i < e.value.size(); ++i) x[i] = d * x[i] + rest * th[i];
  }
}

/// Ramp-up: min(upper, 1 - 1/(step + 1)).
inline double ema_decay_schedule(std::uint64_t step, double upper) {
  return std::min(upper, 1.0 - 1.0 / (double(step) + 1.0));
}

}  // namespace fedcon
