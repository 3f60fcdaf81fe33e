#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <sstream>
#include <vector>

#include "fedcon/server.hpp"

namespace fedcon {

/// One client's unlabeled data (shared, never mutated) and the state it keeps
/// between rounds.
template <typename T>
struct ClientShard {
  std::size_t id = 0;
  std::shared_ptr<const std::vector<UnlabeledExample>> data;
  std::optional<ParameterSet<T>> projector;  // created on first participation
  std::optional<ParameterSet<T>> target;     // only kept when targets persist

  std::size_t size() const { return data ? data->size() : 0; }
};

template <typename T>
struct ClientLossResult {
  double value = 0.0;     // L_C
  ParameterSet<T> grads;  // d L_C / d (backbone, projector)
  std::vector<BatchNormUpdate<T>> bn_updates;
};

namespace detail {

template <typename T>
double client_direction(const Architecture& arch, const ParameterSet<T>& online, const ParameterSet<T>& target,
                        const Tensor<T>& v_online, const Tensor<T>& v_target, bool normalize, Rng* rng,
                        ParameterSet<T>& grads, std::vector<BatchNormUpdate<T>>& bn) {
  const ForwardMode mode{true, rng};
  Tape<T> backbone_tape, projector_tape;
  const Tensor<T> y = forward_backbone(arch, online, v_online, mode, &backbone_tape, &bn);
  Tensor<T> z = forward_projector(arch, online, y, mode, &projector_tape, &bn);
  Tensor<T> yt = forward_backbone(arch, target, v_target, mode);

  std::vector<double> z_norms;
  if (normalize) {
    z = l2_normalize_rows(z, &z_norms);
    yt = l2_normalize_rows(yt);
  }
  auto loss = client_regression_loss(z, yt);
  Tensor<T> grad_z = normalize ? l2_normalize_backward(z, z_norms, loss.grad_online) : loss.grad_online;
  const Tensor<T> grad_y = backward(arch.projector, online, projector_tape, grad_z, grads);
  backward(arch.backbone, online, backbone_tape, grad_y, grads, false);
  return loss.value;
}

}  // namespace detail

/// Symmetrized client objective for fixed views. `online` holds backbone and
/// projector; `target` holds a backbone only and receives no gradient.
template <typename T>
ClientLossResult<T> client_loss_from_views(const Architecture& arch, const ParameterSet<T>& online,
                                           const ParameterSet<T>& target, const Tensor<T>& view1,
                                           const Tensor<T>& view2, bool normalize = false, Rng* rng = nullptr) {
  if (online.has_role(Role::head)) throw ParameterError("client online network must not contain a head");
  if (target.has_role(Role::head) || target.has_role(Role::projector))
    throw ParameterError("client target network must be a backbone only");
  ClientLossResult<T> r;
  ParameterSet<T> g1 = online.zeros_like();
  ParameterSet<T> g2 = g1;
  const double a = detail::client_direction(arch, online, target, view1, view2, normalize, rng, g1, r.bn_updates);
  const double b = detail::client_direction(arch, online, target, view2, view1, normalize, rng, g2, r.bn_updates);
  r.value = (a + b) / 2.0;
  auto it2 = g2.begin();
  for (auto it = g1.begin(); it != g1.end(); ++it, ++it2) {
    auto& x = it->second.value;
    const auto& y = it2->second.value;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] + y[i]) * T(0.5);
  }
  r.grads = std::move(g1);
  return r;
}

/// Two normalized views per image, batched.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_client_views(const std::vector<const UnlabeledExample*>& batch,
                                                  const AugmentPolicy& policy, const Normalization& norm, Rng& rng) {
  std::vector<Tensor<float>> v1, v2;
  for (const auto* ex : batch) {
    auto pair = make_view_pair(ex->image, policy, rng);
    normalize_in_place(pair.view1, norm);
    normalize_in_place(pair.view2, norm);
    v1.push_back(std::move(pair.view1));
    v2.push_back(std::move(pair.view2));
  }
  return {to_batch<T>(v1), to_batch<T>(v2)};
}

struct ClientSessionConfig {
  std::size_t epochs = 1;       // R_L
  std::size_t batch_size = 50;  // BS_U
  double mu = 0.999;            // upper EMA decay
  OptimizerConfig optimizer;
  AugmentPolicy policy;
  Normalization norm;
  bool normalize_projection = false;
  bool persist_target = false;  // keep xi across sessions instead of resetting to theta
};

template <typename T>
struct ClientSessionResult {
  ParameterSet<T> backbone;  // the only thing that leaves the client
  std::size_t steps = 0;
  double mean_loss = 0.0;
};

/// Trains the broadcast backbone plus this client's projector on local data.
/// The projector (and, optionally, the target) stays on the shard.
template <typename T>
ClientSessionResult<T> client_train_session(const Architecture& arch, const ParameterSet<T>& backbone,
                                            ClientShard<T>& shard, const ClientSessionConfig& cfg,
                                            std::uint64_t seed, std::uint64_t round) {
  if (backbone.has_role(Role::head) || backbone.has_role(Role::projector))
    throw ParameterError("client received parameters other than the backbone");
  if (!shard.projector) shard.projector = init_projector<T>(arch, seed, shard.id);

  ParameterSet<T> online = stitch(backbone, *shard.projector);
  ParameterSet<T> target = cfg.persist_target && shard.target ? *shard.target : backbone;
  Optimizer<T> optimizer(cfg.optimizer);
  Rng rng = make_rng(seed, {stream::client, shard.id, round});

  ClientSessionResult<T> result;
  const auto& data = *shard.data;
  std::uint64_t local_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !data.empty(); ++epoch) {
    for (const auto& idx : fold_singleton_tail(make_batches(data.size(), cfg.batch_size, rng()))) {
      std::vector<const UnlabeledExample*> batch;
      for (std::size_t i : idx) batch.push_back(&data[i]);
      const auto [v1, v2] = make_client_views<T>(batch, cfg.policy, cfg.norm, rng);
      auto loss = client_loss_from_views(arch, online, target, v1, v2, cfg.normalize_projection, &rng);
      if (!std::isfinite(loss.value)) {
        std::ostringstream msg;
        msg << "client " << shard.id << " loss is not finite at round " << round << " step " << local_step
            << " (value=" << loss.value << ")";
        throw TrainingError(msg.str());
      }
      optimizer.step(online, loss.grads);
      apply_batch_norm_updates(online, loss.bn_updates);

      const double decay = ema_decay_schedule(local_step, cfg.mu);
      const T d = T(decay), rest = T(1.0 - decay);
      for (auto& [name, e] : target) {
        const auto& th = online.at(name);
        for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] = d * e.value[i] + rest * th[i];
      }
      ++local_step;
      result.mean_loss += loss.value;
    }
  }
  result.steps = local_step;
  if (local_step) result.mean_loss /= double(local_step);
  result.backbone = extract_role(online, Role::backbone);
  shard.projector = extract_role(online, Role::projector);
  if (cfg.persist_target) shard.target = std::move(target);
  return result;
}

}  // namespace fedcon
