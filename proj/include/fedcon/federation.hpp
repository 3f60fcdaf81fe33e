#pragma once

#include <algorithm>
#include <functional>
#include <future>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fedcon/client.hpp"
#include "fedcon/evaluation.hpp"
#include "fedcon/server.hpp"

namespace fedcon {

/// A round-level invariant was violated: something other than the backbone
/// crossed the network, or the server head changed during the client phase.
class CustodyError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

struct FederationConfig {
  std::size_t clients_per_round = 10;  // B
  ServerSessionConfig server;
  ClientSessionConfig client;
  OptimizerConfig server_optimizer;
  bool weighted_average = false;  // weight uploads by shard size
  bool eval_target = false;       // evaluate xi instead of theta
  std::size_t eval_batch = 128;
  std::size_t workers = 1;        // concurrent client sessions
};

template <typename T>
struct FederationState {
  ContrastiveState<T> server;
  Optimizer<T> server_optimizer;
  std::vector<ClientShard<T>> clients;
  std::shared_ptr<const std::vector<LabeledExample>> labeled;
  std::shared_ptr<const std::vector<UnlabeledExample>> unlabeled;
  std::uint64_t round = 0;
  std::uint64_t seed = 0;
};

struct RoundReport {
  std::uint64_t round = 0;  // 1-based index of the completed round
  std::vector<std::size_t> selected;
  ServerSessionSummary server;
  std::vector<double> client_loss;  // aligned with `selected`
  std::optional<double> accuracy;
};

/// Observation points for tests and instrumentation; all optional.
template <typename T>
struct RoundHooks {
  std::function<void(const ParameterSet<T>&)> on_broadcast;
  std::function<void(std::size_t, const ParameterSet<T>&)> on_upload;
};

/// Builds the round-zero state from a data split.
template <typename T>
FederationState<T> init_federation(const Architecture& arch, const DataSplit& split, std::uint64_t seed,
                                   const OptimizerConfig& server_optimizer) {
  FederationState<T> fed;
  fed.seed = seed;
  fed.server = init_state<T>(arch, seed);
  fed.server_optimizer = Optimizer<T>(server_optimizer);
  fed.labeled = std::make_shared<const std::vector<LabeledExample>>(split.server_labeled);
  fed.unlabeled = std::make_shared<const std::vector<UnlabeledExample>>(split.server_unlabeled);
  fed.clients.resize(split.client_shards.size());
  for (std::size_t k = 0; k < fed.clients.size(); ++k) {
    fed.clients[k].id = k;
    fed.clients[k].data = std::make_shared<const std::vector<UnlabeledExample>>(split.client_shards[k]);
  }
  return fed;
}

/// B distinct client ids drawn uniformly without replacement, returned sorted.
inline std::vector<std::size_t> select_clients(std::size_t num_clients, std::size_t count, Rng& rng) {
  if (count > num_clients)
    throw std::invalid_argument("cannot select " + std::to_string(count) + " of " + std::to_string(num_clients) +
                                " clients");
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < count; ++i) std::swap(ids[i], ids[i + uniform_index(rng, num_clients - i)]);
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Elementwise (weighted) mean of shape-compatible backbones. Each element is
/// reduced over sorted operands so the result does not depend on upload order.
template <typename T>
ParameterSet<T> aggregate_backbones(const std::vector<ParameterSet<T>>& backbones,
                                    const std::vector<double>& weights = {}) {
  if (backbones.empty()) throw std::invalid_argument("aggregate: no backbones");
  if (!weights.empty() && weights.size() != backbones.size())
    throw std::invalid_argument("aggregate: one weight per backbone is required");
  for (const auto& b : backbones) {
    require_compatible(b, backbones.front(), "aggregate");
    if (b.has_role(Role::head) || b.has_role(Role::projector))
      throw ParameterError("aggregate: uploads must contain backbone entries only");
  }
  double wsum = 0;
  for (double w : weights) {
    if (!(w > 0)) throw std::invalid_argument("aggregate: weights must be positive");
    wsum += w;
  }

  ParameterSet<T> out = backbones.front();
  const std::size_t n = backbones.size();
  std::vector<std::pair<T, double>> vals(n);
  for (auto& [name, e] : out) {
    std::vector<const T*> src;
    for (const auto& b : backbones) src.push_back(b.at(name).data());
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      for (std::size_t k = 0; k < n; ++k) vals[k] = {src[k][i], weights.empty() ? 1.0 : weights[k]};
      std::sort(vals.begin(), vals.end());
      if (vals.front().first == vals.back().first) {
        e.value[i] = vals.front().first;
        continue;
      }
      double acc = 0;
      for (const auto& [v, w] : vals) acc += w * double(v);
      e.value[i] = T(acc / (weights.empty() ? double(n) : wsum));
    }
  }
  return out;
}

/// Server session, client selection, backbone broadcast, client sessions,
/// aggregation and head re-attachment.
template <typename T>
RoundReport run_round(const Architecture& arch, FederationState<T>& fed, const FederationConfig& cfg,
                      std::span<const LabeledExample> test = {}, bool evaluate_now = false,
                      const RoundHooks<T>& hooks = {}) {
  RoundReport report;
  report.round = fed.round + 1;

  Rng server_rng = make_rng(fed.seed, {stream::server, fed.round});
  report.server = server_train_session(arch, fed.server, fed.server_optimizer, *fed.labeled, *fed.unlabeled,
                                       cfg.server, server_rng);

  Rng select_rng = make_rng(fed.seed, {stream::selection, fed.round});
  report.selected = select_clients(fed.clients.size(), cfg.clients_per_round, select_rng);

  const ParameterSet<T> broadcast = extract_role(fed.server.online, Role::backbone);
  if (hooks.on_broadcast) hooks.on_broadcast(broadcast);
  const ParameterSet<T> head_before = extract_role(fed.server.online, Role::head);

  std::vector<ClientSessionResult<T>> results(report.selected.size());
  auto run_one = [&](std::size_t slot) {
    results[slot] = client_train_session(arch, broadcast, fed.clients[report.selected[slot]], cfg.client, fed.seed,
                                         fed.round);
  };
  if (cfg.workers <= 1 || results.size() <= 1) {
    for (std::size_t s = 0; s < results.size(); ++s) run_one(s);
  } else {
    for (std::size_t begin = 0; begin < results.size(); begin += cfg.workers) {
      std::vector<std::future<void>> jobs;
      for (std::size_t s = begin; s < std::min(results.size(), begin + cfg.workers); ++s)
        jobs.push_back(std::async(std::launch::async, run_one, s));
      for (auto& j : jobs) j.get();
    }
  }

  std::vector<ParameterSet<T>> uploads;
  std::vector<double> weights;
  for (std::size_t s = 0; s < results.size(); ++s) {
    auto& r = results[s];
    if (r.backbone.has_role(Role::head) || r.backbone.has_role(Role::projector))
      throw CustodyError("client upload contains non-backbone parameters");
    if (hooks.on_upload) hooks.on_upload(report.selected[s], r.backbone);
    report.client_loss.push_back(r.mean_loss);
    if (cfg.weighted_average) weights.push_back(double(std::max<std::size_t>(1, fed.clients[report.selected[s]].size())));
    uploads.push_back(std::move(r.backbone));
  }
  if (!(extract_role(fed.server.online, Role::head) == head_before))
    throw CustodyError("server head changed during the client phase");

  if (!uploads.empty()) {
    const ParameterSet<T> global = aggregate_backbones(uploads, weights);
    fed.server.online = stitch(global, head_before);
  }
  ++fed.round;

  if (evaluate_now && !test.empty()) {
    const auto& params = cfg.eval_target ? fed.server.target : fed.server.online;
    report.accuracy = evaluate(arch, params, test, cfg.eval_batch, cfg.server.norm);
  }
  return report;
}

}  // namespace fedcon
