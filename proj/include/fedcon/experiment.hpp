#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedcon/checkpoint.hpp"
#include "fedcon/config.hpp"
#include "fedcon/federation.hpp"
#include "fedcon/metrics.hpp"

namespace fedcon {

// Run directory layout.
inline constexpr const char* kConfigFile = "config.txt";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kResultFile = "result.json";

inline Architecture architecture_for(const ExperimentConfig& c) {
  ArchitectureSpec spec;
  spec.family = c.dataset == DatasetName::mnist ? ArchFamily::mnist : ArchFamily::cifar;
  spec.dropout_enabled = c.dropout;
  return build_architecture(spec);
}

/// Loads the dataset and applies the train/test limits (leading examples).
inline LoadedDataset load_experiment_data(const ExperimentConfig& c) {
  LoadedDataset data = load_dataset(c.dataset, c.data_root);
  if (c.train_limit && c.train_limit < data.train.size()) data.train.resize(c.train_limit);
  if (c.test_limit && c.test_limit < data.test.size()) data.test.resize(c.test_limit);
  return data;
}

inline SplitSpec split_spec_for(const ExperimentConfig& c) {
  SplitSpec s;
  s.gamma = c.gamma;
  s.beta = c.beta;
  s.num_clients = c.K;
  s.regime = c.regime;
  s.classes_per_client = c.classes_per_client;
  s.seed = c.seed;
  s.stratify_labeled = c.stratify_labeled;
  return s;
}

inline FederationConfig federation_config_for(const ExperimentConfig& c) {
  FederationConfig f;
  f.clients_per_round = c.B;
  const Normalization norm = c.normalize_inputs ? dataset_normalization(c.dataset) : Normalization{};

  f.server.epochs = c.R_L;
  f.server.batch_labeled = c.BS_L;
  f.server.batch_unlabeled = c.BS_U;
  f.server.tau = c.tau;
  f.server.policy = c.augment;
  f.server.norm = norm;
  f.server.loss = {c.consistency, c.consistency_on_labeled};
  f.server.reset_target = !c.persist_server_target;
  f.server_optimizer = {c.optimizer, c.lr, c.momentum};

  f.client.epochs = c.R_L;
  f.client.batch_size = c.BS_U;
  f.client.mu = c.mu;
  f.client.optimizer = {c.optimizer, c.client_lr, c.momentum};
  f.client.policy = c.augment;
  f.client.norm = norm;
  f.client.normalize_projection = c.normalize_projection;
  f.client.persist_target = c.persist_client_target;

  f.weighted_average = c.weighted_average;
  f.eval_target = c.eval_target_net;
  f.eval_batch = c.BS_test;
  f.workers = c.workers;
  return f;
}

struct RunResult {
  std::filesystem::path dir;
  std::vector<RoundReport> reports;  // rounds executed by this call
  std::uint64_t rounds_completed = 0;
  std::optional<double> final_accuracy;
};

struct RunHooks {
  std::function<void(const RoundReport&, double seconds)> on_round;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

namespace detail {

inline RunResult drive(const ExperimentConfig& c, bool resume, const RunHooks& hooks) {
  namespace fs = std::filesystem;
  const fs::path dir = c.out;
  fs::create_directories(dir);

  const Architecture arch = architecture_for(c);
  const LoadedDataset data = load_experiment_data(c);
  const DataSplit split = make_split(data.train, split_spec_for(c), data.descriptor.num_classes);
  const FederationConfig fcfg = federation_config_for(c);
  FederationState<float> fed = init_federation<float>(arch, split, c.seed, fcfg.server_optimizer);

  std::optional<std::uint64_t> keep;
  if (resume) {
    load_checkpoint(dir / kCheckpointFile, fed);
    keep = fed.round;
  } else {
    write_text(dir / kConfigFile, echo_config(c));
    fs::remove(dir / kResultFile);
  }
  MetricsWriter metrics(dir / kMetricsFile, keep);
  if (!resume) save_checkpoint(dir / kCheckpointFile, fed);

  RunResult result;
  result.dir = dir;
  while (fed.round < c.R_G) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t next = fed.round + 1;
    const bool eval_now = next % c.eval_every == 0 || next == c.R_G;
    RoundReport report = run_round<float>(arch, fed, fcfg, data.test, eval_now);
    metrics.write_round(report);
    if ((c.checkpoint_every && fed.round % c.checkpoint_every == 0) || fed.round == c.R_G)
      save_checkpoint(dir / kCheckpointFile, fed);
    if (report.accuracy) result.final_accuracy = report.accuracy;
    if (hooks.on_round)
      hooks.on_round(report, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    result.reports.push_back(std::move(report));
  }
  result.rounds_completed = fed.round;
  if (!result.final_accuracy && fed.round > 0)
    for (const auto& row : read_metrics(dir / kMetricsFile))
      if (row.kind == "test_accuracy") result.final_accuracy = row.value;

  nlohmann::json j;
  j["rounds"] = result.rounds_completed;
  j["seed"] = c.seed;
  j["final_accuracy"] = result.final_accuracy ? nlohmann::json(*result.final_accuracy) : nlohmann::json(nullptr);
  write_text(dir / kResultFile, j.dump(2) + "\n");
  return result;
}

}  // namespace detail

/// Runs R_G rounds from scratch into `c.out` (config echo, metrics, checkpoint,
/// result summary). R_G = 0 writes the initial checkpoint only.
inline RunResult run_experiment(const ExperimentConfig& c, const RunHooks& hooks = {}) {
  return detail::drive(c, false, hooks);
}

/// Continues a run directory from its checkpoint. Overrides may change
/// non-structural keys such as fed.R_G or run.eval_every.
inline RunResult resume_experiment(const std::filesystem::path& dir, const std::vector<std::string>& overrides = {},
                                   const RunHooks& hooks = {}) {
  ExperimentConfig c = load_config(dir / kConfigFile, overrides);
  c.out = dir.string();
  if (!overrides.empty()) write_text(dir / kConfigFile, echo_config(c));
  return detail::drive(c, true, hooks);
}

struct SweepPoint {
  std::string value;
  std::filesystem::path dir;
  std::optional<double> final_accuracy;
};

/// One run per value of `axis` under `<base.out>/<axis>=<value>`, plus a
/// `sweep.csv` summary in `base.out`.
inline std::vector<SweepPoint> run_sweep(const ExperimentConfig& base, const std::string& axis,
                                         const std::vector<std::string>& values, const RunHooks& hooks = {},
                                         const std::function<void(const SweepPoint&)>& on_point = {}) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const std::string key = resolve_key(axis);
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) {
    ExperimentConfig c = base;
    // The swept axis wins over the base value of its coupled key.
    if (key == "fed.r") c.explicit_keys.erase("fed.B");
    if (key == "fed.B") {
      c.explicit_keys.erase("fed.r");
      c.client_fraction.reset();
    }
    set_key(c, key, v);
    finalize(c);
    c.out = (std::filesystem::path(base.out) / (axis + "=" + v)).string();
    configs.push_back(std::move(c));
  }
  std::filesystem::create_directories(base.out);
  std::vector<SweepPoint> points;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    auto r = run_experiment(configs[i], hooks);
    points.push_back({values[i], r.dir, r.final_accuracy});
    if (on_point) on_point(points.back());
  }
  std::string csv = "axis,value,final_accuracy\n";
  for (const auto& p : points)
    csv += axis + "," + p.value + "," + (p.final_accuracy ? cfg::format_real(*p.final_accuracy) : "") + "\n";
  write_text(std::filesystem::path(base.out) / "sweep.csv", csv);
  return points;
}

}  // namespace fedcon
