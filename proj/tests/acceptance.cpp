// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Long MNIST runs are reused from the runs
// directory when their stored configuration matches; otherwise they are run.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedcon/fedcon.hpp"

using namespace fedcon;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr double kIidHighGammaMin = 0.965;
constexpr double kLowGammaMin = 0.935;
constexpr double kNonIidGapMax = 0.02;
constexpr std::size_t kCifarParams = 5852170;
constexpr double kEmaTol = 1e-12;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-6;
constexpr int kSeeds = 3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path env_path(const char* name, const fs::path& fallback) {
  if (const char* v = std::getenv(name)) return v;
  return fallback;
}

const fs::path kSource = FEDCON_SOURCE_DIR;
const fs::path kMnist = env_path("FEDCON_MNIST_ROOT", FEDCON_MNIST_ROOT);
const fs::path kRuns = env_path("FEDCON_ACCEPTANCE_RUNS", fs::path(FEDCON_BINARY_DIR) / "acceptance_runs");

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

bool have_mnist() { return fs::exists(kMnist / "train-images-idx3-ubyte"); }

bool bitwise_equal(const ParameterSet<float>& a, const ParameterSet<float>& b) {
  if (!shape_compatible(a, b)) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib)
    if (std::memcmp(ia->second.value.data(), ib->second.value.data(), ia->second.value.size() * sizeof(float)))
      return false;
  return true;
}

// ---------------------------------------------------------------------------
// Long runs

/// Final accuracy of `<cfg>` at `seed`, reusing a finished run directory whose
/// stored configuration re-parses to the expected one.
double final_accuracy(const std::string& cfg_name, int seed) {
  const fs::path dir = kRuns / (cfg_name + "_seed" + std::to_string(seed));
  const auto expected = load_config(kSource / "configs" / (cfg_name + ".cfg"),
                                    {"data.root=" + kMnist.string(), "run.seed=" + std::to_string(seed),
                                     "run.out=" + dir.string()});
  if (fs::exists(dir / kResultFile) && fs::exists(dir / kConfigFile)) {
    const auto stored = load_config(dir / kConfigFile);
    const auto result = nlohmann::json::parse(slurp(dir / kResultFile));
    if (echo_config(stored) == echo_config(expected) && result["rounds"].get<std::uint64_t>() == expected.R_G &&
        result["final_accuracy"].is_number()) {
      std::cerr << "  reuse " << dir << "\n";
      return result["final_accuracy"].get<double>();
    }
  }
  std::cerr << "  running " << dir << " (" << expected.R_G << " rounds)\n";
  RunHooks hooks;
  hooks.on_round = [](const RoundReport& r, double secs) {
    if (r.round % 10 == 0) std::cerr << "    round " << r.round << " " << fmt(secs, 1) << "s\n";
  };
  const auto r = run_experiment(expected, hooks);
  if (!r.final_accuracy) throw std::runtime_error(dir.string() + " produced no accuracy");
  return *r.final_accuracy;
}

RunAggregate seeds_of(const std::string& cfg_name, std::string& detail) {
  std::vector<double> acc;
  for (int s = 0; s < kSeeds; ++s) acc.push_back(final_accuracy(cfg_name, s));
  const auto agg = aggregate_runs(acc);
  detail = "mean " + fmt(agg.mean) + " std " + fmt(agg.std) + " (";
  for (std::size_t i = 0; i < acc.size(); ++i) detail += (i ? ", " : "") + fmt(acc[i]);
  detail += ")";
  return agg;
}

Outcome threshold_run(const std::string& cfg_name, double min_mean) {
  if (!have_mnist()) return {false, "MNIST not found under " + kMnist.string()};
  std::string detail;
  const auto agg = seeds_of(cfg_name, detail);
  return {agg.mean >= min_mean, detail + " >= " + fmt(min_mean, 3)};
}

Outcome noniid_run() {
  if (!have_mnist()) return {false, "MNIST not found under " + kMnist.string()};
  std::string d_non, d_iid;
  const auto non = seeds_of("mnist_noniid_g0.01", d_non);
  const auto iid = seeds_of("mnist_iid_g0.01", d_iid);
  const double gap = std::abs(non.mean - iid.mean);
  return {non.mean >= kLowGammaMin && gap <= kNonIidGapMax,
          "non-IID " + d_non + " >= " + fmt(kLowGammaMin, 3) + "; |non-IID - IID| = " + fmt(gap) +
              " <= " + fmt(kNonIidGapMax, 2)};
}

Outcome consistency_ablation() {
  if (!have_mnist()) return {false, "MNIST not found under " + kMnist.string()};
  std::string d_with, d_without;
  const auto with = seeds_of("mnist_server_unlabeled", d_with);
  const auto without = seeds_of("mnist_server_unlabeled_nocons", d_without);
  return {with.mean > without.mean, "with " + d_with + " vs without " + d_without};
}

// ---------------------------------------------------------------------------
// CIFAR architecture smoke

Outcome cifar_smoke() {
  const auto arch = build_architecture({ArchFamily::cifar});
  const std::size_t params = init_state<float>(arch, 0).online.weight_count();
  if (params != kCifarParams) return {false, "parameter count " + std::to_string(params)};

  const fs::path data = kRuns / "synthetic_cifar";
  if (!fs::exists(data / "cifar-10-batches-bin" / "test_batch.bin")) write_synthetic_cifar(data, 7);
  const fs::path out = kRuns / "cifar_smoke";
  fs::remove_all(out);
  const auto cfg = load_config(kSource / "configs" / "cifar_smoke.cfg",
                               {"data.root=" + data.string(), "run.out=" + out.string()});
  run_experiment(cfg);
  const auto ce = series(read_metrics(out / kMetricsFile), "server_ce");
  std::string trace;
  bool finite = ce.size() == cfg.R_G;
  for (auto [round, v] : ce) {
    finite = finite && std::isfinite(v);
    trace += (trace.empty() ? "" : " ") + fmt(v, 3);
  }
  const bool decreasing = finite && ce.back().second < ce.front().second;
  return {decreasing, "params " + std::to_string(params) + "; server CE per round (synthetic CIFAR-format data): " +
                          trace + "; finite and last < first"};
}

// ---------------------------------------------------------------------------
// Property suites

Outcome ema_arithmetic() {
  double worst = 0;
  bool fixed = true;
  ContrastiveState<double> s;
  s.online.add("w", Tensor<double>({1}, 2.0), Role::backbone);
  s.target.add("w", Tensor<double>({1}, 1.0), Role::backbone);
  auto a = s;
  ema_update(a, 0.9);
  worst = std::max(worst, std::abs(a.target.at("w")[0] - 1.1));

  Rng rng = make_rng(1, {});
  for (int t = 0; t < 50; ++t) {
    ContrastiveState<double> r;
    Tensor<double> th({8}), xi({8});
    for (auto& v : th.values()) v = uniform(rng, -5, 5);
    for (auto& v : xi.values()) v = uniform(rng, -5, 5);
    r.online.add("w", th, Role::backbone);
    r.target.add("w", xi, Role::backbone);
    const double mu = uniform01(rng);
    auto u = r;
    ema_update(u, mu);
    for (std::size_t i = 0; i < 8; ++i) worst = std::max(worst, std::abs(u.target.at("w")[i] - (mu * xi[i] + (1 - mu) * th[i])));
    auto one = r, zero = r;
    ema_update(one, 1.0);
    ema_update(zero, 0.0);
    fixed = fixed && one.target == r.target && zero.target.at("w") == r.online.at("w");
  }
  return {worst <= kEmaTol && fixed,
          "max |error| " + sci(worst) + " <= 1e-12; decay 1 keeps xi, decay 0 copies theta: " +
              (fixed ? "yes" : "no")};
}

/// Largest scaled discrepancy between analytic gradients and central
/// differences over every weight of `params`.
double max_gradient_error(ParameterSet<double>& params, const ParameterSet<double>& grads,
                          const std::function<double()>& loss) {
  double worst = 0;
  for (auto& [name, e] : params) {
    if (e.kind != EntryKind::weight) continue;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double saved = e.value[i];
      e.value[i] = saved + kGradStep;
      const double up = loss();
      e.value[i] = saved - kGradStep;
      const double down = loss();
      e.value[i] = saved;
      const double numeric = (up - down) / (2 * kGradStep);
      const double analytic = grads.at(name)[i];
      worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3}));
    }
  }
  return worst;
}

Architecture toy_arch(bool linear_projector) {
  ArchitectureSpec s{ArchFamily::toy};
  s.toy_hidden = 6;
  s.toy_classes = 3;
  s.toy_linear_projector = linear_projector;
  return build_architecture(s);
}

Tensor<double> random_rows(std::size_t n, std::size_t d, Rng& rng) {
  Tensor<double> t({n, d});
  for (auto& v : t.values()) v = uniform(rng, -1, 1);
  return t;
}

Outcome gradient_checks() {
  Rng rng = make_rng(21, {});
  const auto arch = toy_arch(false);

  // Cross-entropy alone, then with the consistency terms.
  auto state = init_state<double>(arch, 3);
  for (auto& [n, e] : state.target)
    for (auto& v : e.value.values()) v += uniform(rng, -0.3, 0.3);
  ServerViews<double> v;
  v.labeled1 = random_rows(4, 4, rng);
  v.labeled2 = random_rows(4, 4, rng);
  v.unlabeled1 = random_rows(6, 4, rng);
  v.unlabeled2 = random_rows(6, 4, rng);
  v.labels = {0, 2, 1, 2};
  double worst_ce = 0, worst_server = 0, worst_client = 0;
  for (bool cons : {false, true}) {
    const ServerLossOptions opt{cons, true};
    const auto r = server_loss_from_views(arch, state, v, opt);
    const double w = max_gradient_error(state.online, r.grads,
                                        [&] { return server_loss_from_views(arch, state, v, opt).total; });
    (cons ? worst_server : worst_ce) = w;
  }
  for (bool linear : {true, false})
    for (bool normalize : {false, true}) {
      const auto a = toy_arch(linear);
      // Narrow toy widths can leave every hidden unit inactive on the batch,
      // where the normalized projection is undefined; these widths avoid it.
      auto online = stitch(init_parameters<double>(a.backbone, Role::backbone, 5), init_projector<double>(a, 6, 1));
      auto target = extract_role(online, Role::backbone);
      for (auto& [n, e] : target)
        for (auto& x : e.value.values()) x += uniform(rng, -0.3, 0.3);
      const auto v1 = random_rows(6, 4, rng), v2 = random_rows(6, 4, rng);
      const auto r = client_loss_from_views(a, online, target, v1, v2, normalize);
      worst_client = std::max(worst_client, max_gradient_error(online, r.grads, [&] {
        return client_loss_from_views(a, online, target, v1, v2, normalize).value;
      }));
    }
  const double worst = std::max({worst_ce, worst_server, worst_client});
  return {worst <= kGradRelTol, "max relative error: cross-entropy " + sci(worst_ce) + ", server total " +
                                    sci(worst_server) + ", client regression " +
                                    sci(worst_client) + " <= 1e-4"};
}

Outcome stop_gradient() {
  // With target == online (tied start), the analytic gradient must equal the
  // derivative that holds the target fixed, and the target output must carry
  // an exactly zero gradient. Moving both nets together shows the blocked path
  // is not trivially zero.
  Rng rng = make_rng(31, {});
  const auto a = toy_arch(true);
  auto online = stitch(init_parameters<double>(a.backbone, Role::backbone, 8), init_projector<double>(a, 9, 0));
  auto target = extract_role(online, Role::backbone);
  const auto v1 = random_rows(5, 4, rng), v2 = random_rows(5, 4, rng);
  const auto r = client_loss_from_views(a, online, target, v1, v2);

  const double held = max_gradient_error(online, r.grads, [&] {
    return client_loss_from_views(a, online, target, v1, v2).value;
  });
  double tied_gap = 0;
  for (auto& [name, e] : online) {
    if (e.role != Role::backbone || e.kind != EntryKind::weight) continue;
    auto& t = target.at(name);
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double s = e.value[i];
      e.value[i] = t[i] = s + kGradStep;
      const double up = client_loss_from_views(a, online, target, v1, v2).value;
      e.value[i] = t[i] = s - kGradStep;
      const double down = client_loss_from_views(a, online, target, v1, v2).value;
      e.value[i] = t[i] = s;
      tied_gap = std::max(tied_gap, std::abs((up - down) / (2 * kGradStep) - r.grads.at(name)[i]));
    }
  }
  const auto y = forward_backbone(a, online, v1, {});
  const auto z = forward_projector(a, online, y, {});
  const auto reg = client_regression_loss(z, forward_backbone(a, target, v2, {}));
  bool zero = true;
  for (double g : reg.grad_target.values()) zero = zero && g == 0.0;
  bool keys_online_only = r.grads.size() == online.size();

  // A training step never writes to the target except through the EMA: with
  // decay 1 it stays bitwise fixed.
  ContrastiveState<double> st{online, online, 0};
  st.target = stitch(target, extract_role(online, Role::projector));
  const auto before = st.target;
  Optimizer<double>({OptimizerScheme::sgd_momentum, 0.1, 0.9}).step(st.online, r.grads);
  ema_update(st, 1.0);
  const bool untouched = st.target == before;

  return {held <= kGradRelTol && zero && keys_online_only && untouched && tied_gap > 1e-3,
          "held-target relative error " + sci(held) + "; target-output gradient exactly zero: " +
              (zero ? "yes" : "no") + "; target untouched by step: " + (untouched ? "yes" : "no") +
              "; blocked path magnitude " + sci(tied_gap)};
}

struct SmallFederation {
  Architecture arch = build_architecture({ArchFamily::mnist});
  DataSplit split;
  FederationConfig cfg;

  SmallFederation() {
    SplitSpec spec;
    spec.gamma = 0.1;
    spec.num_clients = 6;
    spec.seed = 2;
    split = make_split(synthetic_examples(600, 1, 28, 10, 3), spec);
    cfg.clients_per_round = 3;
    cfg.server.batch_labeled = 10;
    cfg.server.batch_unlabeled = 20;
    cfg.client.batch_size = 20;
    cfg.server_optimizer = {OptimizerScheme::sgd_momentum, 0.01, 0.9};
    cfg.client.optimizer = {OptimizerScheme::sgd_momentum, 0.001, 0.9};
    cfg.server.norm = cfg.client.norm = dataset_normalization(DatasetName::mnist);
  }
};

Outcome custody() {
  SmallFederation sf;
  auto fed = init_federation<float>(sf.arch, sf.split, 5, sf.cfg.server_optimizer);
  ParameterSet<float> head_at_broadcast;
  bool payloads_clean = true;
  std::size_t uploads = 0;
  RoundHooks<float> hooks;
  hooks.on_broadcast = [&](const ParameterSet<float>& p) {
    payloads_clean = payloads_clean && !p.has_role(Role::head) && !p.has_role(Role::projector);
    head_at_broadcast = extract_role(fed.server.online, Role::head);
  };
  hooks.on_upload = [&](std::size_t, const ParameterSet<float>& p) {
    ++uploads;
    payloads_clean = payloads_clean && !p.has_role(Role::head) && !p.has_role(Role::projector);
  };
  bool head_stable = true;
  for (int r = 0; r < 3; ++r) {
    run_round<float>(sf.arch, fed, sf.cfg, {}, false, hooks);
    head_stable = head_stable && bitwise_equal(extract_role(fed.server.online, Role::head), head_at_broadcast);
  }
  const bool no_server_projector = !fed.server.online.has_role(Role::projector) &&
                                   !fed.server.target.has_role(Role::projector);
  return {head_stable && payloads_clean && no_server_projector && uploads == 9,
          "head bitwise stable through client phases: " + std::string(head_stable ? "yes" : "no") +
              "; payloads backbone-only over " + std::to_string(uploads) + " uploads: " +
              (payloads_clean ? "yes" : "no")};
}

Outcome aggregation() {
  Rng rng = make_rng(41, {});
  const auto arch = build_architecture({ArchFamily::mnist});
  std::vector<ParameterSet<float>> ups;
  for (std::uint64_t k = 0; k < 8; ++k)
    ups.push_back(extract_role(init_state<float>(arch, 100 + k).online, Role::backbone));
  const auto ref = aggregate_backbones(ups);
  bool perm = true;
  for (int t = 0; t < 10; ++t) {
    shuffle(ups.begin(), ups.end(), rng);
    perm = perm && bitwise_equal(aggregate_backbones(ups), ref);
  }
  const std::vector<ParameterSet<float>> same(5, ups.front());
  const bool identity = bitwise_equal(aggregate_backbones(same), ups.front());
  return {perm && identity, std::string("permutation invariant over 10 shuffles: ") + (perm ? "yes" : "no") +
                                "; mean of identical uploads exact: " + (identity ? "yes" : "no")};
}

Outcome partitioner() {
  // Exactness and the non-IID class count on the real MNIST labels when
  // present; IID per-class balance on class-balanced labels.
  std::vector<LabeledExample> mnist;
  std::string source = "synthetic labels";
  if (have_mnist()) {
    mnist = load_dataset(DatasetName::mnist, kMnist).train;
    source = "MNIST labels";
  } else {
    mnist = synthetic_examples(60000, 1, 1, 10, 1);
  }
  std::vector<LabeledExample> balanced;
  for (std::size_t i = 0; i < 60000; ++i) balanced.push_back({Tensor<float>({1}), int(i % 10)});

  bool exact = true, iid = true, noniid = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (Regime regime : {Regime::iid, Regime::noniid}) {
      const auto s = make_split(mnist, {0.01, 0.05, 100, regime, 2, seed});
      std::vector<std::size_t> all(s.labeled_index);
      all.insert(all.end(), s.unlabeled_index.begin(), s.unlabeled_index.end());
      for (const auto& sh : s.shard_index) all.insert(all.end(), sh.begin(), sh.end());
      std::sort(all.begin(), all.end());
      bool ok = all.size() == mnist.size();
      for (std::size_t i = 0; ok && i < all.size(); ++i) ok = all[i] == i;
      exact = exact && ok;
      if (regime == Regime::noniid)
        for (const auto& sh : s.shard_index) {
          std::set<int> classes;
          for (std::size_t idx : sh) classes.insert(mnist[idx].label);
          noniid = noniid && classes.size() == 2;
        }
    }
    const auto b = make_split(balanced, {0.01, 0.0, 100, Regime::iid, 2, seed});
    for (const auto& sh : b.shard_index) {
      std::vector<double> counts(10);
      for (std::size_t idx : sh) ++counts[std::size_t(balanced[idx].label)];
      for (double c : counts) iid = iid && std::abs(c - double(sh.size()) / 10.0) <= 1.0;
    }
  }
  return {exact && iid && noniid, "20 seeds; exact partition (" + source + "): " + (exact ? "yes" : "no") +
                                      "; IID per-class balance +-1: " + (iid ? "yes" : "no") +
                                      "; non-IID exactly 2 classes (" + source + "): " + (noniid ? "yes" : "no")};
}

Outcome determinism() {
  if (!have_mnist()) return {false, "MNIST not found under " + kMnist.string()};
  std::string files[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path out = kRuns / ("determinism_" + std::to_string(i));
    fs::remove_all(out);
    run_experiment(load_config(kSource / "configs" / "smoke.cfg",
                               {"data.root=" + kMnist.string(), "run.out=" + out.string()}));
    files[i] = slurp(out / kMetricsFile);
  }
  const auto rows = std::count(files[0].begin(), files[0].end(), '\n');
  return {!files[0].empty() && files[0] == files[1],
          "two 3-round smoke runs; metrics files identical: " + std::string(files[0] == files[1] ? "yes" : "no") +
              " (" + std::to_string(rows) + " lines)"};
}

Outcome symmetrization() {
  const auto arch = build_architecture({ArchFamily::mnist, false});
  auto state = init_state<float>(arch, 12);
  for (auto& [n, e] : state.target)
    for (auto& v : e.value.values()) v *= 0.95f;
  const auto data = synthetic_examples(12, 1, 28, 10, 4);
  ServerBatch batch;
  for (std::size_t i = 0; i < 4; ++i) batch.labeled.push_back(&data[i]);
  std::vector<UnlabeledExample> unl;
  for (std::size_t i = 4; i < 12; ++i) unl.push_back({data[i].image});
  for (const auto& u : unl) batch.unlabeled.push_back(&u);
  AugmentPolicy policy;
  Rng rng = make_rng(5, {});
  const auto views = make_server_views<float>(batch, policy, dataset_normalization(DatasetName::mnist), rng);
  auto swapped = views;
  std::swap(swapped.labeled1, swapped.labeled2);
  std::swap(swapped.unlabeled1, swapped.unlabeled2);
  const auto s1 = server_loss_from_views(arch, state, views, {});
  const auto s2 = server_loss_from_views(arch, state, swapped, {});
  const bool server_ok = s1.total == s2.total && bitwise_equal(s1.grads, s2.grads);

  const auto online = stitch(extract_role(state.online, Role::backbone), init_projector<float>(arch, 12, 0));
  const auto target = extract_role(state.target, Role::backbone);
  const auto [c1, c2] = make_client_views<float>(batch.unlabeled, policy, dataset_normalization(DatasetName::mnist), rng);
  const auto l1 = client_loss_from_views(arch, online, target, c1, c2);
  const auto l2 = client_loss_from_views(arch, online, target, c2, c1);
  const bool client_ok = l1.value == l2.value && bitwise_equal(l1.grads, l2.grads);
  return {server_ok && client_ok, std::string("server loss and gradients bitwise equal under view swap: ") +
                                      (server_ok ? "yes" : "no") + "; client: " + (client_ok ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> only(argv + 1, argv + argc);
  struct Criterion {
    const char* id;
    const char* title;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria = {
      {"mnist_iid_g0.1", "MNIST IID gamma=0.1, mean of 3 seeds",
       [] { return threshold_run("mnist_iid_g0.1", kIidHighGammaMin); }},
      {"mnist_iid_g0.01", "MNIST IID gamma=0.01, mean of 3 seeds",
       [] { return threshold_run("mnist_iid_g0.01", kLowGammaMin); }},
      {"mnist_noniid_g0.01", "MNIST non-IID gamma=0.01 and gap to IID", noniid_run},
      {"consistency_ablation", "server consistency loss helps (gamma=0.01, beta=0.05)", consistency_ablation},
      {"cifar_smoke", "CIFAR architecture size and 5-round smoke run", cifar_smoke},
      {"ema", "EMA arithmetic", ema_arithmetic},
      {"gradients", "loss gradients vs central differences", gradient_checks},
      {"stop_gradient", "target branch receives no gradient", stop_gradient},
      {"custody", "head stays on the server, projectors stay on clients", custody},
      {"aggregation", "aggregation permutation invariance and identity", aggregation},
      {"partitioner", "partition exactness and class structure", partitioner},
      {"determinism", "identical smoke runs give identical metrics", determinism},
      {"symmetrization", "view swap leaves losses and gradients unchanged", symmetrization},
  };

  fs::create_directories(kRuns);
  std::ostringstream summary;
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.title << ": " << o.detail << " (" << fmt(secs, 1)
         << "s)";
    std::cout << line.str() << std::endl;
    summary << line.str() << "\n";
    if (!o.pass) ++failures;
  }
  std::ofstream(kRuns / "acceptance_summary.txt") << summary.str();
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
