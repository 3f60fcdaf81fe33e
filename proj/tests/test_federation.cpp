#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "fedcon/checkpoint.hpp"
#include "fedcon/federation.hpp"
#include "fedcon/synthetic.hpp"

using namespace fedcon;
namespace fs = std::filesystem;

namespace {

bool bitwise_equal(const ParameterSet<float>& a, const ParameterSet<float>& b) {
  if (!shape_compatible(a, b)) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib)
    if (std::memcmp(ia->second.value.data(), ib->second.value.data(), ia->second.value.size() * sizeof(float)))
      return false;
  return true;
}

bool same_federation(const FederationState<float>& a, const FederationState<float>& b) {
  if (a.round != b.round || a.server.step != b.server.step || a.clients.size() != b.clients.size()) return false;
  if (!bitwise_equal(a.server.online, b.server.online) || !bitwise_equal(a.server.target, b.server.target))
    return false;
  if (!bitwise_equal(a.server_optimizer.velocity(), b.server_optimizer.velocity())) return false;
  for (std::size_t k = 0; k < a.clients.size(); ++k) {
    if (a.clients[k].projector.has_value() != b.clients[k].projector.has_value()) return false;
    if (a.clients[k].projector && !bitwise_equal(*a.clients[k].projector, *b.clients[k].projector)) return false;
  }
  return true;
}

ParameterSet<float> vec(std::initializer_list<float> v) {
  ParameterSet<float> p;
  p.add("backbone.w", Tensor<float>({v.size()}, std::vector<float>(v)), Role::backbone);
  return p;
}

class FederationTest : public ::testing::Test {
protected:
  Architecture arch = build_architecture({ArchFamily::mnist});
  std::vector<LabeledExample> train = synthetic_examples(600, 1, 28, 10, 1);
  std::vector<LabeledExample> test = synthetic_examples(100, 1, 28, 10, 2);
  DataSplit split;
  FederationConfig cfg;

  void SetUp() override {
    SplitSpec spec;
    spec.gamma = 0.1;
    spec.num_clients = 5;
    spec.seed = 3;
    split = make_split(train, spec);
    cfg.clients_per_round = 2;
    cfg.server.batch_labeled = 10;
    cfg.server.batch_unlabeled = 20;
    cfg.client.batch_size = 20;
    cfg.server_optimizer = {OptimizerScheme::sgd_momentum, 0.01, 0.9};
    cfg.client.optimizer = {OptimizerScheme::sgd_momentum, 0.001, 0.9};
  }

  FederationState<float> fresh(std::uint64_t seed = 11) {
    return init_federation<float>(arch, split, seed, cfg.server_optimizer);
  }
};

}  // namespace

TEST(Selection, DistinctSortedAndDeterministic) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng a = make_rng(seed, {}), b = make_rng(seed, {});
    const auto s = select_clients(100, 10, a);
    EXPECT_EQ(s, select_clients(100, 10, b));
    EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 10u);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_LT(s.back(), 100u);
  }
  Rng rng = make_rng(1, {});
  EXPECT_EQ(select_clients(4, 4, rng), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_THROW(select_clients(3, 4, rng), std::invalid_argument);
}

TEST(Selection, RoughlyUniform) {
  std::vector<int> hits(20);
  Rng rng = make_rng(9, {});
  for (int t = 0; t < 4000; ++t)
    for (auto k : select_clients(20, 5, rng)) ++hits[k];
  // Expected 1000 per client; 5 sigma is about 140.
  for (int h : hits) EXPECT_NEAR(h, 1000, 140);
}

TEST(Aggregation, ElementwiseMean) {
  const auto g = aggregate_backbones<float>({vec({1, 3}), vec({3, 5})});
  EXPECT_EQ(g.at("backbone.w")[0], 2.0f);
  EXPECT_EQ(g.at("backbone.w")[1], 4.0f);
}

TEST(Aggregation, IdenticalOperandsReturnedExactly) {
  const auto a = vec({0.1f, -3.3f, 1e-7f});
  EXPECT_TRUE(bitwise_equal(aggregate_backbones<float>({a, a, a, a, a, a, a}), a));
  EXPECT_TRUE(bitwise_equal(aggregate_backbones<float>({a}), a));
}

TEST(Aggregation, PermutationInvariantBitwise) {
  Rng rng = make_rng(4, {});
  std::vector<ParameterSet<float>> ups;
  for (int k = 0; k < 7; ++k) {
    ParameterSet<float> p;
    Tensor<float> t({64});
    for (auto& v : t.values()) v = float(uniform(rng, -1, 1));
    p.add("backbone.w", t, Role::backbone);
    ups.push_back(p);
  }
  const auto ref = aggregate_backbones(ups);
  for (int trial = 0; trial < 10; ++trial) {
    shuffle(ups.begin(), ups.end(), rng);
    EXPECT_TRUE(bitwise_equal(aggregate_backbones(ups), ref));
  }
}

TEST(Aggregation, WeightsAndScaling) {
  const auto w = aggregate_backbones<float>({vec({0}), vec({4})}, {1.0, 3.0});
  EXPECT_EQ(w.at("backbone.w")[0], 3.0f);
  const auto eq = aggregate_backbones<float>({vec({1, 2}), vec({5, 7})}, {2.0, 2.0});
  EXPECT_TRUE(bitwise_equal(eq, aggregate_backbones<float>({vec({1, 2}), vec({5, 7})})));
  // Mean of scaled uploads equals the scaled mean (powers of two are exact).
  const auto s = aggregate_backbones<float>({vec({0.5f, 1.5f}), vec({2.5f, 3.5f})});
  const auto s4 = aggregate_backbones<float>({vec({2.0f, 6.0f}), vec({10.0f, 14.0f})});
  EXPECT_EQ(s4.at("backbone.w")[0], 4 * s.at("backbone.w")[0]);
  EXPECT_EQ(s4.at("backbone.w")[1], 4 * s.at("backbone.w")[1]);
}

TEST(Aggregation, RejectsBadUploads) {
  EXPECT_THROW(aggregate_backbones<float>({}), std::invalid_argument);
  EXPECT_THROW(aggregate_backbones<float>({vec({1}), vec({1, 2})}), ParameterError);
  auto head = vec({1});
  head.add("head.w", Tensor<float>({1}), Role::head);
  EXPECT_THROW(aggregate_backbones<float>({head, head}), ParameterError);
  EXPECT_THROW(aggregate_backbones<float>({vec({1}), vec({2})}, {1.0}), std::invalid_argument);
  EXPECT_THROW(aggregate_backbones<float>({vec({1}), vec({2})}, {1.0, 0.0}), std::invalid_argument);
}

TEST_F(FederationTest, CustodyOverThreeRounds) {
  auto fed = fresh();
  RoundHooks<float> hooks;
  std::size_t broadcasts = 0, uploads = 0;
  hooks.on_broadcast = [&](const ParameterSet<float>& p) {
    ++broadcasts;
    EXPECT_TRUE(p.has_role(Role::backbone));
    EXPECT_FALSE(p.has_role(Role::head));
    EXPECT_FALSE(p.has_role(Role::projector));
  };
  hooks.on_upload = [&](std::size_t, const ParameterSet<float>& p) {
    ++uploads;
    EXPECT_FALSE(p.has_role(Role::head));
    EXPECT_FALSE(p.has_role(Role::projector));
  };
  std::set<std::size_t> ever;
  for (int r = 0; r < 3; ++r) {
    const auto report = run_round<float>(arch, fed, cfg, {}, false, hooks);
    EXPECT_EQ(report.round, std::uint64_t(r + 1));
    EXPECT_EQ(report.selected.size(), 2u);
    ever.insert(report.selected.begin(), report.selected.end());
    EXPECT_FALSE(fed.server.online.has_role(Role::projector));
    EXPECT_TRUE(fed.server.online.has_role(Role::head));
  }
  EXPECT_EQ(broadcasts, 3u);
  EXPECT_EQ(uploads, 6u);
  for (std::size_t k = 0; k < fed.clients.size(); ++k)
    EXPECT_EQ(fed.clients[k].projector.has_value(), ever.contains(k)) << k;
}

TEST_F(FederationTest, ZeroClientLearningRateIsServerSessionFixedPoint) {
  cfg.client.optimizer.lr = 0.0;
  auto fed = fresh();
  // Replay the server session on a copy: the round must leave exactly its output.
  auto replay = fed.server;
  Optimizer<float> opt(cfg.server_optimizer);
  Rng rng = make_rng(fed.seed, {stream::server, fed.round});
  server_train_session(arch, replay, opt, *fed.labeled, *fed.unlabeled, cfg.server, rng);
  run_round<float>(arch, fed, cfg);
  EXPECT_TRUE(bitwise_equal(fed.server.online, replay.online));
  EXPECT_TRUE(bitwise_equal(fed.server.target, replay.target));
}

TEST_F(FederationTest, SingleClientPerRound) {
  cfg.clients_per_round = 1;
  auto fed = fresh();
  ParameterSet<float> upload;
  RoundHooks<float> hooks;
  hooks.on_upload = [&](std::size_t, const ParameterSet<float>& p) { upload = p; };
  const auto report = run_round<float>(arch, fed, cfg, {}, false, hooks);
  ASSERT_EQ(report.selected.size(), 1u);
  EXPECT_TRUE(bitwise_equal(extract_role(fed.server.online, Role::backbone), upload));
}

TEST_F(FederationTest, DeterministicAndWorkerCountIndependent) {
  auto a = fresh(), b = fresh();
  auto cfg2 = cfg;
  cfg2.workers = 2;
  for (int r = 0; r < 2; ++r) {
    const auto ra = run_round<float>(arch, a, cfg, test, true);
    const auto rb = run_round<float>(arch, b, cfg2, test, true);
    EXPECT_EQ(ra.selected, rb.selected);
    EXPECT_EQ(ra.client_loss, rb.client_loss);
    ASSERT_TRUE(ra.accuracy.has_value());
    EXPECT_EQ(*ra.accuracy, *rb.accuracy);
    EXPECT_GE(*ra.accuracy, 0.0);
    EXPECT_LE(*ra.accuracy, 1.0);
  }
  EXPECT_TRUE(same_federation(a, b));
  auto c = fresh(12);
  run_round<float>(arch, c, cfg);
  EXPECT_FALSE(bitwise_equal(c.server.online, a.server.online));
}

TEST_F(FederationTest, CheckpointRoundTrip) {
  auto fed = fresh();
  run_round<float>(arch, fed, cfg);
  const auto path = fs::temp_directory_path() / "fedcon_test_ckpt.bin";
  save_checkpoint(path, fed);
  auto loaded = fresh();
  load_checkpoint(path, loaded);
  EXPECT_TRUE(same_federation(fed, loaded));

  auto wrong_seed = fresh(99);
  EXPECT_THROW(load_checkpoint(path, wrong_seed), CheckpointError);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(load_checkpoint(path, loaded), CheckpointError);
  EXPECT_THROW(load_checkpoint(fs::temp_directory_path() / "fedcon_missing.bin", loaded), CheckpointError);
}

TEST_F(FederationTest, StateRoundTripInDouble) {
  const auto s = init_state<double>(arch, 5);
  const auto path = fs::temp_directory_path() / "fedcon_test_state.bin";
  save_state(path, s);
  EXPECT_EQ(load_state<double>(path), s);
  EXPECT_THROW(load_state<float>(path), CheckpointError);
}

TEST_F(FederationTest, ResumeMatchesUninterruptedRun) {
  auto straight = fresh();
  run_round<float>(arch, straight, cfg);
  run_round<float>(arch, straight, cfg);

  auto first = fresh();
  run_round<float>(arch, first, cfg);
  const auto path = fs::temp_directory_path() / "fedcon_test_resume.bin";
  save_checkpoint(path, first);
  auto resumed = fresh();
  load_checkpoint(path, resumed);
  run_round<float>(arch, resumed, cfg);
  EXPECT_TRUE(same_federation(straight, resumed));
}
