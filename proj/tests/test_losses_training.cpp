#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "fedcon/client.hpp"
#include "fedcon/evaluation.hpp"
#include "fedcon/server.hpp"

using namespace fedcon;

namespace {

bool bitwise_equal(const ParameterSet<float>& a, const ParameterSet<float>& b) {
  if (!shape_compatible(a, b)) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib)
    if (std::memcmp(ia->second.value.data(), ib->second.value.data(), ia->second.value.size() * sizeof(float)))
      return false;
  return true;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng = make_rng(seed, {});
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = T(uniform(rng, lo, hi));
  return t;
}

std::vector<UnlabeledExample> random_images(std::size_t n, Shape shape, std::uint64_t seed) {
  std::vector<UnlabeledExample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({random_tensor<float>(shape, seed * 1000 + i, 0, 1)});
  return out;
}

Architecture toy(bool linear_projector = false, std::size_t input = 4, std::size_t hidden = 3,
                 std::size_t classes = 2) {
  ArchitectureSpec s;
  s.family = ArchFamily::toy;
  s.toy_input = input;
  s.toy_hidden = hidden;
  s.toy_classes = classes;
  s.toy_linear_projector = linear_projector;
  return build_architecture(s);
}

}  // namespace

TEST(Losses, CrossEntropyUniformTenClasses) {
  const Tensor<double> p({3, 10}, 0.1);
  const int labels[] = {0, 4, 9};
  EXPECT_NEAR(cross_entropy(p, labels).value, std::log(10.0), 1e-12);
}

TEST(Losses, CrossEntropyHalf) {
  const Tensor<double> p({1, 2}, 0.5);
  const int labels[] = {1};
  EXPECT_NEAR(cross_entropy(p, labels).value, std::log(2.0), 1e-12);
  const int bad[] = {2};
  EXPECT_THROW(cross_entropy(p, bad), DimensionError);
}

TEST(Losses, ConsistencyOppositeOneHots) {
  const Tensor<double> a({1, 2}, std::vector<double>{1, 0}), b({1, 2}, std::vector<double>{0, 1});
  EXPECT_DOUBLE_EQ(consistency_loss(a, b).value, 2.0);
  EXPECT_DOUBLE_EQ(consistency_loss(a, a).value, 0.0);
  EXPECT_DOUBLE_EQ(consistency_loss(a, b, 4.0).value, 0.5);
}

TEST(Losses, RegressionUnitDistance) {
  const Tensor<double> z({1, 2}, std::vector<double>{1, 0}), t({1, 2}, std::vector<double>{0, 0});
  const auto r = client_regression_loss(z, t);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  for (auto v : r.grad_target.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(client_regression_loss(z, Tensor<double>({1, 3})), DimensionError);
}

TEST(ServerLoss, EqualsCrossEntropyWhenTargetMatchesAndViewsIdentical) {
  const auto arch = toy();
  const auto state = init_state<double>(arch, 11);
  ServerViews<double> v;
  v.labeled1 = v.labeled2 = random_tensor<double>({5, 4}, 1);
  v.unlabeled1 = v.unlabeled2 = random_tensor<double>({7, 4}, 2);
  v.labels = {0, 1, 1, 0, 1};
  const auto r = server_loss_from_views(arch, state, v, {});
  EXPECT_EQ(r.consistency, 0.0);
  const auto probs = forward_head(arch, state.online, forward_backbone(arch, state.online, v.labeled1, {}), {});
  EXPECT_NEAR(r.total, cross_entropy(probs, std::span<const int>(v.labels)).value, 1e-14);
}

TEST(ServerLoss, AugmentNonePolicyGivesIdenticalViews) {
  const auto arch = build_architecture({ArchFamily::mnist});
  const auto state = init_state<float>(arch, 3);
  std::vector<LabeledExample> labeled;
  for (int i = 0; i < 4; ++i) labeled.push_back({random_tensor<float>({1, 28, 28}, 40 + i, 0, 1), i});
  ServerBatch batch;
  for (const auto& e : labeled) batch.labeled.push_back(&e);
  AugmentPolicy none;
  none.kind = AugmentKind::none;
  Rng rng = make_rng(1, {});
  const auto views = make_server_views<float>(batch, none, {}, rng);
  EXPECT_EQ(views.labeled1, views.labeled2);
  const auto r = server_loss_from_views(arch, state, views, {});
  EXPECT_EQ(r.consistency, 0.0);
  EXPECT_EQ(r.total, r.ce);
}

TEST(ServerLoss, ViewSwapIsBitwiseSymmetric) {
  const auto arch = build_architecture({ArchFamily::mnist, false});
  auto state = init_state<float>(arch, 7);
  // Perturb the target so both terms are active.
  for (auto& [name, e] : state.target)
    for (auto& v : e.value.values()) v *= 0.9f;
  ServerViews<float> v;
  v.labeled1 = random_tensor<float>({3, 1, 28, 28}, 5);
  v.labeled2 = random_tensor<float>({3, 1, 28, 28}, 6);
  v.unlabeled1 = random_tensor<float>({4, 1, 28, 28}, 7);
  v.unlabeled2 = random_tensor<float>({4, 1, 28, 28}, 8);
  v.labels = {1, 2, 3};
  auto swapped = v;
  std::swap(swapped.labeled1, swapped.labeled2);
  std::swap(swapped.unlabeled1, swapped.unlabeled2);
  const auto a = server_loss_from_views(arch, state, v, {});
  const auto b = server_loss_from_views(arch, state, swapped, {});
  EXPECT_GT(a.consistency, 0.0);
  EXPECT_EQ(a.total, b.total);
  EXPECT_TRUE(bitwise_equal(a.grads, b.grads));
}

TEST(ServerLoss, WithoutConsistencyIsPureCrossEntropy) {
  const auto arch = toy();
  auto state = init_state<double>(arch, 2);
  state.target = state.online.zeros_like();
  ServerViews<double> v;
  v.labeled1 = random_tensor<double>({2, 4}, 1);
  v.labeled2 = random_tensor<double>({2, 4}, 2);
  v.unlabeled1 = random_tensor<double>({3, 4}, 3);
  v.unlabeled2 = random_tensor<double>({3, 4}, 4);
  v.labels = {0, 1};
  const auto r = server_loss_from_views(arch, state, v, {false, true});
  EXPECT_EQ(r.consistency, 0.0);
  EXPECT_EQ(r.total, r.ce);
}

TEST(ServerSession, ZeroLearningRateKeepsOnlineAndPullsTargetOntoIt) {
  const auto arch = build_architecture({ArchFamily::mnist});
  auto state = init_state<float>(arch, 1);
  const auto before = state.online;
  std::vector<LabeledExample> labeled;
  for (int i = 0; i < 20; ++i) labeled.push_back({random_tensor<float>({1, 28, 28}, 200 + i, 0, 1), i % 10});
  const auto unlabeled = random_images(30, {1, 28, 28}, 3);
  Optimizer<float> opt({OptimizerScheme::sgd_momentum, 0.0, 0.9});
  ServerSessionConfig cfg;
  cfg.batch_labeled = 10;
  cfg.batch_unlabeled = 15;
  Rng rng = make_rng(9, {});
  std::size_t seen = 0;
  const auto summary = server_train_session<float>(arch, state, opt, labeled, unlabeled, cfg, rng,
                                                   [&](const ServerStepRecord&) { ++seen; });
  EXPECT_EQ(summary.steps, 2u);
  EXPECT_EQ(seen, 2u);
  EXPECT_EQ(state.step, 2u);
  EXPECT_TRUE(bitwise_equal(state.online, before));
  EXPECT_TRUE(bitwise_equal(state.target, before));
  EXPECT_TRUE(std::isfinite(summary.mean_total));
}

TEST(ClientLoss, TwoDimensionalHandComputed) {
  // Identity backbone (relu of a 2-vector) and identity linear projector.
  const auto arch = toy(true, 2, 2, 2);
  ParameterSet<double> online;
  add_stack_parameters(online, arch.backbone, Role::backbone);
  add_stack_parameters(online, arch.projector, Role::projector);
  for (const char* w : {"backbone.fc1.weight", "projector.fc1.weight"}) {
    online.at(w)[0] = 1;
    online.at(w)[3] = 1;
  }
  const auto target = extract_role(online, Role::backbone);
  const Tensor<double> v1({1, 2}, std::vector<double>{1, 2}), v2({1, 2}, std::vector<double>{3, 0.5});
  // Each direction: ||(1,2) - (3,0.5)||^2 = 4 + 2.25.
  EXPECT_NEAR(client_loss_from_views(arch, online, target, v1, v2).value, 6.25, 1e-14);
  // Normalized: u1 = (1,2)/sqrt5, u2 = (3,0.5)/sqrt(9.25); ||u1-u2||^2 = 2 - 2 cos.
  const double cos = (3 + 1) / (std::sqrt(5.0) * std::sqrt(9.25));
  EXPECT_NEAR(client_loss_from_views(arch, online, target, v1, v2, true).value, 2 - 2 * cos, 1e-14);
}

TEST(ClientLoss, TargetGetsNoGradientAndLossIgnoresNothingElse) {
  const auto arch = toy();
  const auto server = init_state<double>(arch, 4);
  const auto online = stitch(extract_role(server.online, Role::backbone), init_projector<double>(arch, 4, 0));
  const auto target = extract_role(server.online, Role::backbone);
  const auto v1 = random_tensor<double>({6, 4}, 1), v2 = random_tensor<double>({6, 4}, 2);
  const auto r = client_loss_from_views(arch, online, target, v1, v2);
  // Gradients exist for the online backbone and projector only.
  EXPECT_EQ(r.grads.size(), online.size());
  EXPECT_TRUE(r.grads.has_role(Role::projector));
  // The stop-gradient output is a constant: its regression gradient is exactly zero.
  const auto zt = forward_backbone(arch, target, v2, {});
  const auto z = forward_projector(arch, online, forward_backbone(arch, online, v1, {}), {});
  const auto reg = client_regression_loss(z, zt);
  for (auto g : reg.grad_target.values()) EXPECT_EQ(g, 0.0);
}

TEST(ClientLoss, ViewSwapIsBitwiseSymmetric) {
  const auto arch = build_architecture({ArchFamily::mnist});
  const auto server = init_state<float>(arch, 8);
  const auto online = stitch(extract_role(server.online, Role::backbone), init_projector<float>(arch, 8, 2));
  auto target = extract_role(server.online, Role::backbone);
  for (auto& [n, e] : target)
    for (auto& v : e.value.values()) v *= 1.1f;
  const auto v1 = random_tensor<float>({5, 1, 28, 28}, 11), v2 = random_tensor<float>({5, 1, 28, 28}, 12);
  const auto a = client_loss_from_views(arch, online, target, v1, v2);
  const auto b = client_loss_from_views(arch, online, target, v2, v1);
  EXPECT_EQ(a.value, b.value);
  EXPECT_TRUE(bitwise_equal(a.grads, b.grads));
}

TEST(ClientLoss, RejectsHeadsAndProjectorTargets) {
  const auto arch = toy();
  const auto server = init_state<double>(arch, 4);
  const auto backbone = extract_role(server.online, Role::backbone);
  const auto online = stitch(backbone, init_projector<double>(arch, 4, 0));
  const auto v = random_tensor<double>({2, 4}, 1);
  EXPECT_THROW(client_loss_from_views(arch, server.online, backbone, v, v), ParameterError);
  EXPECT_THROW(client_loss_from_views(arch, online, server.online, v, v), ParameterError);
  EXPECT_THROW(client_loss_from_views(arch, online, online, v, v), ParameterError);

  ClientShard<double> shard;
  shard.data = std::make_shared<const std::vector<UnlabeledExample>>(random_images(4, {4}, 1));
  EXPECT_THROW(client_train_session(arch, server.online, shard, ClientSessionConfig{}, 0, 0), ParameterError);
  EXPECT_THROW(client_train_session(arch, online, shard, ClientSessionConfig{}, 0, 0), ParameterError);
}

class ClientSessionTest : public ::testing::Test {
protected:
  Architecture arch = build_architecture({ArchFamily::mnist});
  ParameterSet<float> backbone = extract_role(init_state<float>(arch, 5).online, Role::backbone);
  ClientShard<float> shard;
  ClientSessionConfig cfg;

  void SetUp() override {
    shard.id = 3;
    shard.data = std::make_shared<const std::vector<UnlabeledExample>>(random_images(20, {1, 28, 28}, 2));
    cfg.batch_size = 10;
    cfg.optimizer = {OptimizerScheme::sgd_momentum, 0.0, 0.9};
  }
};

TEST_F(ClientSessionTest, ZeroLearningRateReturnsBroadcastUnchanged) {
  const auto r = client_train_session(arch, backbone, shard, cfg, 1, 1);
  EXPECT_EQ(r.steps, 2u);
  EXPECT_TRUE(bitwise_equal(r.backbone, backbone));
  EXPECT_FALSE(r.backbone.has_role(Role::projector));
  EXPECT_TRUE(std::isfinite(r.mean_loss));
}

TEST_F(ClientSessionTest, ProjectorPersistsAcrossSessions) {
  EXPECT_FALSE(shard.projector.has_value());
  cfg.optimizer.lr = 1e-3;
  client_train_session(arch, backbone, shard, cfg, 1, 1);
  ASSERT_TRUE(shard.projector.has_value());
  const auto fresh = init_projector<float>(arch, 1, shard.id);
  const auto after_first = *shard.projector;
  EXPECT_FALSE(bitwise_equal(after_first, fresh));
  EXPECT_FALSE(shard.target.has_value());

  // A second session starts from the persisted projector: with lr = 0 its
  // weights stay where the first session left them.
  cfg.optimizer.lr = 0.0;
  client_train_session(arch, backbone, shard, cfg, 1, 2);
  for (const auto& [name, e] : after_first)
    if (e.kind == EntryKind::weight) EXPECT_EQ(shard.projector->at(name), e.value) << name;
}

TEST_F(ClientSessionTest, DeterministicForSeedAndRound) {
  cfg.optimizer.lr = 1e-3;
  auto other = shard;
  const auto a = client_train_session(arch, backbone, shard, cfg, 1, 4);
  const auto b = client_train_session(arch, backbone, other, cfg, 1, 4);
  EXPECT_TRUE(bitwise_equal(a.backbone, b.backbone));
  EXPECT_EQ(a.mean_loss, b.mean_loss);
}

TEST(Evaluation, PerfectClassifier) {
  const auto arch = toy(false, 4, 3, 2);
  ParameterSet<double> p;
  add_stack_parameters(p, arch.backbone, Role::backbone);
  add_stack_parameters(p, arch.head, Role::head);
  p.at("backbone.fc1.weight")[0] = 1;  // h0 = x0
  p.at("backbone.fc1.weight")[5] = 1;  // h1 = x1
  p.at("head.fc1.weight")[0] = 1;
  p.at("head.fc1.weight")[4] = 1;
  std::vector<LabeledExample> test;
  for (int i = 0; i < 30; ++i) {
    Tensor<float> x({4});
    x[std::size_t(i % 2)] = 1.0f + float(i);
    test.push_back({x, i % 2});
  }
  EXPECT_DOUBLE_EQ(evaluate(arch, p, test, 7), 1.0);
}

TEST(Evaluation, ConstantClassifierMatchesClassShare) {
  const auto arch = toy(false, 4, 3, 10);
  auto p = init_state<double>(arch, 0).online.zeros_like();
  p.at("head.fc1.bias")[3] = 1;
  std::vector<LabeledExample> test;
  for (int i = 0; i < 100; ++i) test.push_back({random_tensor<float>({4}, std::uint64_t(i)), i % 10});
  EXPECT_DOUBLE_EQ(evaluate(arch, p, test), 0.1);
  EXPECT_THROW(evaluate(arch, p, std::span<const LabeledExample>{}), std::invalid_argument);
}

TEST(Evaluation, ArgmaxTiesPickLowestIndex) {
  const Tensor<double> s({2, 3}, std::vector<double>{0.2, 0.4, 0.4, 1, 1, 1});
  EXPECT_EQ(argmax_rows(s), (std::vector<int>{1, 0}));
}

TEST(Evaluation, AggregateRuns) {
  const double v[] = {0.90, 0.92, 0.94};
  const auto a = aggregate_runs(v);
  EXPECT_NEAR(a.mean, 0.92, 1e-12);
  EXPECT_NEAR(a.std, 0.02, 1e-12);
  EXPECT_EQ(a.runs, 3u);
  const double one[] = {0.5};
  EXPECT_EQ(aggregate_runs(one).std, 0.0);
}
