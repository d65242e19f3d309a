#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "faircop/network.hpp"

using namespace faircop;

namespace {

Vector random_vec(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> g;
  Vector v(dim);
  for (auto& x : v) x = g(rng);
  return v;
}

std::vector<Vector> random_set(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::vector<Vector> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_vec(rng, dim));
  return out;
}

}  // namespace

TEST(Net, IdentityForward) {
  const auto net = identity_net(3);
  const Vector x{1.5, -2, 0.25};
  EXPECT_EQ(net.forward(x), x);
  EXPECT_EQ(net.parameter_count(), 12u);
}

TEST(Net, HandComputedForward) {
  DenseLayer l1{2, 2, {1, -1, 2, 0}, {0, -5}, Activation::relu};
  DenseLayer l2{2, 1, {3, 1}, {0.5}, Activation::identity};
  const ProjectionNet net({l1, l2});
  // h = relu([1-2, 2-5]) = [0, 0]; out = 0.5
  EXPECT_DOUBLE_EQ(net.forward(Vector{1, 2})[0], 0.5);
  // h = relu([3-1, 6-5]) = [2, 1]; out = 6 + 1 + 0.5
  EXPECT_DOUBLE_EQ(net.forward(Vector{3, 1})[0], 7.5);
}

TEST(Net, RejectsBrokenChains) {
  DenseLayer a{2, 3, std::vector<double>(6), std::vector<double>(3), Activation::relu};
  DenseLayer b{4, 1, std::vector<double>(4), std::vector<double>(1), Activation::identity};
  EXPECT_THROW(ProjectionNet({a, b}), std::invalid_argument);
  DenseLayer c{3, 1, std::vector<double>(3), std::vector<double>(1), Activation::relu};
  EXPECT_THROW(ProjectionNet({a, c}), std::invalid_argument);
  EXPECT_THROW(identity_net(2).forward(Vector{1, 2, 3}), std::invalid_argument);
}

TEST(Net, InitShapesAndDeterminism) {
  const auto a = init_net(6, {4}, 3, 42);
  const auto b = init_net(6, {4}, 3, 42);
  const auto c = init_net(6, {4}, 3, 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  ASSERT_EQ(a.layers().size(), 2u);
  EXPECT_EQ(a.layers()[0].activation, Activation::relu);
  EXPECT_EQ(a.layers()[1].activation, Activation::identity);
  EXPECT_EQ(a.parameter_count(), 6u * 4 + 4 + 4 * 3 + 3);
  const double bound = std::sqrt(6.0 / 6.0);
  for (double w : a.layers()[0].weights) EXPECT_LE(std::abs(w), bound);
  for (double bias : a.layers()[0].bias) EXPECT_EQ(bias, 0.0);
}

TEST(Net, FlatParametersRoundTrip) {
  auto net = init_net(5, {7, 3}, 2, 1);
  auto p = net.flat_parameters();
  ASSERT_EQ(p.size(), net.parameter_count());
  for (auto& x : p) x += 1.0;
  net.set_flat_parameters(p);
  EXPECT_EQ(net.flat_parameters(), p);
  p.pop_back();
  EXPECT_THROW(net.set_flat_parameters(p), std::invalid_argument);
}

TEST(Net, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto net = init_net(5, {6, 4}, 3, 9);
  const Vector x = random_vec(rng, 5);
  const Vector w = random_vec(rng, 3);  // L = w . f(x)
  std::vector<double> grad(net.parameter_count(), 0.0);
  backward(net, forward_trace(net, x), w, grad);
  auto params = net.flat_parameters();
  auto loss = [&] { return dot(w, net.forward(x)); };
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + 1e-6;
    net.set_flat_parameters(params);
    const double up = loss();
    params[i] = orig - 1e-6;
    net.set_flat_parameters(params);
    const double down = loss();
    params[i] = orig;
    net.set_flat_parameters(params);
    EXPECT_NEAR(grad[i], (up - down) / 2e-6, 1e-6) << "param " << i;
  }
}

TEST(Net, BatchLossGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  auto net = init_net(6, {4}, 3, 2);
  const auto s = random_set(rng, 3, 6);
  const auto d = random_set(rng, 3, 6);
  for (auto kind : {LossKind::scloss, LossKind::scloss_alt}) {
    std::vector<double> grad;
    batch_loss(net, s, d, 0.5, kind, &grad);
    auto params = net.flat_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double orig = params[i];
      params[i] = orig + 1e-5;
      net.set_flat_parameters(params);
      const double up = batch_loss(net, s, d, 0.5, kind, nullptr);
      params[i] = orig - 1e-5;
      net.set_flat_parameters(params);
      const double down = batch_loss(net, s, d, 0.5, kind, nullptr);
      params[i] = orig;
      net.set_flat_parameters(params);
      EXPECT_NEAR(grad[i], (up - down) / 2e-5, 1e-6);
    }
  }
}

TEST(Net, BatchTooSmall) {
  auto net = identity_net(2);
  EXPECT_THROW(batch_loss(net, {{1, 0}}, {{0, 1}}, 0.5, LossKind::scloss, nullptr), BatchTooSmall);
  EXPECT_THROW(batch_loss(net, {{1, 0}, {1, 1}}, {{0, 1}}, 0.5, LossKind::scloss_alt, nullptr),
               BatchTooSmall);
  EXPECT_EQ(min_dissimilar(LossKind::scloss), 1u);
  EXPECT_EQ(min_dissimilar(LossKind::scloss_alt), 2u);
}

TEST(Optimizer, SgdStep) {
  auto net = identity_net(1);  // params: w, b
  auto opt = make_optimizer(OptimizerKind::sgd, 0.1);
  apply_gradient(net, std::vector<double>{2.0, -1.0}, opt);
  EXPECT_DOUBLE_EQ(net.flat_parameters()[0], 1.0 - 0.2);
  EXPECT_DOUBLE_EQ(net.flat_parameters()[1], 0.1);
}

TEST(Optimizer, AdamFirstStepIsSignTimesLr) {
  // bias-corrected m/sqrt(v) = g/|g| on the first step
  auto net = identity_net(1);
  auto opt = make_optimizer(OptimizerKind::adam, 0.01);
  apply_gradient(net, std::vector<double>{3.0, -0.5}, opt);
  EXPECT_NEAR(net.flat_parameters()[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(net.flat_parameters()[1], 0.01, 1e-9);
  EXPECT_EQ(opt.timestep, 1u);
}

TEST(Optimizer, ZeroLearningRateLeavesParameters) {
  std::mt19937_64 rng(1);
  auto net = init_net(4, {3}, 2, 5);
  const auto before = net.flat_parameters();
  auto opt = make_optimizer(OptimizerKind::adam, 0.0);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  train_step(net, random_set(rng, 3, 4), random_set(rng, 2, 4), cfg, LossKind::scloss, opt);
  EXPECT_EQ(net.flat_parameters(), before);
}

TEST(Training, StepsReduceLoss) {
  std::mt19937_64 rng(21);
  auto net = init_net(8, {16}, 4, 3);
  const auto s = random_set(rng, 4, 8);
  const auto d = random_set(rng, 4, 8);
  auto opt = make_optimizer(OptimizerKind::adam, 1e-2);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  const double first = train_step(net, s, d, cfg, LossKind::scloss, opt);
  for (int i = 0; i < 50; ++i) train_step(net, s, d, cfg, LossKind::scloss, opt);
  EXPECT_LT(batch_loss(net, s, d, 0.5, LossKind::scloss, nullptr), first - 0.5);
}

TEST(Pretrain, ZeroStepsKeepsInit) {
  EmbeddingView v{"mix", 4, std::vector<float>(40, 0.5f)};
  const auto net = init_net(4, {8}, 3, 7);
  PretrainConfig cfg;
  cfg.steps = 0;
  EXPECT_EQ(pretrain(net, v, cfg).net, net);
  EXPECT_TRUE(pretrain(net, v, cfg).losses.empty());
}

TEST(Pretrain, LossDecreasesAndDeterministic) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g;
  EmbeddingView v{"mix", 8, {}};
  for (int i = 0; i < 8 * 200; ++i) v.data.push_back(g(rng));
  PretrainConfig cfg;
  cfg.steps = 150;
  cfg.batch_size = 16;
  cfg.train.learning_rate = 3e-3;
  cfg.train.seed = 4;
  const auto a = pretrain(init_net(8, {16}, 8, 1), v, cfg);
  const auto b = pretrain(init_net(8, {16}, 8, 1), v, cfg);
  EXPECT_EQ(a.net, b.net);
  ASSERT_EQ(a.losses.size(), 150u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += a.losses[i];
    tail += a.losses[140 + i];
  }
  EXPECT_LT(tail, head);
}

TEST(Checkpoint, RoundTripExact) {
  const auto net = init_net(5, {4, 3}, 2, 99);
  const auto text = to_checkpoint_json(net);
  EXPECT_EQ(from_checkpoint_json(text), net);
  EXPECT_THROW(from_checkpoint_json("{\"format\":\"other\"}"), std::invalid_argument);
}
