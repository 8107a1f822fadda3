#include "fedimb/flcore/algorithms.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

using namespace fedimb;
using namespace fedimb::fl;
namespace ft = fedimb::testing;

namespace {

struct Bench {
  LabeledDataset ds = make_synthetic_blobs(20, 3, 4, 0.3, 1);
  ModelShape shape{4, 5, 3};
  ModelParams global = init_params(shape, 2);
  std::vector<std::size_t> shard;
  HyperParams hp;

  Bench() {
    for (std::size_t i = 0; i < ds.size(); i += 2) shard.push_back(i);
    hp.learning_rate = 0.1;
    hp.local_epochs = 3;
    hp.batch_size = 7;
  }
};

// Scalar model: a single free parameter (the output bias of a 0-input,
// 0-hidden, 1-class network).
const ModelShape kScalar{0, 0, 1};

} // namespace

TEST(LocalTraining, ZeroLearningRateLeavesParamsUnchanged) {
  Bench s;
  s.hp.learning_rate = 0.0;
  EXPECT_TRUE(ft::bitwise_equal(local_train_fedavg(s.global, s.ds, s.shard, s.hp, 0).params, s.global));
}

TEST(LocalTraining, StepCountAndSampleCount) {
  Bench s;
  const auto r = local_train_fedavg(s.global, s.ds, s.shard, s.hp, 0);
  EXPECT_EQ(r.n_samples, 30u);
  EXPECT_EQ(r.steps, 3u * 5u);
  EXPECT_EQ(local_step_count(30, s.hp), r.steps);
}

// d = h = 1, B = 2, x = 1, label 0, W1 = 1, W2 = [1, -1]. With
// q = 1 / (1 + e^2) the gradient is dW1 = db1 = -2q, dW2 = db2 = [-q, q].
TEST(LocalTraining, HandComputedSingleStep) {
  LabeledDataset ds;
  ds.features = Matrix(1, 1, 1.0);
  ds.labels = {0};
  ds.num_classes = 2;
  const ModelParams w0(ModelShape{1, 1, 2}, {1.0, 0.0, 1.0, -1.0, 0.0, 0.0});
  HyperParams hp;
  hp.learning_rate = 0.1;
  hp.local_epochs = 1;
  hp.batch_size = 1;
  const std::vector<std::size_t> shard{0};
  const auto w1 = local_train_fedavg(w0, ds, shard, hp, 0).params;
  const double q = 1.0 / (1.0 + std::exp(2.0));
  const std::vector<double> expect{1 + 0.2 * q, 0.2 * q, 1 + 0.1 * q, -1 - 0.1 * q, 0.1 * q, -0.1 * q};
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(w1.values()[i], expect[i], 1e-15);
}

TEST(LocalTraining, DeterministicAndSeedSensitive) {
  Bench s;
  const auto a = local_train_fedavg(s.global, s.ds, s.shard, s.hp, 5).params;
  EXPECT_TRUE(ft::bitwise_equal(a, local_train_fedavg(s.global, s.ds, s.shard, s.hp, 5).params));
  EXPECT_FALSE(a == local_train_fedavg(s.global, s.ds, s.shard, s.hp, 6).params);
}

TEST(LocalTraining, EmptyShardAndDivergence) {
  Bench s;
  EXPECT_THROW(local_train_fedavg(s.global, s.ds, std::vector<std::size_t>{}, s.hp, 0), EmptyShard);
  s.hp.learning_rate = 1e300;
  EXPECT_THROW(local_train_fedavg(s.global, s.ds, s.shard, s.hp, 0), NumericFailure);
}

TEST(ReductionLattice, FedProxWithZeroMuIsFedAvg) {
  Bench s;
  s.hp.prox_mu = 0.0;
  EXPECT_TRUE(ft::bitwise_equal(local_train_fedprox(s.global, s.ds, s.shard, s.hp, 3).params,
                                local_train_fedavg(s.global, s.ds, s.shard, s.hp, 3).params));
  s.hp.prox_mu = 0.5;
  EXPECT_FALSE(local_train_fedprox(s.global, s.ds, s.shard, s.hp, 3).params ==
               local_train_fedavg(s.global, s.ds, s.shard, s.hp, 3).params);
}

TEST(ReductionLattice, MoonWithZeroMuOrNoHistoryIsFedAvg) {
  Bench s;
  const auto fedavg = local_train_fedavg(s.global, s.ds, s.shard, s.hp, 3).params;
  const auto prev = init_params(s.shape, 99);
  EXPECT_TRUE(ft::bitwise_equal(local_train_moon(s.global, s.ds, s.shard, s.hp, nullptr, 3).params, fedavg));
  s.hp.moon_mu = 0.0;
  EXPECT_TRUE(ft::bitwise_equal(local_train_moon(s.global, s.ds, s.shard, s.hp, &prev, 3).params, fedavg));
  s.hp.moon_mu = 1.0;
  EXPECT_FALSE(local_train_moon(s.global, s.ds, s.shard, s.hp, &prev, 3).params == fedavg);
}

TEST(ReductionLattice, ScaffoldWithZeroVariatesIsFedAvg) {
  Bench s;
  const ModelParams zero(s.shape);
  const auto r = local_train_scaffold(s.global, s.ds, s.shard, s.hp, zero, zero, 3);
  EXPECT_TRUE(ft::bitwise_equal(r.local.params, local_train_fedavg(s.global, s.ds, s.shard, s.hp, 3).params));
}

// Scalar surrogate (w - 2)^2 / 2 with w_global = 0, mu = 1, lr = 0.1.
TEST(FedProx, ScalarSurrogateStep) {
  const ModelParams global(kScalar, {0.0});
  Regularizer reg;
  reg.prox_anchor = &global;
  reg.prox_mu = 1.0;
  auto objective = [&](const ModelParams& w, std::span<const std::size_t>) {
    const double v = w.values()[0];
    LossAndGrad lg{0.5 * (v - 2) * (v - 2), 0.0, ModelParams(kScalar, {v - 2})};
    apply_param_regularizers(w, reg, lg.loss, lg.grad);
    return lg;
  };
  HyperParams hp;
  hp.learning_rate = 0.1;
  hp.local_epochs = 1;
  hp.batch_size = 1;
  const std::vector<std::size_t> one{0};
  const double w1 = local_sgd(global, one, hp, 0, objective).params.values()[0];
  EXPECT_NEAR(w1, 0.2, 1e-15);

  // one-dimensional numeric oracle on the surrogate itself
  const auto fd = ft::central_difference(
      [](std::span<const double> v) { return 0.5 * (v[0] - 2) * (v[0] - 2) + 0.5 * v[0] * v[0]; },
      {0.0});
  EXPECT_NEAR(w1, 0.0 - 0.1 * fd[0], 1e-8);
}

TEST(FedProx, FirstStepProxContributionIsZero) {
  Bench s;
  Regularizer reg;
  reg.prox_anchor = &s.global;
  reg.prox_mu = 3.0;
  const Matrix x = gather_rows(s.ds.features, s.shard);
  std::vector<int> y;
  for (auto i : s.shard) y.push_back(s.ds.labels[i]);
  EXPECT_TRUE(ft::bitwise_equal(loss_and_grad(s.global, x, y, reg).grad, loss_and_grad(s.global, x, y).grad));
}

// g = 1, c = 0.5, c_i = 0.2, lr = 0.1, w0 = 0.
TEST(Scaffold, ScalarStepAndControlUpdate) {
  const ModelParams w0(kScalar, {0.0}), c(kScalar, {0.5}), ci(kScalar, {0.2});
  const ModelParams correction = difference(c, ci);
  Regularizer reg;
  reg.linear_correction = &correction;
  auto objective = [&](const ModelParams& w, std::span<const std::size_t>) {
    LossAndGrad lg{w.values()[0], 0.0, ModelParams(kScalar, {1.0})};
    apply_param_regularizers(w, reg, lg.loss, lg.grad);
    return lg;
  };
  HyperParams hp;
  hp.learning_rate = 0.1;
  hp.local_epochs = 1;
  hp.batch_size = 1;
  const std::vector<std::size_t> one{0};
  const auto local = local_sgd(w0, one, hp, 0, objective);
  EXPECT_NEAR(local.params.values()[0], -0.13, 1e-15);
  const auto next = scaffold_control_update(ci, c, w0, local.params, local.steps, hp.learning_rate);
  EXPECT_NEAR(next.values()[0], 1.0, 1e-12);
}

TEST(Scaffold, NoMovementGivesShiftedControl) {
  const ModelShape s{1, 1, 1};
  const ModelParams w(s, {1, 2, 3, 4}), c(s, {0.5, 0.5, 0.5, 0.5}), ci(s, {1, 0, -1, 2});
  const auto next = scaffold_control_update(ci, c, w, w, 4, 0.1);
  EXPECT_EQ(next, ModelParams(s, {0.5, -0.5, -1.5, 1.5}));
  EXPECT_THROW(scaffold_control_update(ci, c, w, w, 0, 0.1), InvalidParameter);
}

TEST(Scaffold, LocalResultCarriesControlDelta) {
  Bench s;
  const ModelParams zero(s.shape);
  const auto c = init_params(s.shape, 7);
  const auto r = local_train_scaffold(s.global, s.ds, s.shard, s.hp, c, zero, 1);
  EXPECT_EQ(r.control_delta, difference(r.control, zero));
  EXPECT_EQ(r.control, scaffold_control_update(zero, c, s.global, r.local.params, r.local.steps,
                                               s.hp.learning_rate));
}

// Every algorithm's full objective, gradient-checked on 100 random tiny models.
TEST(Gradient, EveryAlgorithmObjective) {
  std::mt19937_64 rng(123);
  int checked = 0;
  while (checked < 100) {
    const ModelShape s{1 + rng() % 5, 1 + rng() % 5, 2 + rng() % 4};
    const auto w = ft::random_params(s, rng, 0.8);
    const auto x = ft::random_matrix(4, s.input, rng);
    if (ft::min_abs_preactivation(w, x) < 1e-3) continue;
    std::vector<int> y;
    for (int r = 0; r < 4; ++r) y.push_back(static_cast<int>(rng() % s.classes));
    const auto other = ft::random_params(s, rng, 0.8), prev = ft::random_params(s, rng, 0.8);
    const auto corr = ft::random_params(s, rng, 0.1);
    auto flat = [](const ModelParams& p) { return std::vector<double>(p.values().begin(), p.values().end()); };
    const auto fo = flat(other), fp = flat(prev), fc = flat(corr), fw = flat(w);

    std::vector<std::pair<Regularizer, ft::ReferenceTerms>> cases(4);
    cases[1].first.prox_anchor = &other;
    cases[1].first.prox_mu = 0.01;
    cases[1].second.prox_anchor = &fo;
    cases[1].second.prox_mu = 0.01;
    cases[2].first.linear_correction = &corr;
    cases[2].second.linear = &fc;
    cases[3].first.contrastive_global = &other;
    cases[3].first.contrastive_prev = &prev;
    cases[3].first.contrastive_mu = 1.0;
    cases[3].second.con_global = &fo;
    cases[3].second.con_prev = &fp;
    cases[3].second.con_mu = 1.0;
    for (const auto& [reg, terms] : cases) {
      const auto lg = loss_and_grad(w, x, y, reg);
      const auto fd = ft::central_difference(
          [&](std::span<const double> v) { return ft::reference_objective(v, s, x, y, terms); }, fw);
      EXPECT_LT(ft::relative_error(lg.grad.values(), fd), 1e-6);
    }
    ++checked;
  }
}

TEST(HyperParams, Validation) {
  HyperParams hp;
  EXPECT_NO_THROW(validate(hp));
  hp.learning_rate = 0.0;
  EXPECT_THROW(validate(hp), InvalidParameter);
  hp = {};
  hp.moon_tau = 0.0;
  EXPECT_THROW(validate(hp), InvalidParameter);
  hp = {};
  hp.local_epochs = 0;
  EXPECT_THROW(validate(hp), InvalidParameter);
  EXPECT_EQ(parse_algorithm("scaffold"), Algorithm::Scaffold);
  EXPECT_FALSE(parse_algorithm("fedsgd"));
}
