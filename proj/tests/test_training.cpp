#include "fedimb/flcore/training.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

using namespace fedimb;
using namespace fedimb::fl;
namespace ft = fedimb::testing;

namespace {

struct World {
  LabeledDataset train = make_synthetic_blobs(30, 4, 6, 0.3, 1);
  LabeledDataset test = make_synthetic_blobs(10, 4, 6, 0.3, 2);
  ClientShards shards = dirichlet_partition(train, {10, 0.5, 3});

  TrainingConfig config(Algorithm a) const {
    TrainingConfig cfg;
    cfg.algorithm = a;
    cfg.hidden = 8;
    cfg.rounds = 6;
    cfg.clients_per_round = 4;
    cfg.hyper.learning_rate = 0.1;
    cfg.hyper.batch_size = 5;
    return cfg;
  }
};

void expect_same_run(const TrainingRun& a, const TrainingRun& b) {
  ASSERT_EQ(a.rounds.size(), b.rounds.size());
  for (std::size_t r = 0; r < a.rounds.size(); ++r) {
    EXPECT_EQ(a.rounds[r].test_accuracy, b.rounds[r].test_accuracy);
    EXPECT_EQ(a.rounds[r].mean_train_loss, b.rounds[r].mean_train_loss);
    EXPECT_EQ(a.rounds[r].selected_clients, b.rounds[r].selected_clients);
    EXPECT_EQ(a.rounds[r].grouped_delta, b.rounds[r].grouped_delta);
  }
  EXPECT_TRUE(ft::bitwise_equal(a.final_params, b.final_params));
}

} // namespace

TEST(RunFederated, DeterministicForEveryAlgorithmAndThreadCount) {
  const World w;
  for (auto a : {Algorithm::FedAvg, Algorithm::FedProx, Algorithm::Scaffold, Algorithm::Moon}) {
    auto cfg = w.config(a);
    const auto one = run_federated(w.train, w.test, w.shards, cfg, 7);
    cfg.threads = 4;
    const auto four = run_federated(w.train, w.test, w.shards, cfg, 7);
    SCOPED_TRACE(std::string(to_string(a)));
    expect_same_run(one, four);
    expect_same_run(one, run_federated(w.train, w.test, w.shards, w.config(a), 7));
    EXPECT_EQ(one.rounds.size(), 6u);
    for (const auto& log : one.rounds) {
      EXPECT_EQ(log.selected_clients.size(), 4u);
      EXPECT_TRUE(std::is_sorted(log.selected_clients.begin(), log.selected_clients.end()));
      EXPECT_GE(log.grouped_delta, 0.0);
      EXPECT_LE(log.grouped_delta, 1.0);
    }
  }
}

TEST(RunFederated, AlgorithmsDiverge) {
  const World w;
  const auto fedavg = run_federated(w.train, w.test, w.shards, w.config(Algorithm::FedAvg), 7);
  for (auto a : {Algorithm::FedProx, Algorithm::Scaffold, Algorithm::Moon})
    EXPECT_FALSE(run_federated(w.train, w.test, w.shards, w.config(a), 7).final_params ==
                 fedavg.final_params)
        << to_string(a);
}

// All clients hold the full training set, train for one full-batch epoch and
// all participate: each round is one step of centralized gradient descent.
TEST(RunFederated, IdenticalShardsMatchCentralizedGradientDescent) {
  const World w;
  ClientShards same;
  same.num_classes = w.train.num_classes;
  Shard all(w.train.size());
  std::iota(all.begin(), all.end(), 0);
  same.shards.assign(5, all);
  TrainingConfig cfg = w.config(Algorithm::FedAvg);
  cfg.clients_per_round = 5;
  cfg.hyper.local_epochs = 1;
  cfg.hyper.batch_size = w.train.size();
  const auto run = run_federated(w.train, w.test, same, cfg, 11);

  const ModelShape shape{w.train.dim(), cfg.hidden, 4};
  ModelParams p = initial_params(shape, 11);
  const Matrix x = gather_rows(w.train.features, all);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const auto lg = loss_and_grad(p, x, w.train.labels);
    axpy(-cfg.hyper.learning_rate, lg.grad, p);
    EXPECT_EQ(run.rounds[r].test_accuracy, evaluate(p, w.test));
  }
  EXPECT_TRUE(ft::bitwise_equal(run.final_params, p));
}

TEST(RunFederated, EmptyShardIsReportedWithRound) {
  World w;
  w.shards.shards[0].clear();
  auto cfg = w.config(Algorithm::FedAvg);
  cfg.clients_per_round = 10;
  try {
    run_federated(w.train, w.test, w.shards, cfg, 0);
    FAIL() << "expected EmptyShard";
  } catch (const EmptyShard& e) {
    EXPECT_NE(std::string(e.what()).find("round 0"), std::string::npos);
  }
}

TEST(RunFederated, DivergenceIsReportedWithRound) {
  const World w;
  auto cfg = w.config(Algorithm::FedAvg);
  cfg.hyper.learning_rate = 1e200;
  EXPECT_THROW(run_federated(w.train, w.test, w.shards, cfg, 0), NumericFailure);
}

TEST(RunFederated, BadConfig) {
  const World w;
  auto cfg = w.config(Algorithm::FedAvg);
  cfg.clients_per_round = 11;
  EXPECT_THROW(run_federated(w.train, w.test, w.shards, cfg, 0), InvalidParameter);
  const auto other = make_synthetic_blobs(5, 4, 3, 0.1, 0);
  EXPECT_THROW(run_federated(w.train, other, w.shards, w.config(Algorithm::FedAvg), 0), ShapeMismatch);
}

TEST(RunFederated, LearnsOnEasyData) {
  const auto train = make_synthetic_blobs(50, 4, 8, 0.05, 1);
  const auto test = make_synthetic_blobs(20, 4, 8, 0.05, 2);
  const auto shards = homogeneous_partition(train, 10, 0);
  TrainingConfig cfg;
  cfg.hidden = 16;
  cfg.rounds = 30;
  cfg.clients_per_round = 5;
  cfg.hyper.learning_rate = 0.2;
  cfg.hyper.batch_size = 5;
  const auto run = run_federated(train, test, shards, cfg, 0);
  EXPECT_GT(run.rounds.back().test_accuracy, 0.9);
}
