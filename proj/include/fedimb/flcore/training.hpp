#pragma once

#include "fedimb/dataset.hpp"
#include "fedimb/error.hpp"
#include "fedimb/flcore/algorithms.hpp"
#include "fedimb/flcore/model.hpp"
#include "fedimb/flcore/server.hpp"
#include "fedimb/imbalance.hpp"
#include "fedimb/parallel.hpp"
#include "fedimb/partition.hpp"
#include "fedimb/random.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fedimb::fl {

struct ClientState {
  std::optional<ModelParams> control;    // Scaffold c_i, zero until first participation
  std::optional<ModelParams> prev_local; // MOON: model left after the last participation
};

struct RoundLog {
  std::size_t round = 0;
  double test_accuracy = 0.0;
  double mean_train_loss = 0.0; // mean over selected clients of their local mean loss
  std::vector<std::size_t> selected_clients;
  double grouped_delta = 0.0;

  friend bool operator==(const RoundLog&, const RoundLog&) = default;
};

struct TrainingConfig {
  Algorithm algorithm = Algorithm::FedAvg;
  HyperParams hyper;
  std::size_t hidden = 128;
  std::size_t rounds = 100;
  std::size_t clients_per_round = 10;
  std::size_t threads = 1;
};

struct TrainingRun {
  std::vector<RoundLog> rounds;
  ModelParams final_params;
};

inline ModelParams initial_params(const ModelShape& shape, std::uint64_t seed) {
  return init_params(shape, derive_seed(seed, {0x1A17}));
}

// Round loop: select k clients, train them locally (possibly in parallel,
// each from a seed keyed by (seed, round, client)), then aggregate in
// ascending client-id order and evaluate on `test`. NumericFailure and
// EmptyShard are rethrown with the failing round in the message.
inline TrainingRun run_federated(const LabeledDataset& train, const LabeledDataset& test,
                                 const ClientShards& shards, const TrainingConfig& cfg,
                                 std::uint64_t seed) {
  validate(cfg.hyper);
  const std::size_t n_clients = shards.n_clients();
  if (cfg.clients_per_round < 1 || cfg.clients_per_round > n_clients)
    throw InvalidParameter("run_federated: clients_per_round must be in [1, " +
                           std::to_string(n_clients) + "]");
  if (test.dim() != train.dim() || test.num_classes != train.num_classes)
    throw ShapeMismatch("run_federated: train and test sets disagree in shape");

  const ModelShape shape{train.dim(), cfg.hidden, static_cast<std::size_t>(train.num_classes)};
  ServerState server{initial_params(shape, seed), ModelParams(shape), 0};
  std::vector<ClientState> clients(n_clients);
  const ClientCountTable counts(shards, train);
  const ModelParams zero(shape);

  TrainingRun run;
  run.rounds.reserve(cfg.rounds);
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    try {
      Rng sel_rng = make_rng(seed, {0x5E1EC7, round});
      auto selected = sample_without_replacement(n_clients, cfg.clients_per_round, sel_rng);
      std::sort(selected.begin(), selected.end());

      std::vector<ClientUpdate> updates(selected.size());
      std::vector<ModelParams> deltas(selected.size());
      std::vector<std::optional<ModelParams>> new_controls(selected.size());
      std::vector<double> losses(selected.size());
      parallel_for(selected.size(), cfg.threads, [&](std::size_t slot) {
        const std::size_t id = selected[slot];
        const auto& shard = shards.shards[id];
        if (shard.empty())
          throw EmptyShard("client " + std::to_string(id) + " has an empty shard");
        const std::uint64_t local_seed = derive_seed(seed, {0xC11E, round, id});
        LocalResult local;
        switch (cfg.algorithm) {
        case Algorithm::FedAvg:
          local = local_train_fedavg(server.global, train, shard, cfg.hyper, local_seed);
          break;
        case Algorithm::FedProx:
          local = local_train_fedprox(server.global, train, shard, cfg.hyper, local_seed);
          break;
        case Algorithm::Moon: {
          const auto& prev = clients[id].prev_local;
          local = local_train_moon(server.global, train, shard, cfg.hyper,
                                   prev ? &*prev : nullptr, local_seed);
          break;
        }
        case Algorithm::Scaffold: {
          const auto& ci = clients[id].control;
          auto res = local_train_scaffold(server.global, train, shard, cfg.hyper, server.control,
                                          ci ? *ci : zero, local_seed);
          local = std::move(res.local);
          new_controls[slot] = std::move(res.control);
          deltas[slot] = std::move(res.control_delta);
          break;
        }
        }
        losses[slot] = local.mean_loss;
        updates[slot] = ClientUpdate{id, std::move(local.params), local.n_samples};
      });

      if (cfg.algorithm == Algorithm::Scaffold) {
        server = scaffold_server_update(std::move(server), updates, deltas, n_clients,
                                        cfg.hyper.server_lr);
        for (std::size_t slot = 0; slot < selected.size(); ++slot)
          clients[selected[slot]].control = std::move(new_controls[slot]);
      } else {
        server.global = aggregate_weighted(updates);
        ++server.round;
      }
      if (cfg.algorithm == Algorithm::Moon)
        for (auto& u : updates) clients[u.client_id].prev_local = u.params;
      if (!server.global.all_finite())
        throw NumericFailure("global model became non-finite");

      RoundLog log;
      log.round = round;
      log.test_accuracy = evaluate(server.global, test);
      double loss_sum = 0.0;
      for (double l : losses) loss_sum += l;
      log.mean_train_loss = loss_sum / static_cast<double>(losses.size());
      ClassCounts grouped(counts.num_classes(), 0);
      counts.accumulate(selected, grouped);
      log.grouped_delta = imbalance_degree(grouped).value_or(0.0);
      log.selected_clients = std::move(selected);
      run.rounds.push_back(std::move(log));
    } catch (const NumericFailure& e) {
      throw NumericFailure("round " + std::to_string(round) + ": " + e.what());
    } catch (const EmptyShard& e) {
      throw EmptyShard("round " + std::to_string(round) + ": " + e.what());
    }
  }
  run.final_params = std::move(server.global);
  return run;
}

} // namespace fedimb::fl
