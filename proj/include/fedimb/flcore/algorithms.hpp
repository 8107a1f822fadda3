#pragma once

#include "fedimb/dataset.hpp"
#include "fedimb/error.hpp"
#include "fedimb/flcore/model.hpp"
#include "fedimb/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedimb::fl {

struct HyperParams {
  double learning_rate = 0.05;
  std::size_t local_epochs = 2;
  std::size_t batch_size = 32;
  double prox_mu = 0.01;
  double moon_mu = 1.0;
  double moon_tau = 0.5;
  double server_lr = 1.0; // Scaffold global step
};

inline void validate(const HyperParams& hp) {
  auto fail = [](const std::string& m) { throw InvalidParameter("hyper: " + m); };
  if (!(hp.learning_rate > 0.0) || !std::isfinite(hp.learning_rate)) fail("learning_rate > 0");
  if (hp.local_epochs < 1) fail("local_epochs >= 1");
  if (hp.batch_size < 1) fail("batch_size >= 1");
  if (!(hp.prox_mu >= 0.0)) fail("prox_mu >= 0");
  if (!(hp.moon_mu >= 0.0)) fail("moon_mu >= 0");
  if (!(hp.moon_tau > 0.0)) fail("moon_tau > 0");
  if (!(hp.server_lr >= 0.0)) fail("server_lr >= 0");
}

enum class Algorithm { FedAvg, FedProx, Scaffold, Moon };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
  case Algorithm::FedAvg: return "fedavg";
  case Algorithm::FedProx: return "fedprox";
  case Algorithm::Scaffold: return "scaffold";
  case Algorithm::Moon: return "moon";
  }
  return "?";
}

inline std::optional<Algorithm> parse_algorithm(std::string_view name) {
  for (auto a : {Algorithm::FedAvg, Algorithm::FedProx, Algorithm::Scaffold, Algorithm::Moon})
    if (to_string(a) == name) return a;
  return std::nullopt;
}

struct LocalResult {
  ModelParams params;
  std::size_t n_samples = 0;
  std::size_t steps = 0;
  double mean_loss = 0.0; // mean cross-entropy over the local steps
};

// Objective: callable (const ModelParams& w, std::span<const std::size_t> batch)
// -> LossAndGrad.
//
// Runs `epochs` passes of mini-batch gradient descent over `shard`. Each
// epoch reshuffles the shard with an RNG keyed by (seed, epoch) and cuts it
// into consecutive batches; each batch is then put in ascending index order
// so the gradient sum does not depend on the shuffle.
template <typename Objective>
LocalResult local_sgd(ModelParams start, std::span<const std::size_t> shard,
                      const HyperParams& hp, std::uint64_t seed, Objective&& objective) {
  if (shard.empty()) throw EmptyShard("local training: empty shard");
  if (hp.batch_size < 1) throw InvalidParameter("local training: batch_size must be >= 1");
  LocalResult out{std::move(start), shard.size(), 0, 0.0};
  std::vector<std::size_t> order(shard.begin(), shard.end());
  std::vector<std::size_t> batch;
  double loss_sum = 0.0;
  for (std::size_t e = 0; e < hp.local_epochs; ++e) {
    Rng rng = make_rng(seed, {0xE70C, e});
    shuffle_in_place(std::span<std::size_t>(order), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += hp.batch_size) {
      const std::size_t end = std::min(order.size(), begin + hp.batch_size);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                   order.begin() + static_cast<std::ptrdiff_t>(end));
      std::sort(batch.begin(), batch.end());
      const LossAndGrad lg = objective(static_cast<const ModelParams&>(out.params),
                                       std::span<const std::size_t>(batch));
      axpy(-hp.learning_rate, lg.grad, out.params);
      loss_sum += lg.cross_entropy;
      ++out.steps;
    }
  }
  if (!out.params.all_finite()) throw NumericFailure("local training: parameters became non-finite");
  out.mean_loss = loss_sum / static_cast<double>(out.steps);
  return out;
}

inline std::size_t local_step_count(std::size_t shard_size, const HyperParams& hp) {
  return hp.local_epochs * ((shard_size + hp.batch_size - 1) / hp.batch_size);
}

namespace detail {

inline auto model_objective(const LabeledDataset& ds, const Regularizer& reg) {
  return [&ds, reg](const ModelParams& w, std::span<const std::size_t> batch) {
    const Matrix x = gather_rows(ds.features, batch);
    std::vector<int> y(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) y[i] = ds.labels[batch[i]];
    return loss_and_grad(w, x, y, reg);
  };
}

} // namespace detail

inline LocalResult local_train_fedavg(const ModelParams& global, const LabeledDataset& ds,
                                      std::span<const std::size_t> shard, const HyperParams& hp,
                                      std::uint64_t seed) {
  return local_sgd(global, shard, hp, seed, detail::model_objective(ds, Regularizer{}));
}

inline LocalResult local_train_fedprox(const ModelParams& global, const LabeledDataset& ds,
                                       std::span<const std::size_t> shard, const HyperParams& hp,
                                       std::uint64_t seed) {
  if (!(hp.prox_mu >= 0.0)) throw InvalidParameter("fedprox: prox_mu must be >= 0");
  Regularizer reg;
  reg.prox_anchor = &global;
  reg.prox_mu = hp.prox_mu;
  return local_sgd(global, shard, hp, seed, detail::model_objective(ds, reg));
}

struct ScaffoldLocalResult {
  LocalResult local;
  ModelParams control;       // c_i+
  ModelParams control_delta; // c_i+ - c_i
};

// c_i+ = c_i - c + (w_global - w_local) / (steps * lr)
inline ModelParams scaffold_control_update(const ModelParams& client_control,
                                           const ModelParams& server_control,
                                           const ModelParams& global, const ModelParams& local,
                                           std::size_t steps, double learning_rate) {
  require_same_shape(client_control, server_control, "scaffold control update");
  require_same_shape(global, local, "scaffold control update");
  require_same_shape(client_control, global, "scaffold control update");
  if (steps < 1 || !(learning_rate > 0.0))
    throw InvalidParameter("scaffold: needs steps >= 1 and learning_rate > 0");
  const double inv = 1.0 / (static_cast<double>(steps) * learning_rate);
  ModelParams out(global.shape());
  auto o = out.values();
  const auto ci = client_control.values();
  const auto c = server_control.values();
  const auto g = global.values();
  const auto l = local.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ci[i] - c[i] + (g[i] - l[i]) * inv;
  return out;
}

// Every step uses g - c_i + c, expressed as the linear term <c - c_i, w>.
inline ScaffoldLocalResult local_train_scaffold(const ModelParams& global,
                                                const LabeledDataset& ds,
                                                std::span<const std::size_t> shard,
                                                const HyperParams& hp,
                                                const ModelParams& server_control,
                                                const ModelParams& client_control,
                                                std::uint64_t seed) {
  require_same_shape(global, server_control, "scaffold");
  require_same_shape(global, client_control, "scaffold");
  const ModelParams correction = difference(server_control, client_control);
  Regularizer reg;
  reg.linear_correction = &correction;
  auto local = local_sgd(global, shard, hp, seed, detail::model_objective(ds, reg));
  auto control = scaffold_control_update(client_control, server_control, global, local.params,
                                         local.steps, hp.learning_rate);
  auto delta = difference(control, client_control);
  return {std::move(local), std::move(control), std::move(delta)};
}

// Without a previous local model (first participation) the contrastive term
// is skipped and this is FedAvg.
inline LocalResult local_train_moon(const ModelParams& global, const LabeledDataset& ds,
                                    std::span<const std::size_t> shard, const HyperParams& hp,
                                    const ModelParams* prev_local, std::uint64_t seed) {
  if (!(hp.moon_tau > 0.0)) throw InvalidParameter("moon: moon_tau must be > 0");
  Regularizer reg;
  if (prev_local != nullptr) {
    require_same_shape(global, *prev_local, "moon");
    reg.contrastive_global = &global;
    reg.contrastive_prev = prev_local;
    reg.contrastive_mu = hp.moon_mu;
    reg.contrastive_tau = hp.moon_tau;
  }
  return local_sgd(global, shard, hp, seed, detail::model_objective(ds, reg));
}

} // namespace fedimb::fl
