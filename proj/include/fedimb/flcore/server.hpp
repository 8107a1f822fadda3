#pragma once

#include "fedimb/dataset.hpp"
#include "fedimb/error.hpp"
#include "fedimb/flcore/model.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace fedimb::fl {

struct ClientUpdate {
  std::size_t client_id = 0;
  ModelParams params;
  std::size_t n_samples = 0;
};

namespace detail {
inline std::vector<std::size_t> ascending_client_order(std::span<const ClientUpdate> updates) {
  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });
  return order;
}
} // namespace detail

// Sample-weighted average, reduced in ascending client-id order as
//   w_ref + sum_i (n_i / N) (w_i - w_ref),  w_ref = lowest-id update,
// so identical updates reproduce themselves exactly.
inline ModelParams aggregate_weighted(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw InvalidParameter("aggregate_weighted: no updates");
  const auto order = detail::ascending_client_order(updates);
  std::size_t total = 0;
  for (const auto& u : updates) {
    require_same_shape(u.params, updates.front().params, "aggregate_weighted");
    total += u.n_samples;
  }
  if (total == 0) throw InvalidParameter("aggregate_weighted: total sample count is zero");
  const ModelParams& ref = updates[order.front()].params;
  ModelParams out = ref;
  auto o = out.values();
  const auto r = ref.values();
  for (std::size_t idx : order) {
    const auto& u = updates[idx];
    const double weight = static_cast<double>(u.n_samples) / static_cast<double>(total);
    const auto w = u.params.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += weight * (w[i] - r[i]);
  }
  return out;
}

struct ServerState {
  ModelParams global;
  ModelParams control; // Scaffold c
  std::size_t round = 0;
};

// x <- x + server_lr * mean_i(w_i - x);  c <- c + (|S| / N) * mean_i(delta_c_i).
// Means are unweighted and reduced in ascending client-id order.
inline ServerState scaffold_server_update(ServerState server, std::span<const ClientUpdate> updates,
                                          std::span<const ModelParams> delta_controls,
                                          std::size_t n_clients_total, double server_lr) {
  if (updates.empty()) throw InvalidParameter("scaffold_server_update: no updates");
  if (updates.size() != delta_controls.size())
    throw ShapeMismatch("scaffold_server_update: updates and control deltas differ in count");
  if (n_clients_total < updates.size())
    throw InvalidParameter("scaffold_server_update: more participants than clients");
  const auto order = detail::ascending_client_order(updates);
  const double inv_s = 1.0 / static_cast<double>(updates.size());

  ModelParams step(server.global.shape());
  ModelParams dc(server.control.shape());
  for (std::size_t idx : order) {
    require_same_shape(updates[idx].params, server.global, "scaffold_server_update");
    require_same_shape(delta_controls[idx], server.control, "scaffold_server_update");
    const auto w = updates[idx].params.values();
    const auto x = server.global.values();
    auto st = step.values();
    for (std::size_t i = 0; i < st.size(); ++i) st[i] += w[i] - x[i];
    axpy(1.0, delta_controls[idx], dc);
  }
  axpy(server_lr * inv_s, step, server.global);
  const double participation = static_cast<double>(updates.size()) /
                               static_cast<double>(n_clients_total);
  axpy(participation * inv_s, dc, server.control);
  ++server.round;
  return server;
}

// Fraction of samples whose argmax logit (lowest index on ties) matches.
inline double evaluate(const ModelParams& params, const LabeledDataset& test) {
  if (test.size() == 0) throw InvalidParameter("evaluate: empty test set");
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < test.size(); begin += kChunk) {
    const std::size_t end = std::min(test.size(), begin + kChunk);
    rows.resize(end - begin);
    std::iota(rows.begin(), rows.end(), begin);
    const auto logits = forward(params, gather_rows(test.features, rows)).logits;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto l = logits.row(r);
      const auto best = static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin());
      if (static_cast<int>(best) == test.labels[begin + r]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

inline double trailing_mean(std::span<const double> series, std::size_t window) {
  if (series.empty()) throw InvalidParameter("trailing_mean: empty series");
  const std::size_t w = std::min(window, series.size());
  double sum = 0.0;
  for (std::size_t j = series.size() - w; j < series.size(); ++j) sum += series[j];
  return sum / static_cast<double>(w);
}

// First 0-indexed round t >= window-1 whose trailing mean over `window`
// rounds reaches `target`; nullopt if none does.
inline std::optional<std::size_t> rounds_to_target(std::span<const double> accuracy,
                                                   double target, std::size_t window) {
  if (accuracy.empty()) throw InvalidParameter("rounds_to_target: empty series");
  if (!(target > 0.0 && target <= 1.0)) throw InvalidParameter("rounds_to_target: target in (0, 1]");
  if (window < 1) throw InvalidParameter("rounds_to_target: window >= 1");
  for (std::size_t t = window - 1; t < accuracy.size(); ++t)
    if (trailing_mean(accuracy.first(t + 1), window) >= target) return t;
  return std::nullopt;
}

} // namespace fedimb::fl
