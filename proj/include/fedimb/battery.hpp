#pragma once

#include "fedimb/dataset.hpp"
#include "fedimb/error.hpp"
#include "fedimb/imbalance.hpp"
#include "fedimb/partition.hpp"
#include "fedimb/random.hpp"

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace fedimb {

// Battery-constrained fleet. The devices sit on a ring ordered by battery
// level; the P entries starting at `head` are charged enough to be selected.
// Each round the head moves `step_size` positions (fractional steps
// accumulate), so devices drain out of the pool behind it and recharged ones
// join in front.
struct FleetConfig {
  std::size_t n_devices = 100;
  std::size_t pool_size = 100;
  std::size_t select_k = 10;
  double step_size = 1.0;
  std::size_t window_size = 1;
  std::size_t rounds = 200;
};

inline void validate(const FleetConfig& cfg) {
  auto fail = [](const std::string& m) { throw InvalidParameter("fleet: " + m); };
  if (cfg.n_devices < 1) fail("n_devices must be >= 1");
  if (cfg.select_k < 1) fail("select_k must be >= 1");
  if (cfg.select_k > cfg.pool_size) fail("select_k <= pool_size required");
  if (cfg.pool_size > cfg.n_devices) fail("pool_size <= n_devices required");
  if (!(cfg.step_size >= 0.0) || !std::isfinite(cfg.step_size)) fail("step_size >= 0 required");
  if (cfg.window_size < 1) fail("window_size >= 1 required");
  if (cfg.rounds < cfg.window_size) fail("rounds >= window_size required");
}

struct PoolState {
  std::vector<std::size_t> ring; // permutation of device ids
  std::size_t head = 0;
  double frac_accum = 0.0; // in [0, 1)

  friend bool operator==(const PoolState&, const PoolState&) = default;
};

inline PoolState init_pool(std::size_t n_devices, std::uint64_t seed) {
  if (n_devices < 1) throw InvalidParameter("init_pool: n_devices must be >= 1");
  Rng rng = make_rng(seed, {0xBA77});
  return PoolState{shuffled_iota(n_devices, rng), 0, 0.0};
}

inline std::vector<std::size_t> available_pool(const PoolState& state, std::size_t pool_size) {
  const std::size_t n = state.ring.size();
  if (pool_size > n)
    throw InvalidParameter("available_pool: pool size " + std::to_string(pool_size) +
                           " exceeds fleet size " + std::to_string(n));
  std::vector<std::size_t> pool(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) pool[i] = state.ring[(state.head + i) % n];
  return pool;
}

inline PoolState advance_pool(PoolState state, double step_size) {
  if (!(step_size >= 0.0) || !std::isfinite(step_size))
    throw InvalidParameter("advance_pool: step size must be >= 0");
  // tolerance absorbs accumulation error, e.g. five steps of 0.2
  constexpr double kEps = 1e-9;
  state.frac_accum += step_size;
  const double whole = std::floor(state.frac_accum + kEps);
  state.frac_accum = std::max(0.0, state.frac_accum - whole);
  const auto n = state.ring.size();
  const auto adv = static_cast<std::size_t>(std::fmod(whole, static_cast<double>(n)));
  state.head = (state.head + adv) % n;
  return state;
}

inline GroupedSelection select_from_pool(std::span<const std::size_t> pool, std::size_t k,
                                         Rng& rng) {
  if (k > pool.size())
    throw InvalidParameter("select_from_pool: k (" + std::to_string(k) + ") exceeds pool size (" +
                           std::to_string(pool.size()) + ")");
  GroupedSelection sel;
  for (auto pos : sample_without_replacement(pool.size(), k, rng)) sel.selected.push_back(pool[pos]);
  return sel;
}

struct WindowedDelta {
  std::vector<double> window_deltas;
  double mean_delta = 0.0;
};

// Runs cfg.rounds rounds of pool-restricted selection. Rounds are grouped
// into consecutive non-overlapping windows of W; a window's grouped dataset
// is the concatenation of its rounds' grouped datasets (a device picked
// twice counts twice). A trailing partial window is dropped.
inline WindowedDelta simulate_windowed_delta(const ClientShards& shards, const LabeledDataset& ds,
                                             const FleetConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  if (shards.n_clients() != cfg.n_devices)
    throw InvalidParameter("simulate_windowed_delta: shards have " +
                           std::to_string(shards.n_clients()) + " clients but fleet has " +
                           std::to_string(cfg.n_devices) + " devices");
  const ClientCountTable table(shards, ds);
  PoolState state = init_pool(cfg.n_devices, seed);
  WindowedDelta out;
  ClassCounts merged(table.num_classes(), 0);
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    const auto pool = available_pool(state, cfg.pool_size);
    Rng rng = make_rng(seed, {0x5E1EC7, t});
    const auto sel = select_from_pool(pool, cfg.select_k, rng);
    table.accumulate(sel.selected, merged);
    state = advance_pool(std::move(state), cfg.step_size);
    if ((t + 1) % cfg.window_size == 0) {
      const auto d = imbalance_degree(merged);
      if (!d)
        throw EmptyGroup("simulate_windowed_delta: window ending at round " + std::to_string(t) +
                         " holds no samples");
      out.window_deltas.push_back(*d);
      std::fill(merged.begin(), merged.end(), 0);
    }
  }
  out.mean_delta = std::accumulate(out.window_deltas.begin(), out.window_deltas.end(), 0.0) /
                   static_cast<double>(out.window_deltas.size());
  return out;
}

} // namespace fedimb
