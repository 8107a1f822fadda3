#pragma once

#include "fedimb/dataset.hpp"
#include "fedimb/error.hpp"
#include "fedimb/parallel.hpp"
#include "fedimb/partition.hpp"
#include "fedimb/random.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fedimb {

struct GroupedSelection {
  std::vector<std::size_t> selected;
  long long round_tag = -1;
};

struct DeltaSummary {
  double mean_delta = 0.0;
  std::size_t trials = 0;
  std::vector<double> per_trial; // empty unless requested
};

// Per-client class counts, one row per client. Grouping a selection is then
// a sum of rows instead of a pass over sample indices.
class ClientCountTable {
public:
  ClientCountTable(const ClientShards& shards, const LabeledDataset& ds)
      : classes_(static_cast<std::size_t>(ds.num_classes)), counts_(shards.n_clients()) {
    for (std::size_t i = 0; i < shards.n_clients(); ++i)
      counts_[i] = class_counts(ds, shards.shards[i]);
  }

  std::size_t n_clients() const noexcept { return counts_.size(); }
  std::size_t num_classes() const noexcept { return classes_; }
  const ClassCounts& client(std::size_t i) const { return counts_[i]; }

  void accumulate(std::span<const std::size_t> selected, ClassCounts& into) const {
    for (auto id : selected) {
      const auto& row = counts_[id];
      for (std::size_t c = 0; c < classes_; ++c) into[c] += row[c];
    }
  }

private:
  std::size_t classes_;
  std::vector<ClassCounts> counts_;
};

// max(p) - min(p)
inline double imbalance_degree(const LabelDistribution& dist) {
  if (dist.p.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(dist.p.begin(), dist.p.end());
  return *hi - *lo;
}

// Δ straight from counts; returns nullopt for an all-zero count vector.
inline std::optional<double> imbalance_degree(const ClassCounts& counts) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) return std::nullopt;
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  return static_cast<double>(*hi - *lo) / static_cast<double>(total);
}

inline void validate_selection(const GroupedSelection& sel, std::size_t n_clients) {
  if (sel.selected.empty()) throw EmptyGroup("grouped_distribution: selection is empty");
  std::vector<bool> seen(n_clients, false);
  for (auto id : sel.selected) {
    if (id >= n_clients)
      throw IndexError("selection: client id " + std::to_string(id) + " >= " +
                           std::to_string(n_clients),
                       static_cast<long long>(id));
    if (seen[id])
      throw InvalidParameter("selection: client id " + std::to_string(id) + " repeated");
    seen[id] = true;
  }
}

inline LabelDistribution grouped_distribution(const ClientShards& shards,
                                              const LabeledDataset& ds,
                                              const GroupedSelection& sel) {
  validate_selection(sel, shards.n_clients());
  ClassCounts counts(static_cast<std::size_t>(ds.num_classes), 0);
  for (auto id : sel.selected) {
    const auto c = class_counts(ds, shards.shards[id]);
    for (std::size_t j = 0; j < c.size(); ++j) counts[j] += c[j];
  }
  std::size_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) throw EmptyGroup("grouped_distribution: selected shards hold no samples");
  return normalize_counts(counts);
}

// Regenerate the partition every `every` trials from
// PartitionSpec{spec.n_clients, spec.alpha, derive(spec.seed, block)}.
struct ResampleOptions {
  PartitionSpec spec;
  std::size_t every = 100;
};

struct MonteCarloOptions {
  std::optional<ResampleOptions> resample;
  bool keep_per_trial = false;
  std::size_t threads = 1;
};

namespace detail {

inline DeltaSummary summarize(std::vector<double> per_trial, bool keep) {
  DeltaSummary s;
  s.trials = per_trial.size();
  double sum = 0.0;
  for (double d : per_trial) sum += d;
  s.mean_delta = sum / static_cast<double>(per_trial.size());
  if (keep) s.per_trial = std::move(per_trial);
  return s;
}

// Δ for `count` trials starting at `first`, each drawing k clients with an
// RNG keyed by (seed, trial index).
inline void run_selection_trials(const ClientCountTable& table, std::size_t k,
                                 std::uint64_t seed, std::size_t first, std::size_t count,
                                 std::span<double> out) {
  ClassCounts counts(table.num_classes());
  for (std::size_t t = 0; t < count; ++t) {
    Rng rng = make_rng(seed, {0x5E1EC7, first + t});
    const auto sel = sample_without_replacement(table.n_clients(), k, rng);
    std::fill(counts.begin(), counts.end(), 0);
    table.accumulate(sel, counts);
    const auto d = imbalance_degree(counts);
    if (!d) throw EmptyGroup("mean_delta_random_selection: trial " + std::to_string(first + t) +
                             " selected only empty shards");
    out[t] = *d;
  }
}

} // namespace detail

// Each trial draws k of N clients uniformly without replacement and records
// Δ of their grouped distribution. With opts.resample set, `shards` is
// ignored and a fresh Dirichlet partition is drawn per block of trials.
inline DeltaSummary mean_delta_random_selection(const ClientShards& shards,
                                                const LabeledDataset& ds, std::size_t k,
                                                std::size_t trials, std::uint64_t seed,
                                                const MonteCarloOptions& opts = {}) {
  const std::size_t n_clients =
      opts.resample ? opts.resample->spec.n_clients : shards.n_clients();
  if (k < 1 || k > n_clients)
    throw InvalidParameter("mean_delta_random_selection: k (" + std::to_string(k) +
                           ") must satisfy 1 <= k <= N (" + std::to_string(n_clients) + ")");
  if (trials < 1) throw InvalidParameter("mean_delta_random_selection: trials must be >= 1");

  std::vector<double> per_trial(trials);
  if (!opts.resample) {
    const ClientCountTable table(shards, ds);
    const std::size_t chunk = 1024;
    const std::size_t blocks = (trials + chunk - 1) / chunk;
    parallel_for(blocks, opts.threads, [&](std::size_t b) {
      const std::size_t first = b * chunk;
      const std::size_t count = std::min(chunk, trials - first);
      detail::run_selection_trials(table, k, seed, first, count,
                                   std::span<double>(per_trial).subspan(first, count));
    });
  } else {
    const auto& rs = *opts.resample;
    if (rs.every < 1) throw InvalidParameter("resample every must be >= 1");
    const std::size_t blocks = (trials + rs.every - 1) / rs.every;
    parallel_for(blocks, opts.threads, [&](std::size_t b) {
      PartitionSpec spec = rs.spec;
      spec.seed = derive_seed(rs.spec.seed, {0xB10C, b});
      const auto part = dirichlet_partition(ds, spec);
      const ClientCountTable table(part, ds);
      const std::size_t first = b * rs.every;
      const std::size_t count = std::min(rs.every, trials - first);
      detail::run_selection_trials(table, k, seed, first, count,
                                   std::span<double>(per_trial).subspan(first, count));
    });
  }
  return detail::summarize(std::move(per_trial), opts.keep_per_trial);
}

// One summary per k on the same fixed partition and the same seed.
inline std::vector<std::pair<std::size_t, DeltaSummary>>
delta_vs_selection_size(const ClientShards& shards, const LabeledDataset& ds,
                        std::span<const std::size_t> k_values, std::size_t trials,
                        std::uint64_t seed, std::size_t threads = 1) {
  for (auto k : k_values)
    if (k < 1 || k > shards.n_clients())
      throw InvalidParameter("delta_vs_selection_size: k (" + std::to_string(k) +
                             ") must satisfy 1 <= k <= N");
  std::vector<std::pair<std::size_t, DeltaSummary>> out;
  out.reserve(k_values.size());
  MonteCarloOptions opts;
  opts.threads = threads;
  for (auto k : k_values)
    out.emplace_back(k, mean_delta_random_selection(shards, ds, k, trials, seed, opts));
  return out;
}

} // namespace fedimb
