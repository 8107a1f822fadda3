#pragma once

#include "fedimb/dataset.hpp"
#include "fedimb/error.hpp"
#include "fedimb/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace fedimb {

struct PartitionSpec {
  std::size_t n_clients = 100;
  double alpha = 1.0;
  std::uint64_t seed = 0;
};

using Shard = std::vector<std::size_t>;

struct ClientShards {
  std::vector<Shard> shards; // one ascending index list per client
  int num_classes = 0;

  std::size_t n_clients() const noexcept { return shards.size(); }
};

struct LabelDistribution {
  std::vector<double> p;

  std::size_t num_classes() const noexcept { return p.size(); }
};

inline LabelDistribution normalize_counts(const ClassCounts& counts) {
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(),
                                                           std::size_t{0}));
  LabelDistribution dist;
  dist.p.resize(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c)
    dist.p[c] = static_cast<double>(counts[c]) / total;
  return dist;
}

namespace detail {

// Hamilton apportionment of `total` units by weights (not necessarily
// normalized; at least one weight positive). Ties in the fractional part go
// to the lower index.
inline std::vector<std::size_t> largest_remainder(std::span<const double> weights,
                                                  std::size_t total) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> out(weights.size(), 0);
  std::vector<double> frac(weights.size(), 0.0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = weights[i] / wsum * static_cast<double>(total);
    const double fl = std::floor(exact);
    out[i] = static_cast<std::size_t>(fl);
    frac[i] = exact - fl;
    assigned += out[i];
  }
  // floating error can push the floor sum one over; trim from the smallest fractions
  while (assigned > total) {
    std::size_t victim = weights.size();
    for (std::size_t i = 0; i < weights.size(); ++i)
      if (out[i] > 0 && (victim == weights.size() || frac[i] < frac[victim])) victim = i;
    --out[victim];
    frac[victim] += 1.0;
    --assigned;
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t r = 0; assigned < total; r = (r + 1) % order.size()) {
    if (weights[order[r]] > 0.0 || wsum <= 0.0) {
      ++out[order[r]];
      ++assigned;
    }
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> indices_by_class(const LabeledDataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  return by_class;
}

inline void validate_spec(const PartitionSpec& spec) {
  if (spec.n_clients < 1) throw InvalidParameter("partition: n_clients must be >= 1");
  if (!(spec.alpha > 0.0) || !std::isfinite(spec.alpha))
    throw InvalidParameter("partition: alpha must satisfy alpha > 0 and be finite");
}

} // namespace detail

// Label-skew partition driven by Dirichlet(alpha * 1_B).
//
// Every client receives an equal share of the samples (floor(n/N), the
// first n % N clients one more) and draws its own class mixture from
// Dirichlet(alpha). Clients are filled one at a time in a seeded order: the
// client's share is apportioned over its mixture by largest remainder, capped
// by what is left of each class, and any shortfall is re-apportioned over the
// classes that still have samples. Within a class, samples are handed out in
// a seeded shuffled order. The result is disjoint and covers every index.
inline ClientShards dirichlet_partition(const LabeledDataset& ds, const PartitionSpec& spec) {
  detail::validate_spec(spec);
  const std::size_t n = ds.size();
  const std::size_t clients = spec.n_clients;
  const auto classes = static_cast<std::size_t>(ds.num_classes);
  if (n == 0) throw InvalidParameter("dirichlet_partition: dataset is empty");
  if (clients > n)
    throw InfeasiblePartition("dirichlet_partition: n_clients (" + std::to_string(clients) +
                              ") exceeds sample count (" + std::to_string(n) + ")");

  auto pools = detail::indices_by_class(ds);
  for (std::size_t c = 0; c < classes; ++c) {
    Rng rng = make_rng(spec.seed, {1, c});
    shuffle_in_place(std::span<std::size_t>(pools[c]), rng);
  }

  std::vector<std::vector<double>> mixtures(clients);
  {
    Rng rng = make_rng(spec.seed, {2});
    for (auto& m : mixtures) m = sample_dirichlet(classes, spec.alpha, rng);
  }
  Rng order_rng = make_rng(spec.seed, {3});
  const auto fill_order = shuffled_iota(clients, order_rng);

  std::vector<std::size_t> remaining(classes);
  for (std::size_t c = 0; c < classes; ++c) remaining[c] = pools[c].size();
  std::vector<std::size_t> cursor(classes, 0);

  ClientShards out;
  out.num_classes = ds.num_classes;
  out.shards.resize(clients);
  std::vector<double> weights(classes);
  for (std::size_t client : fill_order) {
    std::size_t need = n / clients + (client < n % clients ? 1 : 0);
    std::vector<std::size_t> got(classes, 0);
    while (need > 0) {
      double wsum = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        weights[c] = remaining[c] > got[c] ? mixtures[client][c] : 0.0;
        wsum += weights[c];
      }
      if (!(wsum > 0.0))
        for (std::size_t c = 0; c < classes; ++c) weights[c] = remaining[c] > got[c] ? 1.0 : 0.0;
      const auto alloc = detail::largest_remainder(weights, need);
      for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t take = std::min(alloc[c], remaining[c] - got[c]);
        got[c] += take;
        need -= take;
      }
    }
    auto& shard = out.shards[client];
    for (std::size_t c = 0; c < classes; ++c) {
      shard.insert(shard.end(), pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c]),
                   pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c] + got[c]));
      cursor[c] += got[c];
      remaining[c] -= got[c];
    }
    std::sort(shard.begin(), shard.end());
  }
  return out;
}

// Stratified split: each class is shuffled and dealt round-robin, with the
// dealing position carried over between classes so remainders spread out.
inline ClientShards homogeneous_partition(const LabeledDataset& ds, std::size_t n_clients,
                                          std::uint64_t seed) {
  if (n_clients < 1) throw InvalidParameter("homogeneous_partition: n_clients must be >= 1");
  auto pools = detail::indices_by_class(ds);
  ClientShards out;
  out.num_classes = ds.num_classes;
  out.shards.resize(n_clients);
  std::size_t next = 0;
  for (std::size_t c = 0; c < pools.size(); ++c) {
    Rng rng = make_rng(seed, {4, c});
    shuffle_in_place(std::span<std::size_t>(pools[c]), rng);
    for (auto idx : pools[c]) {
      out.shards[next].push_back(idx);
      next = (next + 1) % n_clients;
    }
  }
  for (auto& s : out.shards) std::sort(s.begin(), s.end());
  return out;
}

inline LabelDistribution client_label_distribution(const ClientShards& shards,
                                                   const LabeledDataset& ds, std::size_t client) {
  if (client >= shards.n_clients())
    throw IndexError("client_label_distribution: client " + std::to_string(client) +
                         " out of range",
                     static_cast<long long>(client));
  const auto& shard = shards.shards[client];
  if (shard.empty())
    throw EmptyShard("client_label_distribution: client " + std::to_string(client) +
                     " has an empty shard");
  return normalize_counts(class_counts(ds, shard));
}

// Mean over non-empty clients of each client's label distribution sorted in
// descending order. Entry r is the average share of a client's r-th most
// frequent class.
inline LabelDistribution sorted_mean_distribution(const ClientShards& shards,
                                                  const LabeledDataset& ds) {
  const auto classes = static_cast<std::size_t>(ds.num_classes);
  std::vector<double> sum(classes, 0.0);
  std::size_t used = 0;
  for (std::size_t i = 0; i < shards.n_clients(); ++i) {
    if (shards.shards[i].empty()) continue;
    auto p = client_label_distribution(shards, ds, i).p;
    std::sort(p.begin(), p.end(), std::greater<>());
    for (std::size_t c = 0; c < classes; ++c) sum[c] += p[c];
    ++used;
  }
  if (used == 0) throw EmptyShard("sorted_mean_distribution: every shard is empty");
  LabelDistribution out;
  out.p.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) out.p[c] = sum[c] / static_cast<double>(used);
  return out;
}

// Partition manifest: header "client_id,sample_index", one row per sample.
inline void write_partition_csv(const ClientShards& shards, std::ostream& out) {
  out << "client_id,sample_index\n";
  for (std::size_t i = 0; i < shards.n_clients(); ++i)
    for (auto idx : shards.shards[i]) out << i << ',' << idx << '\n';
}

inline void write_partition_csv(const ClientShards& shards, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_partition_csv: cannot open " + path.string());
  write_partition_csv(shards, out);
  if (!out) throw Error("write_partition_csv: write failed for " + path.string());
}

} // namespace fedimb
