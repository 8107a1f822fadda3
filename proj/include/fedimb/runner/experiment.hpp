#pragma once

#include "fedimb/battery.hpp"
#include "fedimb/dataset.hpp"
#include "fedimb/error.hpp"
#include "fedimb/flcore/training.hpp"
#include "fedimb/imbalance.hpp"
#include "fedimb/parallel.hpp"
#include "fedimb/partition.hpp"
#include "fedimb/runner/config.hpp"
#include "fedimb/runner/csv.hpp"

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace fedimb::runner {

// One table per CSV file. fl_train yields "fl_train_rounds" and
// "fl_train_summary"; every other kind yields a single table named after
// the kind.
struct ExperimentResult {
  std::vector<Table> tables;
};

// Annotates a failure with the seed it happened under.
class RunError : public Error {
public:
  RunError(const std::string& what, std::uint64_t seed)
      : Error("seed " + std::to_string(seed) + ": " + what), seed_(seed) {}
  std::uint64_t seed() const noexcept { return seed_; }

private:
  std::uint64_t seed_;
};

namespace detail {

inline Value alpha_value(const AlphaSetting& a) {
  return a ? Value(*a) : Value(std::string("homogeneous"));
}

inline Value as_int(std::uint64_t v) { return Value(static_cast<long long>(v)); }

inline ClientShards make_partition(const LabeledDataset& ds, const AlphaSetting& alpha,
                                   std::size_t n_clients, std::uint64_t seed) {
  if (!alpha) return homogeneous_partition(ds, n_clients, seed);
  return dirichlet_partition(ds, PartitionSpec{n_clients, *alpha, seed});
}

inline LabeledDataset load_train(const DatasetConfig& d) {
  if (d.source == "cifar10") {
    std::vector<std::filesystem::path> paths(d.train_files.begin(), d.train_files.end());
    return load_cifar10_binary(paths);
  }
  return make_synthetic_blobs(d.n_per_class, d.num_classes, d.dim, d.spread, d.seed);
}

inline LabeledDataset load_test(const DatasetConfig& d) {
  if (d.source == "cifar10") {
    std::vector<std::filesystem::path> paths(d.test_files.begin(), d.test_files.end());
    return load_cifar10_binary(paths);
  }
  return make_synthetic_blobs(d.test_n_per_class, d.num_classes, d.dim, d.spread, d.test_seed);
}

template <typename Fn>
auto with_seed(std::uint64_t seed, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const RunError&) {
    throw;
  } catch (const Error& e) {
    throw RunError(e.what(), seed);
  }
}

inline Table imbalance_table(const ExperimentConfig& cfg, const LabeledDataset& ds) {
  Table t{std::string(to_string(cfg.kind)),
          {"alpha", "k", "trials", "mean_delta", "n_clients", "resample_every", "seed"},
          {}};
  struct Job {
    AlphaSetting alpha;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& a : cfg.alphas)
    for (auto s : cfg.seeds) jobs.push_back({a, s});
  std::vector<std::vector<ResultRow>> out(jobs.size());
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    with_seed(job.seed, [&] {
      // the stratified split has no randomness worth resampling
      const bool resample = cfg.kind == ExperimentKind::ImbalanceSweep &&
                            cfg.resample_every > 0 && job.alpha.has_value();
      ClientShards fixed;
      if (!resample) fixed = make_partition(ds, job.alpha, cfg.n_clients, job.seed);
      for (auto k : cfg.k_values) {
        MonteCarloOptions opts;
        if (resample)
          opts.resample = ResampleOptions{PartitionSpec{cfg.n_clients, *job.alpha, job.seed},
                                          cfg.resample_every};
        const auto summary = mean_delta_random_selection(fixed, ds, k, cfg.trials, job.seed, opts);
        out[j].push_back({alpha_value(job.alpha), as_int(k), as_int(cfg.trials),
                          summary.mean_delta, as_int(cfg.n_clients),
                          as_int(resample ? cfg.resample_every : 0), as_int(job.seed)});
      }
    });
  });
  for (auto& rows : out)
    for (auto& r : rows) t.rows.push_back(std::move(r));
  sort_rows(t, {"alpha", "k", "seed"});
  return t;
}

inline Table battery_table(const ExperimentConfig& cfg, const LabeledDataset& ds) {
  Table t{"battery_sweep",
          {"alpha", "pool_size", "window_size", "step_size", "select_k", "seed", "mean_delta",
           "n_clients", "rounds"},
          {}};
  struct Job {
    AlphaSetting alpha;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& a : cfg.alphas)
    for (auto s : cfg.seeds) jobs.push_back({a, s});
  std::vector<std::vector<ResultRow>> out(jobs.size());
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    with_seed(job.seed, [&] {
      const auto shards = make_partition(ds, job.alpha, cfg.n_clients, job.seed);
      for (auto p : cfg.pool_sizes)
        for (auto w : cfg.window_sizes)
          for (auto s : cfg.step_sizes) {
            FleetConfig fleet{cfg.n_clients, p, cfg.select_k, s, w, cfg.fleet_rounds};
            const auto res = simulate_windowed_delta(shards, ds, fleet, job.seed);
            out[j].push_back({alpha_value(job.alpha), as_int(p), as_int(w), s,
                              as_int(cfg.select_k), as_int(job.seed), res.mean_delta,
                              as_int(cfg.n_clients), as_int(cfg.fleet_rounds)});
          }
    });
  });
  for (auto& rows : out)
    for (auto& r : rows) t.rows.push_back(std::move(r));
  sort_rows(t, {"alpha", "pool_size", "window_size", "step_size", "select_k", "seed"});
  return t;
}

inline std::vector<Table> fl_tables(const ExperimentConfig& cfg, const LabeledDataset& train,
                                    const LabeledDataset& test) {
  Table rounds{"fl_train_rounds",
               {"round", "algorithm", "alpha", "seed", "test_accuracy", "mean_train_loss",
                "grouped_delta", "n_clients", "clients_per_round"},
               {}};
  Table summary{"fl_train_summary",
                {"algorithm", "alpha", "final_acc_mean", "final_acc_std", "rounds_to_target",
                 "target_accuracy", "smoothing_window", "seeds"},
                {}};
  struct Job {
    fl::Algorithm algorithm;
    AlphaSetting alpha;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto algo : cfg.algorithms)
    for (const auto& a : cfg.alphas)
      for (auto s : cfg.seeds) jobs.push_back({algo, a, s});

  fl::TrainingConfig tc;
  tc.hyper = cfg.hyper;
  tc.hidden = cfg.hidden;
  tc.rounds = cfg.train_rounds;
  tc.clients_per_round = cfg.clients_per_round;

  std::vector<std::vector<fl::RoundLog>> logs(jobs.size());
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    logs[j] = with_seed(job.seed, [&] {
      const auto shards = make_partition(train, job.alpha, cfg.n_clients, job.seed);
      auto run_cfg = tc;
      run_cfg.algorithm = job.algorithm;
      return fl::run_federated(train, test, shards, run_cfg, job.seed).rounds;
    });
  });

  const std::string seed_list = [&] {
    std::string s;
    for (auto seed : cfg.seeds) s += (s.empty() ? "" : " ") + std::to_string(seed);
    return s;
  }();

  // jobs are grouped by (algorithm, alpha) with seeds innermost
  const std::size_t n_seeds = cfg.seeds.size();
  for (std::size_t g = 0; g < jobs.size(); g += n_seeds) {
    const auto algo_name = std::string(fl::to_string(jobs[g].algorithm));
    const auto alpha = alpha_value(jobs[g].alpha);
    std::vector<double> mean_curve(cfg.train_rounds, 0.0);
    std::vector<double> finals;
    for (std::size_t j = g; j < g + n_seeds; ++j) {
      for (const auto& log : logs[j]) {
        rounds.rows.push_back({as_int(log.round), algo_name, alpha, as_int(jobs[j].seed),
                               log.test_accuracy, log.mean_train_loss, log.grouped_delta,
                               as_int(cfg.n_clients), as_int(cfg.clients_per_round)});
        mean_curve[log.round] += log.test_accuracy / static_cast<double>(n_seeds);
      }
      finals.push_back(logs[j].back().test_accuracy);
    }
    double mean = 0.0;
    for (double f : finals) mean += f;
    mean /= static_cast<double>(finals.size());
    double var = 0.0;
    for (double f : finals) var += (f - mean) * (f - mean);
    const double sd = finals.size() > 1 ? std::sqrt(var / static_cast<double>(finals.size() - 1)) : 0.0;
    const auto reached = fl::rounds_to_target(mean_curve, cfg.target_accuracy, cfg.smoothing_window);
    summary.rows.push_back({algo_name, alpha, mean, sd,
                            reached ? as_int(*reached) : Value(std::string("none")),
                            cfg.target_accuracy, as_int(cfg.smoothing_window), seed_list});
  }
  sort_rows(rounds, {"algorithm", "alpha", "seed", "round"});
  sort_rows(summary, {"algorithm", "alpha"});
  return {std::move(rounds), std::move(summary)};
}

} // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const auto train = detail::load_train(cfg.dataset);
  ExperimentResult result;
  switch (cfg.kind) {
  case ExperimentKind::ImbalanceSweep:
  case ExperimentKind::SelectionSizeSweep:
    result.tables.push_back(detail::imbalance_table(cfg, train));
    break;
  case ExperimentKind::BatterySweep:
    result.tables.push_back(detail::battery_table(cfg, train));
    break;
  case ExperimentKind::FlTrain: {
    const auto test = detail::load_test(cfg.dataset);
    result.tables = detail::fl_tables(cfg, train, test);
    break;
  }
  }
  return result;
}

// Writes every table as <dir>/<name>.csv. Each file is written to a
// temporary name first and renamed only after all tables are written.
inline std::vector<std::filesystem::path> write_outputs(const ExperimentResult& result,
                                                        const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  std::vector<fs::path> temps, finals;
  try {
    for (const auto& t : result.tables) {
      finals.push_back(dir / (t.name + ".csv"));
      temps.push_back(dir / (t.name + ".csv.tmp"));
      emit_csv(t, temps.back());
    }
  } catch (...) {
    for (const auto& p : temps) fs::remove(p, ec);
    throw;
  }
  for (std::size_t i = 0; i < temps.size(); ++i) fs::rename(temps[i], finals[i]);
  return finals;
}

} // namespace fedimb::runner
