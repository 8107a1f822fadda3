#pragma once

#include "fedimb/error.hpp"
#include "fedimb/flcore/algorithms.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedimb::runner {

enum class ExperimentKind { ImbalanceSweep, SelectionSizeSweep, BatterySweep, FlTrain };

inline std::string_view to_string(ExperimentKind k) {
  switch (k) {
  case ExperimentKind::ImbalanceSweep: return "imbalance_sweep";
  case ExperimentKind::SelectionSizeSweep: return "selection_size_sweep";
  case ExperimentKind::BatterySweep: return "battery_sweep";
  case ExperimentKind::FlTrain: return "fl_train";
  }
  return "?";
}

struct DatasetConfig {
  std::string source = "synthetic"; // synthetic | cifar10
  std::size_t n_per_class = 500;
  int num_classes = 10;
  std::size_t dim = 16;
  double spread = 0.1;
  std::uint64_t seed = 0;
  std::size_t test_n_per_class = 50;
  std::uint64_t test_seed = 1;
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
};

// nullopt selects the exact stratified (homogeneous) partition.
using AlphaSetting = std::optional<double>;

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::ImbalanceSweep;
  DatasetConfig dataset;

  std::vector<AlphaSetting> alphas{1.0};
  std::size_t n_clients = 100;

  std::vector<std::size_t> k_values{10};
  std::size_t trials = 10000;
  std::size_t resample_every = 100; // imbalance_sweep only; 0 keeps one partition per seed

  std::vector<std::size_t> pool_sizes{30, 50, 70};
  std::vector<std::size_t> window_sizes{1, 5, 10};
  std::vector<double> step_sizes{0.2, 0.5, 1.0, 2.0, 5.0};
  std::size_t select_k = 10;
  std::size_t fleet_rounds = 200;

  fl::HyperParams hyper;
  std::vector<fl::Algorithm> algorithms{fl::Algorithm::FedAvg};
  std::size_t train_rounds = 100;
  std::size_t clients_per_round = 10;
  std::size_t hidden = 128;
  double target_accuracy = 0.5;
  std::size_t smoothing_window = 5;

  std::vector<std::uint64_t> seeds{0};
  std::string output = "results";
  std::size_t threads = 1;
};

namespace detail {

using nlohmann::json;

enum KindMask : unsigned {
  kImb = 1u << 0,
  kSel = 1u << 1,
  kBat = 1u << 2,
  kFl = 1u << 3,
  kAll = kImb | kSel | kBat | kFl,
};

inline unsigned mask_of(ExperimentKind k) {
  switch (k) {
  case ExperimentKind::ImbalanceSweep: return kImb;
  case ExperimentKind::SelectionSizeSweep: return kSel;
  case ExperimentKind::BatterySweep: return kBat;
  case ExperimentKind::FlTrain: return kFl;
  }
  return 0;
}

[[noreturn]] inline void type_error(const std::string& key, const char* expected) {
  throw ConfigError("config: key '" + key + "' must be " + expected);
}

inline double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) type_error(key, "a number");
  return v.get<double>();
}

inline std::uint64_t as_uint(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    if (v.get<long long>() < 0)
      throw ConfigError("config: key '" + key + "' out of range: requires a value >= 0");
    return static_cast<std::uint64_t>(v.get<long long>());
  }
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d >= 0.0 && std::floor(d) == d && d < 1.8e19) return static_cast<std::uint64_t>(d);
  }
  type_error(key, "a non-negative integer");
}

inline std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) type_error(key, "a string");
  return v.get<std::string>();
}

// A scalar is accepted where a list is expected.
template <typename T, typename Fn>
std::vector<T> as_list(const json& v, const std::string& key, Fn&& one) {
  std::vector<T> out;
  if (v.is_array()) {
    if (v.empty()) throw ConfigError("config: key '" + key + "' must not be an empty list");
    for (const auto& e : v) out.push_back(one(e, key));
  } else {
    out.push_back(one(v, key));
  }
  return out;
}

inline AlphaSetting as_alpha(const json& v, const std::string& key) {
  if (v.is_string()) {
    if (v.get<std::string>() == "homogeneous") return std::nullopt;
    type_error(key, "a number or \"homogeneous\"");
  }
  return as_double(v, key);
}

struct KeySpec {
  unsigned kinds;
  std::function<void(const json&, const std::string&, ExperimentConfig&)> apply;
};

inline const std::map<std::string, KeySpec>& key_schema() {
  static const std::map<std::string, KeySpec> schema = [] {
    std::map<std::string, KeySpec> s;
    auto add = [&](const char* key, unsigned kinds, auto fn) { s.emplace(key, KeySpec{kinds, fn}); };
    add("output", kAll, [](auto& v, auto& k, auto& c) { c.output = as_string(v, k); });
    add("threads", kAll, [](auto& v, auto& k, auto& c) { c.threads = as_uint(v, k); });
    add("seeds", kAll, [](auto& v, auto& k, auto& c) {
      c.seeds = as_list<std::uint64_t>(v, k, as_uint);
    });

    add("dataset.source", kAll, [](auto& v, auto& k, auto& c) { c.dataset.source = as_string(v, k); });
    add("dataset.n_per_class", kAll, [](auto& v, auto& k, auto& c) { c.dataset.n_per_class = as_uint(v, k); });
    add("dataset.num_classes", kAll, [](auto& v, auto& k, auto& c) {
      c.dataset.num_classes = static_cast<int>(as_uint(v, k));
    });
    add("dataset.dim", kAll, [](auto& v, auto& k, auto& c) { c.dataset.dim = as_uint(v, k); });
    add("dataset.spread", kAll, [](auto& v, auto& k, auto& c) { c.dataset.spread = as_double(v, k); });
    add("dataset.seed", kAll, [](auto& v, auto& k, auto& c) { c.dataset.seed = as_uint(v, k); });
    add("dataset.train_files", kAll, [](auto& v, auto& k, auto& c) {
      c.dataset.train_files = as_list<std::string>(v, k, as_string);
    });
    add("dataset.test_n_per_class", kFl, [](auto& v, auto& k, auto& c) {
      c.dataset.test_n_per_class = as_uint(v, k);
    });
    add("dataset.test_seed", kFl, [](auto& v, auto& k, auto& c) { c.dataset.test_seed = as_uint(v, k); });
    add("dataset.test_files", kFl, [](auto& v, auto& k, auto& c) {
      c.dataset.test_files = as_list<std::string>(v, k, as_string);
    });

    add("partition.alpha", kAll, [](auto& v, auto& k, auto& c) {
      c.alphas = as_list<AlphaSetting>(v, k, as_alpha);
    });
    add("partition.n_clients", kAll, [](auto& v, auto& k, auto& c) { c.n_clients = as_uint(v, k); });

    add("imbalance.k", kImb | kSel, [](auto& v, auto& k, auto& c) {
      c.k_values = as_list<std::size_t>(v, k, as_uint);
    });
    add("imbalance.trials", kImb | kSel, [](auto& v, auto& k, auto& c) { c.trials = as_uint(v, k); });
    add("imbalance.resample_every", kImb, [](auto& v, auto& k, auto& c) {
      c.resample_every = as_uint(v, k);
    });

    add("fleet.pool_size", kBat, [](auto& v, auto& k, auto& c) {
      c.pool_sizes = as_list<std::size_t>(v, k, as_uint);
    });
    add("fleet.window_size", kBat, [](auto& v, auto& k, auto& c) {
      c.window_sizes = as_list<std::size_t>(v, k, as_uint);
    });
    add("fleet.step_size", kBat, [](auto& v, auto& k, auto& c) {
      c.step_sizes = as_list<double>(v, k, as_double);
    });
    add("fleet.select_k", kBat, [](auto& v, auto& k, auto& c) { c.select_k = as_uint(v, k); });
    add("fleet.rounds", kBat, [](auto& v, auto& k, auto& c) { c.fleet_rounds = as_uint(v, k); });

    add("hyper.learning_rate", kFl, [](auto& v, auto& k, auto& c) { c.hyper.learning_rate = as_double(v, k); });
    add("hyper.local_epochs", kFl, [](auto& v, auto& k, auto& c) { c.hyper.local_epochs = as_uint(v, k); });
    add("hyper.batch_size", kFl, [](auto& v, auto& k, auto& c) { c.hyper.batch_size = as_uint(v, k); });
    add("hyper.prox_mu", kFl, [](auto& v, auto& k, auto& c) { c.hyper.prox_mu = as_double(v, k); });
    add("hyper.moon_mu", kFl, [](auto& v, auto& k, auto& c) { c.hyper.moon_mu = as_double(v, k); });
    add("hyper.moon_tau", kFl, [](auto& v, auto& k, auto& c) { c.hyper.moon_tau = as_double(v, k); });
    add("hyper.server_lr", kFl, [](auto& v, auto& k, auto& c) { c.hyper.server_lr = as_double(v, k); });

    add("train.algorithm", kFl, [](auto& v, auto& k, auto& c) {
      c.algorithms = as_list<fl::Algorithm>(v, k, [](const json& e, const std::string& key) {
        const auto name = as_string(e, key);
        const auto a = fl::parse_algorithm(name);
        if (!a)
          throw ConfigError("config: key '" + key + "' has unknown algorithm '" + name +
                            "' (fedavg, fedprox, scaffold, moon)");
        return *a;
      });
    });
    add("train.rounds", kFl, [](auto& v, auto& k, auto& c) { c.train_rounds = as_uint(v, k); });
    add("train.clients_per_round", kFl, [](auto& v, auto& k, auto& c) {
      c.clients_per_round = as_uint(v, k);
    });
    add("train.hidden", kFl, [](auto& v, auto& k, auto& c) { c.hidden = as_uint(v, k); });
    add("train.target_accuracy", kFl, [](auto& v, auto& k, auto& c) {
      c.target_accuracy = as_double(v, k);
    });
    add("train.smoothing_window", kFl, [](auto& v, auto& k, auto& c) {
      c.smoothing_window = as_uint(v, k);
    });
    return s;
  }();
  return schema;
}

// Nested objects become dotted keys; arrays and scalars are leaves.
inline void flatten_into(const json& node, const std::string& prefix,
                         std::map<std::string, json>& out) {
  for (auto it = node.begin(); it != node.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object()) {
      flatten_into(it.value(), key, out);
    } else if (!out.emplace(key, it.value()).second) {
      throw ConfigError("config: key '" + key + "' given twice");
    }
  }
}

[[noreturn]] inline void range_error(const std::string& key, const std::string& constraint) {
  throw ConfigError("config: key '" + key + "' out of range: requires " + constraint);
}

inline void validate_ranges(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  if (d.source != "synthetic" && d.source != "cifar10")
    range_error("dataset.source", "\"synthetic\" or \"cifar10\"");
  if (d.source == "synthetic") {
    if (d.n_per_class < 1) range_error("dataset.n_per_class", "n_per_class >= 1");
    if (d.num_classes < 2) range_error("dataset.num_classes", "num_classes >= 2");
    if (d.dim < 2) range_error("dataset.dim", "dim >= 2");
    if (!(d.spread >= 0.0)) range_error("dataset.spread", "spread >= 0");
    if (c.kind == ExperimentKind::FlTrain && d.test_n_per_class < 1)
      range_error("dataset.test_n_per_class", "test_n_per_class >= 1");
  } else {
    if (d.train_files.empty())
      throw ConfigError("config: missing required key 'dataset.train_files' for cifar10");
    if (c.kind == ExperimentKind::FlTrain && d.test_files.empty())
      throw ConfigError("config: missing required key 'dataset.test_files' for cifar10 fl_train");
  }
  for (const auto& a : c.alphas)
    if (a && (!(*a > 0.0) || !std::isfinite(*a))) range_error("partition.alpha", "alpha > 0");
  if (c.n_clients < 1) range_error("partition.n_clients", "n_clients >= 1");
  if (c.seeds.empty()) range_error("seeds", "at least one seed");

  switch (c.kind) {
  case ExperimentKind::ImbalanceSweep:
  case ExperimentKind::SelectionSizeSweep:
    for (auto k : c.k_values)
      if (k < 1 || k > c.n_clients) range_error("imbalance.k", "1 <= k <= partition.n_clients");
    if (c.trials < 1) range_error("imbalance.trials", "trials >= 1");
    break;
  case ExperimentKind::BatterySweep:
    if (c.select_k < 1) range_error("fleet.select_k", "select_k >= 1");
    for (auto p : c.pool_sizes)
      if (p < c.select_k || p > c.n_clients)
        range_error("fleet.pool_size", "select_k <= pool_size <= partition.n_clients");
    for (auto w : c.window_sizes) {
      if (w < 1) range_error("fleet.window_size", "window_size >= 1");
      if (c.fleet_rounds < w) range_error("fleet.rounds", "rounds >= every window_size");
    }
    for (auto s : c.step_sizes)
      if (!(s >= 0.0) || !std::isfinite(s)) range_error("fleet.step_size", "step_size >= 0");
    break;
  case ExperimentKind::FlTrain: {
    const auto& h = c.hyper;
    if (!(h.learning_rate > 0.0)) range_error("hyper.learning_rate", "learning_rate > 0");
    if (h.local_epochs < 1) range_error("hyper.local_epochs", "local_epochs >= 1");
    if (h.batch_size < 1) range_error("hyper.batch_size", "batch_size >= 1");
    if (!(h.prox_mu >= 0.0)) range_error("hyper.prox_mu", "prox_mu >= 0");
    if (!(h.moon_mu >= 0.0)) range_error("hyper.moon_mu", "moon_mu >= 0");
    if (!(h.moon_tau > 0.0)) range_error("hyper.moon_tau", "moon_tau > 0");
    if (!(h.server_lr >= 0.0)) range_error("hyper.server_lr", "server_lr >= 0");
    if (c.train_rounds < 1) range_error("train.rounds", "rounds >= 1");
    if (c.clients_per_round < 1 || c.clients_per_round > c.n_clients)
      range_error("train.clients_per_round", "1 <= clients_per_round <= partition.n_clients");
    if (c.hidden < 1) range_error("train.hidden", "hidden >= 1");
    if (!(c.target_accuracy > 0.0 && c.target_accuracy <= 1.0))
      range_error("train.target_accuracy", "0 < target_accuracy <= 1");
    if (c.smoothing_window < 1) range_error("train.smoothing_window", "smoothing_window >= 1");
    break;
  }
  }
}

} // namespace detail

// Parses a JSON config document. Keys may be nested objects or dotted
// names; both flatten to the same schema. Unknown keys, keys that do not
// apply to the chosen kind, a missing "kind" and out-of-range values are
// all errors.
inline ExperimentConfig parse_config(std::string_view text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");

  std::map<std::string, json> flat;
  detail::flatten_into(doc, "", flat);

  const auto kind_it = flat.find("kind");
  if (kind_it == flat.end()) throw ConfigError("config: missing required key 'kind'");
  ExperimentConfig cfg;
  const auto kind_name = detail::as_string(kind_it->second, "kind");
  bool found = false;
  for (auto k : {ExperimentKind::ImbalanceSweep, ExperimentKind::SelectionSizeSweep,
                 ExperimentKind::BatterySweep, ExperimentKind::FlTrain})
    if (to_string(k) == kind_name) {
      cfg.kind = k;
      found = true;
    }
  if (!found)
    throw ConfigError("config: key 'kind' must be one of imbalance_sweep, selection_size_sweep, "
                      "battery_sweep, fl_train (got '" + kind_name + "')");
  if (cfg.kind == ExperimentKind::SelectionSizeSweep) cfg.resample_every = 0;
  if (cfg.kind == ExperimentKind::FlTrain) cfg.dataset.n_per_class = 100;

  const auto& schema = detail::key_schema();
  const unsigned mask = detail::mask_of(cfg.kind);
  for (const auto& [key, value] : flat) {
    if (key == "kind") continue;
    const auto it = schema.find(key);
    if (it == schema.end()) throw ConfigError("config: unknown key '" + key + "'");
    if (!(it->second.kinds & mask))
      throw ConfigError("config: key '" + key + "' does not apply to kind '" + kind_name + "'");
    it->second.apply(value, key, cfg);
  }
  detail::validate_ranges(cfg);
  return cfg;
}

// Fully resolved config (defaults included) as dotted keys, for echoing.
inline nlohmann::json describe(const ExperimentConfig& c) {
  using nlohmann::json;
  json j;
  j["kind"] = to_string(c.kind);
  j["output"] = c.output;
  j["threads"] = c.threads;
  j["seeds"] = c.seeds;
  j["dataset.source"] = c.dataset.source;
  if (c.dataset.source == "synthetic") {
    j["dataset.n_per_class"] = c.dataset.n_per_class;
    j["dataset.num_classes"] = c.dataset.num_classes;
    j["dataset.dim"] = c.dataset.dim;
    j["dataset.spread"] = c.dataset.spread;
    j["dataset.seed"] = c.dataset.seed;
    if (c.kind == ExperimentKind::FlTrain) {
      j["dataset.test_n_per_class"] = c.dataset.test_n_per_class;
      j["dataset.test_seed"] = c.dataset.test_seed;
    }
  } else {
    j["dataset.train_files"] = c.dataset.train_files;
    if (c.kind == ExperimentKind::FlTrain) j["dataset.test_files"] = c.dataset.test_files;
  }
  json alphas = json::array();
  for (const auto& a : c.alphas) alphas.push_back(a ? json(*a) : json("homogeneous"));
  j["partition.alpha"] = alphas;
  j["partition.n_clients"] = c.n_clients;
  switch (c.kind) {
  case ExperimentKind::ImbalanceSweep:
    j["imbalance.resample_every"] = c.resample_every;
    [[fallthrough]];
  case ExperimentKind::SelectionSizeSweep:
    j["imbalance.k"] = c.k_values;
    j["imbalance.trials"] = c.trials;
    break;
  case ExperimentKind::BatterySweep:
    j["fleet.pool_size"] = c.pool_sizes;
    j["fleet.window_size"] = c.window_sizes;
    j["fleet.step_size"] = c.step_sizes;
    j["fleet.select_k"] = c.select_k;
    j["fleet.rounds"] = c.fleet_rounds;
    break;
  case ExperimentKind::FlTrain: {
    j["hyper.learning_rate"] = c.hyper.learning_rate;
    j["hyper.local_epochs"] = c.hyper.local_epochs;
    j["hyper.batch_size"] = c.hyper.batch_size;
    j["hyper.prox_mu"] = c.hyper.prox_mu;
    j["hyper.moon_mu"] = c.hyper.moon_mu;
    j["hyper.moon_tau"] = c.hyper.moon_tau;
    j["hyper.server_lr"] = c.hyper.server_lr;
    json algos = json::array();
    for (auto a : c.algorithms) algos.push_back(fl::to_string(a));
    j["train.algorithm"] = algos;
    j["train.rounds"] = c.train_rounds;
    j["train.clients_per_round"] = c.clients_per_round;
    j["train.hidden"] = c.hidden;
    j["train.target_accuracy"] = c.target_accuracy;
    j["train.smoothing_window"] = c.smoothing_window;
    break;
  }
  }
  return j;
}

} // namespace fedimb::runner
