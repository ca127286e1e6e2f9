#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmem/adam.hpp"
#include "fedmem/datasets.hpp"
#include "fedmem/error.hpp"
#include "fedmem/metrics.hpp"
#include "fedmem/network.hpp"
#include "fedmem/parallel.hpp"
#include "fedmem/param_set.hpp"
#include "fedmem/partitioning.hpp"
#include "fedmem/rng.hpp"

namespace fedmem {

enum class Strategy { local, fedavg, fedprox, apfl };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::local: return "local";
    case Strategy::fedavg: return "fedavg";
    case Strategy::fedprox: return "fedprox";
    case Strategy::apfl: return "apfl";
  }
  return "unknown";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "local") return Strategy::local;
  if (s == "fedavg") return Strategy::fedavg;
  if (s == "fedprox") return Strategy::fedprox;
  if (s == "apfl") return Strategy::apfl;
  throw ConfigError("unknown strategy '" + s + "' (expected local, fedavg, fedprox or apfl)");
}

enum class AggregationMode { sync, async };

struct TrainingConfig {
  int local_epochs = 20;
  int batch_size = 50;
  double learning_rate = 0.0002;
  Strategy strategy = Strategy::fedavg;
  double prox_mu = 0.01;
  int rounds = 30;
  int clients_per_round = 5;
  AggregationMode mode = AggregationMode::sync;
  double async_eta0 = 0.5;
};

/// Minibatch Adam settings for a single classifier fit.
struct FitOptions {
  int epochs = 20;
  int batch_size = 50;
  double learning_rate = 0.0002;
  double prox_mu = 0.0;  // > 0 adds (mu/2)|theta - start|^2
};

/// Trains a copy of `start` on `data` with fresh Adam state. Batches are
/// drawn from a per-epoch shuffle seeded by `seed`; the last batch of an
/// epoch may be short. `context` is prepended to error messages.
inline ParamSet fit_classifier(const ParamSet& start, const Dataset& data, const FitOptions& opt, std::uint64_t seed,
                               const std::string& context = "") {
  ParamSet params = start;
  if (opt.epochs <= 0) return params;
  if (data.empty()) throw TrainingError(context + "no training rows");
  if (opt.batch_size <= 0) throw ConfigError("batch_size must be positive");
  AdamState adam = AdamState::for_params(params);
  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto batch = static_cast<std::size_t>(opt.batch_size);
  std::vector<int> labels;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start_row = 0; start_row < order.size(); start_row += batch) {
      const std::size_t end_row = std::min(order.size(), start_row + batch);
      std::span<const std::size_t> idx(order.data() + start_row, end_row - start_row);
      Tensor x = data.features.gather_rows(idx);
      labels.clear();
      for (auto r : idx) labels.push_back(data.labels[r]);
      LossSpec spec = opt.prox_mu > 0.0 ? LossSpec(ProximalCrossEntropyLoss{opt.prox_mu, &start})
                                        : LossSpec(CrossEntropyLoss{});
      BackwardResult res = backward(params, x, labels, spec);
      if (!std::isfinite(res.loss))
        throw TrainingError(context + "non-finite loss at epoch " + std::to_string(epoch));
      adam_step(params, res.grads, adam, opt.learning_rate);
    }
  }
  return params;
}

/// Client-side training of one round: E epochs of Adam on the client's
/// shard, with the proximal term for fedprox. `start` is never modified.
inline ParamSet local_train(const ParamSet& start, const Dataset& shard, const TrainingConfig& cfg,
                            std::uint64_t seed, const std::string& context = "") {
  FitOptions opt{cfg.local_epochs, cfg.batch_size, cfg.learning_rate,
                 cfg.strategy == Strategy::fedprox ? cfg.prox_mu : 0.0};
  return fit_classifier(start, shard, opt, seed, context);
}

struct ClientUpdate {
  int client_id = 0;
  ParamSet params;
  double weight = 0.0;  // typically |D_k|
};

/// Weighted parameter average. Weights are renormalized to sum to one and
/// contributions are added in ascending client-id order as
///   ref + sum_k w_k (theta_k - ref),  ref = lowest-id update,
/// which equals sum_k w_k theta_k and returns identical inputs bit-exactly.
inline ParamSet aggregate(std::vector<ClientUpdate> updates) {
  if (updates.empty()) throw AggregationError("no updates to aggregate");
  std::stable_sort(updates.begin(), updates.end(),
                   [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
  double total = 0.0;
  for (const auto& u : updates) {
    if (!(u.weight > 0.0) || !std::isfinite(u.weight))
      throw AggregationError("client " + std::to_string(u.client_id) + " has non-positive weight");
    if (!layout_equal(u.params, updates.front().params))
      throw AggregationError("client " + std::to_string(u.client_id) + " sent parameters with a different layout");
    total += u.weight;
  }
  const ParamSet& ref = updates.front().params;
  ParamSet out = ref;
  for (std::size_t l = 0; l < out.depth(); ++l) {
    auto combine = [&](Tensor& dst, Tensor Layer::*member) {
      const Tensor& base = ref.layer(l).*member;
      for (std::size_t i = 0; i < dst.size(); ++i) {
        double acc = 0.0;
        for (const auto& u : updates) acc += (u.weight / total) * ((u.params.layer(l).*member)[i] - base[i]);
        dst[i] = base[i] + acc;
      }
    };
    combine(out.layer(l).weight, &Layer::weight);
    combine(out.layer(l).bias, &Layer::bias);
  }
  return out;
}

struct Evaluation {
  double accuracy = 0.0;
  std::vector<double> per_class;  // NaN where the class has no rows
};

inline Evaluation evaluate(const ParamSet& params, const Dataset& ds) {
  if (ds.empty()) throw InputError("evaluation on an empty dataset");
  const auto pred = argmax_rows(forward(params, ds.features));
  const auto C = static_cast<std::size_t>(ds.class_count);
  std::vector<std::size_t> hit(C, 0), seen(C, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto y = static_cast<std::size_t>(ds.labels[i]);
    seen[y] += 1;
    if (pred[i] == ds.labels[i]) {
      hit[y] += 1;
      ++correct;
    }
  }
  Evaluation e;
  e.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  e.per_class.resize(C);
  for (std::size_t c = 0; c < C; ++c)
    e.per_class[c] = seen[c] ? static_cast<double>(hit[c]) / static_cast<double>(seen[c])
                             : std::numeric_limits<double>::quiet_NaN();
  return e;
}

/// Accuracy restricted to rows whose label is in `classes`; NaN if none.
inline double accuracy_on_classes(const ParamSet& params, const Dataset& ds, const std::vector<int>& classes) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (std::find(classes.begin(), classes.end(), ds.labels[i]) != classes.end()) rows.push_back(i);
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  return evaluate(params, ds.subset(rows)).accuracy;
}

struct ServerState {
  ParamSet global;
  int round = 0;
  std::int64_t version = 0;              // number of updates applied (async)
  std::map<int, std::int64_t> pulled;    // client id -> version it last pulled
};

struct ClientState {
  int id = 0;
  Dataset train;
  Dataset test;
  ParamSet local;          // last locally trained model
  int last_round = -1;     // last round the client trained in, -1 if never
};

/// Uniform sample of m distinct ids from `available`, returned ascending.
/// Deterministic per (seed, round).
inline std::vector<int> select_clients(std::vector<int> available, int m, std::uint64_t seed, int round) {
  if (available.empty()) return {};
  if (m <= 0) throw ConfigError("clients_per_round must be positive");
  if (static_cast<std::size_t>(m) > available.size())
    throw ConfigError("cannot select " + std::to_string(m) + " of " + std::to_string(available.size()) +
                      " available clients");
  std::sort(available.begin(), available.end());
  Rng rng(derive_seed(seed, "select", {round}));
  for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i) {
    const std::size_t j = i + rng.index(available.size() - i);
    std::swap(available[i], available[j]);
  }
  available.resize(static_cast<std::size_t>(m));
  std::sort(available.begin(), available.end());
  return available;
}

inline double async_mix_weight(double eta0, std::int64_t staleness) {
  return eta0 / (1.0 + static_cast<double>(staleness));
}

/// Everything a round needs besides server and client state.
struct RoundEnv {
  std::uint64_t seed = 0;
  DropoutSchedule schedule;
  int workers = 1;
  const Dataset* global_test = nullptr;
  // Record labelling; records are produced only when `emit` is set.
  bool emit = true;
  bool emit_client_records = true;
  std::string run_id;
  std::string strategy;
};

struct RoundOutcome {
  std::vector<int> selected;
  bool skipped = false;
  std::vector<MetricsRecord> records;
};

namespace detail {

inline std::uint64_t client_seed(std::uint64_t master, int client, int round) {
  return derive_seed(master, "client", {client, round});
}

inline std::vector<ParamSet> train_selected(const ParamSet& start, std::vector<ClientState>& clients,
                                            const std::vector<int>& selected, const TrainingConfig& cfg,
                                            const RoundEnv& env, int round) {
  std::vector<ParamSet> trained(selected.size());
  parallel_for(selected.size(), env.workers, [&](std::size_t i) {
    const ClientState& c = clients.at(static_cast<std::size_t>(selected[i]));
    if (c.train.empty()) throw TrainingError("client " + std::to_string(c.id) + " has an empty shard");
    trained[i] = local_train(start, c.train, cfg, client_seed(env.seed, c.id, round),
                             "round " + std::to_string(round) + ", client " + std::to_string(c.id) + ": ");
  });
  for (std::size_t i = 0; i < selected.size(); ++i) {
    ClientState& c = clients[static_cast<std::size_t>(selected[i])];
    c.local = trained[i];
    c.last_round = round;
  }
  return trained;
}

inline void emit_round_records(const ServerState& server, const std::vector<ClientState>& clients,
                               const RoundEnv& env, std::vector<MetricsRecord>& out) {
  if (!env.emit) return;
  if (env.global_test != nullptr && !env.global_test->empty()) {
    out.push_back({env.run_id, env.seed, server.round, env.strategy, kGlobalClient, "test", "accuracy",
                   evaluate(server.global, *env.global_test).accuracy});
  }
  if (!env.emit_client_records) return;
  for (const auto& c : clients) {
    if (c.test.empty()) continue;
    out.push_back({env.run_id, env.seed, server.round, env.strategy, std::to_string(c.id), "test", "accuracy",
                   evaluate(server.global, c.test).accuracy});
  }
}

}  // namespace detail

/// One synchronous round: select, broadcast, train locally, aggregate by
/// shard size, advance the round counter, evaluate.
inline RoundOutcome run_round_sync(ServerState& server, std::vector<ClientState>& clients, const TrainingConfig& cfg,
                                   const RoundEnv& env) {
  RoundOutcome out;
  const auto available = availability(env.schedule, server.round);
  const int m = std::min<int>(cfg.clients_per_round, static_cast<int>(available.size()));
  out.selected = select_clients(available, m, env.seed, server.round);
  if (out.selected.empty()) {
    out.skipped = true;
    server.round += 1;
    detail::emit_round_records(server, clients, env, out.records);
    return out;
  }
  for (int k : out.selected) server.pulled[k] = server.version;
  auto trained = detail::train_selected(server.global, clients, out.selected, cfg, env, server.round);
  std::vector<ClientUpdate> updates;
  for (std::size_t i = 0; i < out.selected.size(); ++i) {
    const auto& c = clients[static_cast<std::size_t>(out.selected[i])];
    updates.push_back({c.id, std::move(trained[i]), static_cast<double>(c.train.size())});
  }
  server.global = aggregate(std::move(updates));
  server.version += 1;
  server.round += 1;
  detail::emit_round_records(server, clients, env, out.records);
  return out;
}

/// One asynchronous round. Selected clients pull the current model, train,
/// and arrive in a seeded-random order; each arrival is mixed in at once:
///   theta* <- (1 - eta) theta* + eta theta_k,  eta = eta0 / (1 + s),
/// where s counts the updates applied since that client pulled.
inline RoundOutcome run_round_async(ServerState& server, std::vector<ClientState>& clients, const TrainingConfig& cfg,
                                    const RoundEnv& env) {
  RoundOutcome out;
  const auto available = availability(env.schedule, server.round);
  const int m = std::min<int>(cfg.clients_per_round, static_cast<int>(available.size()));
  out.selected = select_clients(available, m, env.seed, server.round);
  if (out.selected.empty()) {
    out.skipped = true;
    server.round += 1;
    detail::emit_round_records(server, clients, env, out.records);
    return out;
  }
  for (int k : out.selected) server.pulled[k] = server.version;
  auto trained = detail::train_selected(server.global, clients, out.selected, cfg, env, server.round);

  std::vector<std::size_t> arrival(out.selected.size());
  for (std::size_t i = 0; i < arrival.size(); ++i) arrival[i] = i;
  Rng rng(derive_seed(env.seed, "arrival", {server.round}));
  rng.shuffle(arrival);
  for (std::size_t i : arrival) {
    const int k = out.selected[i];
    const double eta = async_mix_weight(cfg.async_eta0, server.version - server.pulled[k]);
    server.global = affine_combine(server.global, 1.0 - eta, trained[i], eta);
    server.version += 1;
  }
  server.round += 1;
  detail::emit_round_records(server, clients, env, out.records);
  return out;
}

inline RoundOutcome run_round(ServerState& server, std::vector<ClientState>& clients, const TrainingConfig& cfg,
                              const RoundEnv& env) {
  return cfg.mode == AggregationMode::sync ? run_round_sync(server, clients, cfg, env)
                                           : run_round_async(server, clients, cfg, env);
}

}  // namespace fedmem
