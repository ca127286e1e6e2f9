#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedmem/datasets.hpp"
#include "fedmem/error.hpp"
#include "fedmem/rng.hpp"

namespace fedmem {

enum class PartitionMode { dirichlet, pathological };

struct Monopoly {
  int client = 0;
  std::vector<int> classes;
};

struct PartitionSpec {
  PartitionMode mode = PartitionMode::dirichlet;
  double alpha = 0.1;  // dirichlet
  int gamma = 2;       // pathological
  int clients = 5;
  std::uint64_t seed = 0;
  std::optional<Monopoly> monopoly;
};

/// Row indices into the training set, one list per client (ascending).
struct ClientShards {
  std::vector<std::vector<std::size_t>> rows;
  // Classes assigned to each client; filled by the pathological partitioner.
  std::vector<std::vector<int>> classes;

  std::size_t clients() const { return rows.size(); }
  friend bool operator==(const ClientShards&, const ClientShards&) = default;
};

inline void validate_spec(const PartitionSpec& spec, int class_count) {
  if (spec.clients < 2) throw ConfigError("partition needs at least 2 clients, got " + std::to_string(spec.clients));
  if (spec.mode == PartitionMode::dirichlet && !(spec.alpha > 0.0))
    throw ConfigError("dirichlet alpha must be positive");
  if (spec.mode == PartitionMode::pathological && (spec.gamma < 1 || spec.gamma > class_count))
    throw ConfigError("gamma must lie in [1, " + std::to_string(class_count) + "], got " + std::to_string(spec.gamma));
  if (spec.monopoly) {
    if (spec.monopoly->client < 0 || spec.monopoly->client >= spec.clients)
      throw ConfigError("monopoly client " + std::to_string(spec.monopoly->client) + " is not a valid client id");
    for (int c : spec.monopoly->classes)
      if (c < 0 || c >= class_count) throw ConfigError("monopoly class " + std::to_string(c) + " outside [0, C)");
  }
}

/// Dirichlet label-skew partition.
///
/// Each class draws p_c ~ Dir(alpha * 1_K) and its (shuffled) rows are
/// handed out by largest-remainder apportionment of p_c. The whole draw is
/// repeated until every client owns at least one row, at most 100 times.
inline ClientShards dirichlet_partition(const Dataset& train, const PartitionSpec& spec) {
  if (spec.mode != PartitionMode::dirichlet) throw ConfigError("dirichlet_partition called with a non-dirichlet spec");
  validate_spec(spec, train.class_count);
  const auto K = static_cast<std::size_t>(spec.clients);
  Rng rng(derive_seed(spec.seed, "dirichlet"));
  for (int attempt = 0; attempt < 100; ++attempt) {
    ClientShards shards;
    shards.rows.assign(K, {});
    for (int c = 0; c < train.class_count; ++c) {
      auto rows = train.rows_of_class(c);
      if (rows.empty()) continue;
      rng.shuffle(rows);
      const auto p = rng.dirichlet(K, spec.alpha);
      const auto counts = apportion(p, rows.size());
      std::size_t pos = 0;
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < counts[k]; ++i) shards.rows[k].push_back(rows[pos++]);
    }
    bool all_nonempty = std::all_of(shards.rows.begin(), shards.rows.end(), [](const auto& r) { return !r.empty(); });
    if (!all_nonempty) continue;
    for (auto& r : shards.rows) std::sort(r.begin(), r.end());
    return shards;
  }
  throw PartitionError("could not give every one of " + std::to_string(K) +
                       " clients a row in 100 dirichlet draws; use a larger dataset or alpha");
}

/// Pathological partition: every client holds exactly gamma classes.
///
/// Monopoly classes go to the designated client only. The remaining classes
/// are dealt out seeded-randomly so that each is held at least once, then
/// free slots are filled with random classes the client does not yet hold.
/// A class's rows are split as evenly as possible among its holders.
inline ClientShards pathological_partition(const Dataset& train, const PartitionSpec& spec) {
  if (spec.mode != PartitionMode::pathological)
    throw ConfigError("pathological_partition called with a non-pathological spec");
  validate_spec(spec, train.class_count);
  const int K = spec.clients;
  const int C = train.class_count;
  const int gamma = spec.gamma;

  std::set<int> monopoly_classes;
  int monopoly_client = -1;
  if (spec.monopoly) {
    monopoly_classes.insert(spec.monopoly->classes.begin(), spec.monopoly->classes.end());
    monopoly_client = spec.monopoly->client;
    if (static_cast<int>(monopoly_classes.size()) > gamma)
      throw ConfigError("monopoly client holds " + std::to_string(monopoly_classes.size()) +
                        " classes but gamma is " + std::to_string(gamma));
  }
  std::vector<int> open_classes;
  for (int c = 0; c < C; ++c)
    if (!monopoly_classes.count(c)) open_classes.push_back(c);
  const int open = static_cast<int>(open_classes.size());

  std::vector<std::vector<int>> held(static_cast<std::size_t>(K));
  std::vector<int> free_slots(static_cast<std::size_t>(K), gamma);
  if (monopoly_client >= 0) {
    held[monopoly_client].assign(monopoly_classes.begin(), monopoly_classes.end());
    free_slots[monopoly_client] -= static_cast<int>(monopoly_classes.size());
  }
  int total_free = 0;
  for (int k = 0; k < K; ++k) {
    total_free += free_slots[k];
    if (free_slots[k] > open)
      throw ConfigError("client " + std::to_string(k) + " needs " + std::to_string(free_slots[k]) +
                        " non-monopoly classes but only " + std::to_string(open) + " exist");
  }
  if (total_free < open)
    throw ConfigError("K*gamma < C: " + std::to_string(K) + " clients x " + std::to_string(gamma) +
                      " classes cannot cover " + std::to_string(C) + " classes");

  Rng rng(derive_seed(spec.seed, "pathological"));
  std::vector<int> deck = open_classes;
  rng.shuffle(deck);
  std::vector<int> client_order(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) client_order[k] = k;
  rng.shuffle(client_order);

  // Coverage pass: deal every open class once, cycling through clients.
  std::size_t cursor = 0;
  for (int c : deck) {
    while (free_slots[client_order[cursor % K]] == 0) ++cursor;
    const int k = client_order[cursor % K];
    held[k].push_back(c);
    free_slots[k] -= 1;
    ++cursor;
  }
  // Fill pass.
  for (int k : client_order) {
    while (free_slots[k] > 0) {
      std::vector<int> candidates;
      for (int c : open_classes)
        if (std::find(held[k].begin(), held[k].end(), c) == held[k].end()) candidates.push_back(c);
      held[k].push_back(candidates[rng.index(candidates.size())]);
      free_slots[k] -= 1;
    }
  }

  ClientShards shards;
  shards.rows.assign(static_cast<std::size_t>(K), {});
  for (auto& h : held) std::sort(h.begin(), h.end());
  shards.classes = held;
  for (int c = 0; c < C; ++c) {
    std::vector<int> holders;
    for (int k = 0; k < K; ++k)
      if (std::find(held[k].begin(), held[k].end(), c) != held[k].end()) holders.push_back(k);
    auto rows = train.rows_of_class(c);
    rng.shuffle(rows);
    const std::size_t h = holders.size();
    std::size_t pos = 0;
    for (std::size_t j = 0; j < h; ++j) {
      const std::size_t take = rows.size() / h + (j < rows.size() % h ? 1 : 0);
      for (std::size_t i = 0; i < take; ++i) shards.rows[holders[j]].push_back(rows[pos++]);
    }
  }
  for (int k = 0; k < K; ++k) {
    if (shards.rows[k].empty())
      throw PartitionError("client " + std::to_string(k) + " received no rows; the training set is too small");
    std::sort(shards.rows[k].begin(), shards.rows[k].end());
  }
  return shards;
}

inline ClientShards partition(const Dataset& train, const PartitionSpec& spec) {
  return spec.mode == PartitionMode::dirichlet ? dirichlet_partition(train, spec) : pathological_partition(train, spec);
}

/// Distributes test rows among clients so that each client's slice follows
/// the label distribution of its training shard: for every class, the test
/// rows are apportioned by largest remainder over the clients' training
/// counts of that class.
inline std::vector<std::vector<std::size_t>> distribute_test_rows(const Dataset& train, const ClientShards& shards,
                                                                  const Dataset& test) {
  const std::size_t K = shards.clients();
  std::vector<std::vector<std::size_t>> counts(static_cast<std::size_t>(train.class_count),
                                               std::vector<std::size_t>(K, 0));
  for (std::size_t k = 0; k < K; ++k)
    for (auto r : shards.rows[k]) counts[static_cast<std::size_t>(train.labels[r])][k] += 1;
  std::vector<std::vector<std::size_t>> slices(K);
  for (int c = 0; c < test.class_count; ++c) {
    const auto rows = test.rows_of_class(c);
    if (rows.empty() || static_cast<std::size_t>(c) >= counts.size()) continue;
    std::vector<double> shares(counts[c].begin(), counts[c].end());
    const auto take = apportion(shares, rows.size());
    std::size_t pos = 0;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < take[k]; ++i) slices[k].push_back(rows[pos++]);
  }
  for (auto& s : slices) std::sort(s.begin(), s.end());
  return slices;
}

/// Permanent dropout: clients in `dropped` stop participating from
/// `dropout_round` onward.
struct DropoutSchedule {
  int clients = 0;
  std::set<int> dropped;
  int dropout_round = 0;

  std::vector<int> non_dropout() const {
    std::vector<int> out;
    for (int k = 0; k < clients; ++k)
      if (!dropped.count(k)) out.push_back(k);
    return out;
  }
  bool is_dropped(int k) const { return dropped.count(k) > 0; }
};

inline std::vector<int> availability(const DropoutSchedule& schedule, int round) {
  if (round < 0) throw InputError("round must be nonnegative");
  if (round < schedule.dropout_round) {
    std::vector<int> all(static_cast<std::size_t>(schedule.clients));
    for (int k = 0; k < schedule.clients; ++k) all[k] = k;
    return all;
  }
  return schedule.non_dropout();
}

}  // namespace fedmem
