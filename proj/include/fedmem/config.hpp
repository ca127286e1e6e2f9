#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmem/error.hpp"
#include "fedmem/generator.hpp"
#include "fedmem/partitioning.hpp"
#include "fedmem/personalization.hpp"
#include "fedmem/protocol.hpp"

namespace fedmem {

struct DatasetSpec {
  std::string kind = "blobs";  // "blobs" or "csv"
  int classes = 10;
  int dim = 8;
  int n_per_class = 300;
  double spread = 1.0;
  std::uint64_t layout_seed = 1;
  std::uint64_t sample_seed = 2;
  std::string path;
};

struct SemanticSpec {
  std::string source = "class_means";  // "class_means" or "file"
  std::string path;
  int projection_dim = 0;
  std::uint64_t projection_seed = 11;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  double test_fraction = 0.1;
  std::uint64_t split_seed = 3;

  PartitionSpec partition;
  bool partition_seed_fixed = false;  // otherwise derived from the run seed

  std::vector<int> dropout_clients;
  int dropout_round = 0;

  TrainingConfig training;
  std::vector<Strategy> strategies = {Strategy::local, Strategy::fedavg, Strategy::apfl};
  std::vector<std::size_t> classifier_hidden = {64, 32};

  GeneratorConfig generator;
  NoiseSpec noise;
  SemanticSpec semantics;
  PersonalizationConfig personalization;

  std::uint64_t master_seed = 1;
  int repeat = 1;
  std::vector<std::uint64_t> seed_list;  // explicit seeds override master_seed/repeat
  int workers = 1;
  std::string output = "metrics.csv";

  std::vector<std::uint64_t> seeds() const {
    if (!seed_list.empty()) return seed_list;
    std::vector<std::uint64_t> out;
    for (int i = 0; i < repeat; ++i) out.push_back(master_seed + static_cast<std::uint64_t>(i));
    return out;
  }
  bool has(Strategy s) const { return std::find(strategies.begin(), strategies.end(), s) != strategies.end(); }
  DropoutSchedule schedule() const {
    DropoutSchedule d;
    d.clients = partition.clients;
    d.dropped.insert(dropout_clients.begin(), dropout_clients.end());
    d.dropout_round = dropout_round;
    return d;
  }
};

namespace detail {

using nlohmann::json;

/// Reads keys out of one JSON object and rejects any key nobody asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be a JSON object");
  }

  template <class T>
  void get(const std::string& key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("key '" + name(key) + "' has the wrong type");
    }
  }
  bool contains(const std::string& key) const { return j_.contains(key); }
  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown key '" + name(key) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& key, const std::string& constraint) {
  if (!ok) throw ConfigError("'" + key + "' must satisfy " + constraint);
}

inline void read_fit(StrictObject& parent, const std::string& key, FitOptions& fit) {
  StrictObject o(parent.at(key), parent.name(key));
  o.get("epochs", fit.epochs);
  o.get("batch_size", fit.batch_size);
  o.get("learning_rate", fit.learning_rate);
  o.finish();
}

}  // namespace detail

/// Checks cross-field consistency. `classes` is the class count when known
/// (blobs); CSV datasets are re-checked after loading.
inline void validate_config(const ExperimentConfig& c, int classes) {
  using detail::require;
  require(c.dataset.kind == "blobs" || c.dataset.kind == "csv", "dataset.kind", "one of blobs, csv");
  if (c.dataset.kind == "blobs") {
    require(c.dataset.classes >= 2, "dataset.classes", ">= 2");
    require(c.dataset.dim >= 2, "dataset.dim", ">= 2");
    require(c.dataset.n_per_class >= 10, "dataset.n_per_class", ">= 10");
    require(c.dataset.spread > 0.0, "dataset.spread", "> 0");
  } else {
    require(!c.dataset.path.empty(), "dataset.path", "a non-empty path for csv datasets");
  }
  require(c.test_fraction > 0.0 && c.test_fraction < 1.0, "test_fraction", "0 < test_fraction < 1");

  const int K = c.partition.clients;
  require(K >= 2, "partition.clients", ">= 2");
  if (c.partition.mode == PartitionMode::dirichlet) {
    require(c.partition.alpha > 0.0, "partition.alpha", "> 0");
  } else {
    require(c.partition.gamma >= 1, "partition.gamma", ">= 1");
    if (classes > 0) {
      require(c.partition.gamma <= classes, "partition.gamma", "<= number of classes");
      if (static_cast<long>(K) * c.partition.gamma < classes)
        throw ConfigError("K·γ < C: partition.clients (" + std::to_string(K) + ") x partition.gamma (" +
                          std::to_string(c.partition.gamma) + ") cannot cover " + std::to_string(classes) + " classes");
    }
  }
  if (c.partition.monopoly) {
    require(c.partition.mode == PartitionMode::pathological, "partition.monopoly", "pathological mode");
    require(c.partition.monopoly->client >= 0 && c.partition.monopoly->client < K, "partition.monopoly.client",
            "a client id below partition.clients");
    require(static_cast<int>(c.partition.monopoly->classes.size()) <= c.partition.gamma, "partition.monopoly.classes",
            "at most gamma classes");
    for (int cls : c.partition.monopoly->classes)
      require(cls >= 0 && (classes <= 0 || cls < classes), "partition.monopoly.classes", "class ids in [0, C)");
  }

  std::set<int> dropped(c.dropout_clients.begin(), c.dropout_clients.end());
  require(dropped.size() == c.dropout_clients.size(), "dropout.clients", "distinct ids");
  for (int k : dropped) require(k >= 0 && k < K, "dropout.clients", "client ids below partition.clients");
  require(static_cast<int>(dropped.size()) < K, "dropout.clients", "a strict subset of the clients");
  require(c.dropout_round >= 0, "dropout.round", ">= 0");

  const auto& t = c.training;
  require(t.local_epochs >= 0, "training.local_epochs", ">= 0");
  require(t.batch_size >= 1, "training.batch_size", ">= 1");
  require(t.learning_rate > 0.0, "training.learning_rate", "> 0");
  require(t.rounds >= 1, "training.rounds", ">= 1");
  require(t.clients_per_round >= 1 && t.clients_per_round <= K, "training.clients_per_round",
          "1 <= clients_per_round <= partition.clients");
  require(t.prox_mu >= 0.0, "training.fedprox_mu", ">= 0");
  require(t.async_eta0 > 0.0 && t.async_eta0 <= 1.0, "training.async_eta0", "0 < eta0 <= 1");
  require(!c.strategies.empty(), "training.strategies", "a non-empty list");
  require(!c.classifier_hidden.empty(), "training.hidden", "a non-empty list");
  for (auto w : c.classifier_hidden) require(w >= 1, "training.hidden", "positive widths");

  const auto& g = c.generator;
  require(g.lambda >= 0.0 && g.lambda <= 1.0, "generator.lambda", "0 <= lambda <= 1");
  require(g.samples_per_class >= 2, "generator.samples_per_class", ">= 2");
  require(g.epochs >= 0, "generator.epochs", ">= 0");
  require(g.batch_size >= 2, "generator.batch_size", ">= 2");
  require(g.learning_rate > 0.0, "generator.learning_rate", "> 0");
  for (auto w : g.hidden) require(w >= 1, "generator.hidden", "positive widths");
  require(c.noise.dim >= 1, "noise.dim", ">= 1");

  require(c.semantics.source == "class_means" || c.semantics.source == "file", "semantics.source",
          "one of class_means, file");
  if (c.semantics.source == "file") require(!c.semantics.path.empty(), "semantics.path", "a path when source is file");
  if (c.semantics.source == "class_means")
    require(c.dataset.kind == "blobs", "semantics.source", "'file' for csv datasets (no stored class means)");
  require(c.semantics.projection_dim >= 0, "semantics.projection_dim", ">= 0");

  const auto& p = c.personalization;
  require(p.beta >= 0.0 && p.beta <= 1.0, "personalization.beta", "0 <= beta <= 1");
  require(p.budget_per_client >= 0, "personalization.budget_per_client", ">= 0 (0 selects n_s per present class)");
  require(p.seen_ratio >= 0.0, "personalization.seen_ratio", ">= 0");
  require(p.friend_fit.epochs >= 0, "personalization.friend.epochs", ">= 0");
  require(p.friend_fit.batch_size >= 1, "personalization.friend.batch_size", ">= 1");
  require(p.friend_fit.learning_rate > 0.0, "personalization.friend.learning_rate", "> 0");

  require(c.repeat >= 1, "repeat", ">= 1");
  require(c.workers >= 1, "workers", ">= 1");
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::StrictObject;
  ExperimentConfig c;
  StrictObject root(j, "");

  if (root.contains("dataset")) {
    StrictObject o(root.at("dataset"), "dataset");
    o.get("kind", c.dataset.kind);
    o.get("classes", c.dataset.classes);
    o.get("dim", c.dataset.dim);
    o.get("n_per_class", c.dataset.n_per_class);
    o.get("spread", c.dataset.spread);
    o.get("layout_seed", c.dataset.layout_seed);
    o.get("sample_seed", c.dataset.sample_seed);
    o.get("path", c.dataset.path);
    o.finish();
  }
  root.get("test_fraction", c.test_fraction);
  root.get("split_seed", c.split_seed);

  if (root.contains("partition")) {
    StrictObject o(root.at("partition"), "partition");
    std::string mode = "dirichlet";
    o.get("mode", mode);
    if (mode == "dirichlet") c.partition.mode = PartitionMode::dirichlet;
    else if (mode == "pathological") c.partition.mode = PartitionMode::pathological;
    else throw ConfigError("'partition.mode' must be dirichlet or pathological, got '" + mode + "'");
    o.get("alpha", c.partition.alpha);
    o.get("gamma", c.partition.gamma);
    o.get("clients", c.partition.clients);
    if (o.contains("seed")) {
      o.get("seed", c.partition.seed);
      c.partition_seed_fixed = true;
    }
    if (o.contains("monopoly")) {
      StrictObject m(o.at("monopoly"), "partition.monopoly");
      Monopoly mono;
      m.get("client", mono.client);
      m.get("classes", mono.classes);
      m.finish();
      c.partition.monopoly = mono;
    }
    o.finish();
  }

  if (root.contains("dropout")) {
    StrictObject o(root.at("dropout"), "dropout");
    o.get("clients", c.dropout_clients);
    o.get("round", c.dropout_round);
    o.finish();
  }

  if (root.contains("training")) {
    StrictObject o(root.at("training"), "training");
    o.get("local_epochs", c.training.local_epochs);
    o.get("batch_size", c.training.batch_size);
    o.get("learning_rate", c.training.learning_rate);
    o.get("rounds", c.training.rounds);
    o.get("clients_per_round", c.training.clients_per_round);
    o.get("fedprox_mu", c.training.prox_mu);
    o.get("async_eta0", c.training.async_eta0);
    o.get("hidden", c.classifier_hidden);
    std::string mode = "sync";
    o.get("mode", mode);
    if (mode == "sync") c.training.mode = AggregationMode::sync;
    else if (mode == "async") c.training.mode = AggregationMode::async;
    else throw ConfigError("'training.mode' must be sync or async, got '" + mode + "'");
    if (o.contains("strategies")) {
      std::vector<std::string> names;
      o.get("strategies", names);
      c.strategies.clear();
      for (const auto& n : names) {
        const Strategy s = parse_strategy(n);
        if (std::find(c.strategies.begin(), c.strategies.end(), s) == c.strategies.end()) c.strategies.push_back(s);
      }
    }
    o.finish();
  }
  if (!root.contains("training") || !root.at("training").contains("clients_per_round"))
    c.training.clients_per_round = c.partition.clients;

  if (root.contains("generator")) {
    StrictObject o(root.at("generator"), "generator");
    o.get("lambda", c.generator.lambda);
    o.get("samples_per_class", c.generator.samples_per_class);
    o.get("epochs", c.generator.epochs);
    o.get("batch_size", c.generator.batch_size);
    o.get("learning_rate", c.generator.learning_rate);
    o.get("hidden", c.generator.hidden);
    o.get("retrain_every_round", c.generator.retrain_every_round);
    o.finish();
  }
  if (root.contains("noise")) {
    StrictObject o(root.at("noise"), "noise");
    o.get("dim", c.noise.dim);
    o.finish();
  }
  if (root.contains("semantics")) {
    StrictObject o(root.at("semantics"), "semantics");
    o.get("source", c.semantics.source);
    o.get("path", c.semantics.path);
    o.get("projection_dim", c.semantics.projection_dim);
    o.get("projection_seed", c.semantics.projection_seed);
    o.finish();
  }
  if (root.contains("personalization")) {
    StrictObject o(root.at("personalization"), "personalization");
    o.get("beta", c.personalization.beta);
    o.get("budget_per_client", c.personalization.budget_per_client);
    o.get("seen_ratio", c.personalization.seen_ratio);
    if (o.contains("friend_init")) {
      std::string v;
      o.get("friend_init", v);
      if (v == "global") c.personalization.friend_init = PersonalizationConfig::FriendInit::global;
      else if (v == "init") c.personalization.friend_init = PersonalizationConfig::FriendInit::init;
      else throw ConfigError("'personalization.friend_init' must be global or init, got '" + v + "'");
    }
    if (o.contains("friend")) detail::read_fit(o, "friend", c.personalization.friend_fit);
    o.finish();
  }

  root.get("master_seed", c.master_seed);
  root.get("repeat", c.repeat);
  root.get("seeds", c.seed_list);
  root.get("workers", c.workers);
  root.get("output", c.output);
  root.finish();

  validate_config(c, c.dataset.kind == "blobs" ? c.dataset.classes : 0);
  return c;
}

/// Full, defaults-filled JSON form. Keys come out sorted, which makes the
/// dump a canonical text form of the configuration.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["dataset"] = {{"kind", c.dataset.kind},           {"classes", c.dataset.classes},
                  {"dim", c.dataset.dim},             {"n_per_class", c.dataset.n_per_class},
                  {"spread", c.dataset.spread},       {"layout_seed", c.dataset.layout_seed},
                  {"sample_seed", c.dataset.sample_seed}, {"path", c.dataset.path}};
  j["test_fraction"] = c.test_fraction;
  j["split_seed"] = c.split_seed;
  nlohmann::json p = {{"mode", c.partition.mode == PartitionMode::dirichlet ? "dirichlet" : "pathological"},
                      {"alpha", c.partition.alpha},
                      {"gamma", c.partition.gamma},
                      {"clients", c.partition.clients}};
  if (c.partition_seed_fixed) p["seed"] = c.partition.seed;
  if (c.partition.monopoly) p["monopoly"] = {{"client", c.partition.monopoly->client}, {"classes", c.partition.monopoly->classes}};
  j["partition"] = p;
  j["dropout"] = {{"clients", c.dropout_clients}, {"round", c.dropout_round}};
  std::vector<std::string> names;
  for (auto s : c.strategies) names.push_back(to_string(s));
  j["training"] = {{"local_epochs", c.training.local_epochs},
                   {"batch_size", c.training.batch_size},
                   {"learning_rate", c.training.learning_rate},
                   {"rounds", c.training.rounds},
                   {"clients_per_round", c.training.clients_per_round},
                   {"fedprox_mu", c.training.prox_mu},
                   {"async_eta0", c.training.async_eta0},
                   {"hidden", c.classifier_hidden},
                   {"mode", c.training.mode == AggregationMode::sync ? "sync" : "async"},
                   {"strategies", names}};
  j["generator"] = {{"lambda", c.generator.lambda},
                    {"samples_per_class", c.generator.samples_per_class},
                    {"epochs", c.generator.epochs},
                    {"batch_size", c.generator.batch_size},
                    {"learning_rate", c.generator.learning_rate},
                    {"hidden", c.generator.hidden},
                    {"retrain_every_round", c.generator.retrain_every_round}};
  j["noise"] = {{"dim", c.noise.dim}};
  j["semantics"] = {{"source", c.semantics.source},
                    {"path", c.semantics.path},
                    {"projection_dim", c.semantics.projection_dim},
                    {"projection_seed", c.semantics.projection_seed}};
  j["personalization"] = {{"beta", c.personalization.beta},
                          {"budget_per_client", c.personalization.budget_per_client},
                          {"seen_ratio", c.personalization.seen_ratio},
                          {"friend_init", c.personalization.friend_init == PersonalizationConfig::FriendInit::global ? "global" : "init"},
                          {"friend",
                           {{"epochs", c.personalization.friend_fit.epochs},
                            {"batch_size", c.personalization.friend_fit.batch_size},
                            {"learning_rate", c.personalization.friend_fit.learning_rate}}}};
  j["master_seed"] = c.master_seed;
  j["repeat"] = c.repeat;
  if (!c.seed_list.empty()) j["seeds"] = c.seed_list;
  j["workers"] = c.workers;
  j["output"] = c.output;
  return j;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

}  // namespace fedmem
