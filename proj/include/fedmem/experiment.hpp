#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmem/config.hpp"
#include "fedmem/datasets.hpp"
#include "fedmem/error.hpp"
#include "fedmem/generator.hpp"
#include "fedmem/metrics.hpp"
#include "fedmem/parallel.hpp"
#include "fedmem/partitioning.hpp"
#include "fedmem/personalization.hpp"
#include "fedmem/protocol.hpp"
#include "fedmem/rng.hpp"

namespace fedmem {

/// Data side of one run: the split, the client shards and the semantic
/// table. Depends on the config and the run seed only.
struct PreparedRun {
  Dataset full;
  TrainTestSplit split;
  ClientShards shards;
  std::vector<std::vector<std::size_t>> test_slices;
  std::vector<ClientState> clients;
  SemanticTable semantics;
  DropoutSchedule schedule;
  ParamSet init;
};

/// Models produced by a run, for callers that want more than metrics.
struct RunArtifacts {
  ParamSet global;
  std::optional<ParamSet> generator;
  std::map<int, ParamSet> personalized;
  std::map<int, ParamSet> friends;
  std::vector<std::string> warnings;
};

inline Dataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset.kind == "csv") return load_csv(cfg.dataset.path);
  return make_blobs(cfg.dataset.classes, cfg.dataset.dim, cfg.dataset.n_per_class, cfg.dataset.spread,
                    cfg.dataset.layout_seed, cfg.dataset.sample_seed);
}

inline std::uint64_t partition_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.partition_seed_fixed ? cfg.partition.seed : derive_seed(seed, "partition", {});
}

/// Classes held by at least one non-dropout client are seen; the rest of
/// the classes present in training are unseen.
inline void assign_seen_unseen(SemanticTable& table, const Dataset& train, const ClientShards& shards,
                               const DropoutSchedule& schedule) {
  table.seen.clear();
  table.unseen.clear();
  std::set<int> present;
  for (std::size_t k = 0; k < shards.clients(); ++k)
    for (auto r : shards.rows[k]) {
      present.insert(train.labels[r]);
      if (!schedule.is_dropped(static_cast<int>(k))) table.seen.insert(train.labels[r]);
    }
  for (int c : present)
    if (!table.seen.count(c)) table.unseen.insert(c);
}

inline PreparedRun prepare_run(const ExperimentConfig& cfg, std::uint64_t seed) {
  PreparedRun run;
  run.full = load_dataset(cfg);
  validate_config(cfg, run.full.class_count);
  run.split = split_train_test(run.full, cfg.test_fraction, cfg.split_seed);
  PartitionSpec spec = cfg.partition;
  spec.seed = partition_seed(cfg, seed);
  run.shards = partition(run.split.train, spec);
  run.test_slices = distribute_test_rows(run.split.train, run.shards, run.split.test);
  run.schedule = cfg.schedule();
  for (int k = 0; k < cfg.partition.clients; ++k) {
    ClientState c;
    c.id = k;
    c.train = run.split.train.subset(run.shards.rows[static_cast<std::size_t>(k)]);
    c.test = run.split.test.subset(run.test_slices[static_cast<std::size_t>(k)]);
    run.clients.push_back(std::move(c));
  }

  if (cfg.semantics.source == "file") {
    run.semantics = load_semantic_table(cfg.semantics.path);
  } else {
    if (!run.full.class_means) throw SemanticError("dataset has no stored class means to embed");
    run.semantics = semantic_table_from_means(*run.full.class_means, {}, {}, cfg.semantics.projection_dim,
                                              cfg.semantics.projection_seed);
    assign_seen_unseen(run.semantics, run.split.train, run.shards, run.schedule);
  }

  std::vector<std::size_t> widths{run.full.dim()};
  widths.insert(widths.end(), cfg.classifier_hidden.begin(), cfg.classifier_hidden.end());
  widths.push_back(static_cast<std::size_t>(run.full.class_count));
  Rng init_rng(derive_seed(seed, "init", {}));
  run.init = make_mlp(std::span<const std::size_t>(widths), init_rng);
  for (auto& c : run.clients) c.local = run.init;
  return run;
}

/// "<config hash>-<seed hash>": 8 hex digits of the FNV-1a hash of the
/// canonical config (without fields that cannot change results), then 4 of
/// the hash of that and the seed.
inline std::string run_id(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto j = config_to_json(cfg);
  for (const char* k : {"output", "workers", "repeat", "master_seed", "seeds"}) j.erase(k);
  const std::uint64_t h = fnv1a64(j.dump());
  char buf[24];
  std::snprintf(buf, sizeof buf, "%08llx-%04llx", static_cast<unsigned long long>(h & 0xffffffffULL),
                static_cast<unsigned long long>(splitmix64(h ^ seed) & 0xffffULL));
  return buf;
}

namespace detail {

struct RunLabels {
  std::string run_id;
  std::uint64_t seed;
};

inline MetricsRecord record(const RunLabels& l, int round, const std::string& strategy, const std::string& client,
                            const std::string& split, const std::string& metric, double value) {
  return {l.run_id, l.seed, round, strategy, client, split, metric, value};
}

/// Classes in a dropout client's test slice that no non-dropout client holds.
inline std::vector<int> missing_classes(const ClientState& c, const SemanticTable& table) {
  std::vector<int> out;
  for (int cls : c.test.histogram().present_classes())
    if (!table.seen.count(cls)) out.push_back(cls);
  return out;
}

/// Final-round per-client records of one strategy for one model per client.
inline void emit_final(const RunLabels& l, int round, const std::string& strategy, const ClientState& c,
                       const ParamSet& model, const SemanticTable& table, const DropoutSchedule& schedule,
                       std::vector<MetricsRecord>& out) {
  if (c.test.empty()) return;
  const auto id = std::to_string(c.id);
  const Evaluation e = evaluate(model, c.test);
  out.push_back(record(l, round, strategy, id, "test", "accuracy", e.accuracy));
  for (std::size_t cls = 0; cls < e.per_class.size(); ++cls)
    out.push_back(record(l, round, strategy, id, "test", "per_class_accuracy:" + std::to_string(cls), e.per_class[cls]));
  if (schedule.is_dropped(c.id)) {
    const auto missing = missing_classes(c, table);
    out.push_back(record(l, round, strategy, id, "test", "missing_class_accuracy",
                         missing.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : accuracy_on_classes(model, c.test, missing)));
  }
}

inline double mean_accuracy_on(const std::vector<ParamSet>& models, const Dataset& ds) {
  double s = 0.0;
  for (const auto& m : models) s += evaluate(m, ds).accuracy;
  return s / static_cast<double>(models.size());
}

inline FitOptions local_fit(const TrainingConfig& t) {
  return {t.local_epochs, t.batch_size, t.learning_rate, 0.0};
}

inline void run_local(const ExperimentConfig& cfg, const PreparedRun& run, const RunLabels& l,
                      std::vector<MetricsRecord>& out) {
  const int R = cfg.training.rounds;
  const std::size_t K = run.clients.size();
  // [client][round] models; each chunk is E epochs with fresh optimizer state.
  std::vector<std::vector<ParamSet>> traj(K);
  parallel_for(K, cfg.workers, [&](std::size_t k) {
    const auto& c = run.clients[k];
    ParamSet p = run.init;
    for (int r = 0; r < R; ++r) {
      if (!c.train.empty())
        p = fit_classifier(p, c.train, local_fit(cfg.training), client_seed(l.seed, c.id, r),
                           "local, client " + std::to_string(c.id) + ": ");
      traj[k].push_back(p);
    }
  });
  for (int r = 0; r < R; ++r) {
    std::vector<ParamSet> models;
    for (std::size_t k = 0; k < K; ++k) models.push_back(traj[k][static_cast<std::size_t>(r)]);
    out.push_back(record(l, r + 1, "local", kGlobalClient, "test", "accuracy",
                         mean_accuracy_on(models, run.split.test)));
    for (std::size_t k = 0; k < K; ++k) {
      const auto& c = run.clients[k];
      if (c.test.empty()) continue;
      if (r + 1 == R) {
        emit_final(l, R, "local", c, models[k], run.semantics, run.schedule, out);
      } else {
        out.push_back(record(l, r + 1, "local", std::to_string(c.id), "test", "accuracy",
                             evaluate(models[k], c.test).accuracy));
      }
    }
  }
}

inline std::vector<MetricsRecord> without_final_client_accuracy(std::vector<MetricsRecord> rs, int final_round) {
  std::erase_if(rs, [&](const MetricsRecord& r) { return r.round == final_round && r.client_id != kGlobalClient; });
  return rs;
}

inline void run_fedprox(const ExperimentConfig& cfg, PreparedRun run, const RunLabels& l,
                        std::vector<MetricsRecord>& out) {
  TrainingConfig t = cfg.training;
  t.strategy = Strategy::fedprox;
  ServerState server{run.init};
  RoundEnv env{l.seed, run.schedule, cfg.workers, &run.split.test, true, true, l.run_id, "fedprox"};
  for (int r = 0; r < t.rounds; ++r) {
    auto o = run_round(server, run.clients, t, env);
    auto recs = without_final_client_accuracy(std::move(o.records), t.rounds);
    out.insert(out.end(), recs.begin(), recs.end());
  }
  for (const auto& c : run.clients) emit_final(l, t.rounds, "fedprox", c, server.global, run.semantics, run.schedule, out);
}

inline std::vector<ClientModel> teacher_models(const std::vector<ClientState>& clients, const DropoutSchedule& s) {
  std::vector<ClientModel> out;
  for (const auto& c : clients)
    if (!s.is_dropped(c.id) && c.last_round >= 0 && !c.train.empty()) out.push_back({c.id, &c.local});
  return out;
}

inline ClassProportionTable proportions_for(const std::vector<ClientState>& clients, const std::vector<ClientModel>& teachers) {
  std::map<int, LabelHistogram> hists;
  for (const auto& t : teachers) hists[t.client_id] = clients[static_cast<std::size_t>(t.client_id)].train.histogram();
  return ClassProportionTable::from_histograms(hists);
}

/// The shared federated trajectory behind fedavg, fedavg_ft and apfl.
inline void run_federated(const ExperimentConfig& cfg, PreparedRun run, const RunLabels& l,
                          std::vector<MetricsRecord>& out, RunArtifacts* artifacts) {
  const bool fedavg = cfg.has(Strategy::fedavg);
  const bool apfl = cfg.has(Strategy::apfl);
  TrainingConfig t = cfg.training;
  t.strategy = Strategy::fedavg;
  const int R = t.rounds;
  ServerState server{run.init};
  RoundEnv env{l.seed, run.schedule, cfg.workers, &run.split.test, true, fedavg, l.run_id, "fedavg"};

  std::optional<GeneratorState> gen;
  const std::size_t out_dim = run.full.dim();
  auto train_gen = [&](int round, int epochs) {
    const auto teachers = teacher_models(run.clients, run.schedule);
    if (teachers.empty()) return;
    if (!gen) {
      Rng rng(derive_seed(l.seed, "generator-init", {}));
      ParamSet omega = make_generator(static_cast<std::size_t>(cfg.noise.dim), run.semantics.dim(), out_dim,
                                      cfg.generator.hidden, rng);
      gen = GeneratorState{omega, AdamState::for_params(omega)};
    }
    GeneratorConfig g = cfg.generator;
    g.epochs = epochs;
    const auto stats = train_generator(*gen, teachers, proportions_for(run.clients, teachers), run.semantics, g,
                                       cfg.noise, derive_seed(l.seed, "generator", {round}));
    if (stats.empty()) return;
    const auto& s = stats.back();
    out.push_back(record(l, round, "apfl", kGlobalClient, "train", "loss_G", s.loss));
    out.push_back(record(l, round, "apfl", kGlobalClient, "train", "L_cls", s.cls));
    out.push_back(record(l, round, "apfl", kGlobalClient, "train", "L_div", s.div));
  };

  for (int r = 0; r < R; ++r) {
    auto o = run_round(server, run.clients, t, env);
    std::vector<MetricsRecord> recs = without_final_client_accuracy(std::move(o.records), R);
    for (const auto& rec : recs) {
      if (fedavg) out.push_back(rec);
      if (apfl && rec.client_id == kGlobalClient) {
        auto copy = rec;
        copy.strategy = "apfl";
        out.push_back(copy);
      }
    }
    if (apfl && cfg.generator.retrain_every_round) train_gen(server.round, cfg.generator.epochs);
  }
  if (apfl && !cfg.generator.retrain_every_round) train_gen(R, cfg.generator.epochs);

  const FitOptions fine_tune = local_fit(t);
  if (fedavg) {
    for (const auto& c : run.clients) emit_final(l, R, "fedavg", c, server.global, run.semantics, run.schedule, out);
    // Dropout-client baseline: one-off fine-tuning of the final global model.
    for (const auto& c : run.clients) {
      if (!run.schedule.is_dropped(c.id) || c.train.empty()) continue;
      const ParamSet ft = localize_global(server.global, c.train, fine_tune, derive_seed(l.seed, "localize", {c.id}));
      emit_final(l, R, "fedavg_ft", c, ft, run.semantics, run.schedule, out);
    }
  }
  if (artifacts) artifacts->global = server.global;
  if (!apfl) return;
  if (!gen) throw TrainingError("no client model was available to train the generator");
  if (artifacts) artifacts->generator = gen->omega;

  PersonalizationInputs in;
  in.generator = &gen->omega;
  in.semantics = &run.semantics;
  in.noise = cfg.noise;
  in.global = &server.global;
  in.friend_init = cfg.personalization.friend_init == PersonalizationConfig::FriendInit::global ? &server.global : &run.init;
  in.localize_fit = fine_tune;
  std::vector<std::optional<PersonalizedModel>> results(run.clients.size());
  parallel_for(run.clients.size(), cfg.workers, [&](std::size_t k) {
    const auto& c = run.clients[k];
    if (c.train.empty()) return;
    PersonalizationConfig p = cfg.personalization;
    if (p.budget_per_client == 0)
      p.budget_per_client =
          cfg.generator.samples_per_class * static_cast<int>(c.train.histogram().present_classes().size());
    const auto mode = run.schedule.is_dropped(c.id) ? ClientMode::dropout : ClientMode::non_dropout;
    results[k] = personalize(c, mode, in, p, l.seed);
  });
  for (std::size_t k = 0; k < run.clients.size(); ++k) {
    if (!results[k]) continue;
    const auto& c = run.clients[k];
    emit_final(l, R, "apfl", c, results[k]->params, run.semantics, run.schedule, out);
    emit_final(l, R, "apfl_friend", c, results[k]->friend_model.params, run.semantics, run.schedule, out);
    if (artifacts) {
      artifacts->personalized[c.id] = results[k]->params;
      artifacts->friends[c.id] = results[k]->friend_model.params;
      for (const auto& w : results[k]->warnings) artifacts->warnings.push_back("client " + std::to_string(c.id) + ": " + w);
    }
  }
}

}  // namespace detail

/// All records of one seed. `run_tag` overrides the run_id.
inline std::vector<MetricsRecord> run_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                           const std::string& run_tag = "", RunArtifacts* artifacts = nullptr) {
  const detail::RunLabels labels{run_tag.empty() ? run_id(cfg, seed) : run_tag, seed};
  std::vector<MetricsRecord> out;
  try {
    PreparedRun run = prepare_run(cfg, seed);
    if (cfg.has(Strategy::local)) detail::run_local(cfg, run, labels, out);
    if (cfg.has(Strategy::fedavg) || cfg.has(Strategy::apfl)) detail::run_federated(cfg, run, labels, out, artifacts);
    if (cfg.has(Strategy::fedprox)) detail::run_fedprox(cfg, run, labels, out);
  } catch (const ValidationError&) {
    throw;
  } catch (const Error& e) {
    // Keep the original category, add the run context.
    const std::string ctx = "run " + labels.run_id + " (seed " + std::to_string(seed) + "): ";
    if (dynamic_cast<const TrainingError*>(&e)) throw TrainingError(ctx + e.what());
    if (dynamic_cast<const PartitionError*>(&e)) throw PartitionError(ctx + e.what());
    if (dynamic_cast<const NumericError*>(&e)) throw NumericError(ctx + e.what());
    if (dynamic_cast<const IoError*>(&e)) throw IoError(ctx + e.what());
    throw;
  }
  sort_canonical(out);
  return out;
}

inline std::vector<MetricsRecord> collect_experiment(const ExperimentConfig& cfg) {
  std::vector<MetricsRecord> all;
  for (auto seed : cfg.seeds()) {
    auto rs = run_seed(cfg, seed);
    all.insert(all.end(), rs.begin(), rs.end());
  }
  sort_canonical(all);
  return all;
}

/// Runs every seed and writes the metrics CSV to cfg.output.
inline std::filesystem::path run_experiment(const ExperimentConfig& cfg) {
  write_metrics_csv(collect_experiment(cfg), cfg.output);
  return cfg.output;
}

inline const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> axes{"noise_dim", "n_s", "alpha", "beta", "embedding_table"};
  return axes;
}

/// Config with one axis set to `value`. embedding_table takes a file path,
/// the other axes take numbers.
inline ExperimentConfig apply_axis(ExperimentConfig cfg, const std::string& axis, const std::string& value) {
  auto number = [&] {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != value.size()) throw ConfigError("sweep value '" + value + "' for axis " + axis + " is not a number");
    return v;
  };
  auto integer = [&] {
    const double v = number();
    if (v != std::floor(v)) throw ConfigError("sweep value '" + value + "' for axis " + axis + " must be an integer");
    return static_cast<int>(v);
  };
  if (axis == "noise_dim") cfg.noise.dim = integer();
  else if (axis == "n_s") cfg.generator.samples_per_class = integer();
  else if (axis == "alpha") cfg.partition.alpha = number();
  else if (axis == "beta") cfg.personalization.beta = number();
  else if (axis == "embedding_table") {
    cfg.semantics.source = "file";
    cfg.semantics.path = value;
  } else {
    throw ConfigError("unknown sweep axis '" + axis + "' (expected noise_dim, n_s, alpha, beta or embedding_table)");
  }
  validate_config(cfg, cfg.dataset.kind == "blobs" ? cfg.dataset.classes : 0);
  return cfg;
}

/// One experiment per value; run ids read "<axis>=<value>@<hash>".
inline std::vector<MetricsRecord> collect_sweep(const ExperimentConfig& cfg, const std::string& axis,
                                                const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  for (const auto& v : values)
    if (v.find_first_of(",\n\r") != std::string::npos) throw ConfigError("sweep value '" + v + "' contains a comma or newline");
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) configs.push_back(apply_axis(cfg, axis, v));
  std::vector<MetricsRecord> all;
  for (std::size_t i = 0; i < values.size(); ++i)
    for (auto seed : configs[i].seeds()) {
      auto rs = run_seed(configs[i], seed, axis + "=" + values[i] + "@" + run_id(configs[i], seed));
      all.insert(all.end(), rs.begin(), rs.end());
    }
  sort_canonical(all);
  return all;
}

inline std::filesystem::path sweep(const ExperimentConfig& cfg, const std::string& axis,
                                   const std::vector<std::string>& values) {
  write_metrics_csv(collect_sweep(cfg, axis, values), cfg.output);
  return cfg.output;
}

}  // namespace fedmem
