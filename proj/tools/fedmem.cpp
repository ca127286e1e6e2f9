// fedmem command line: partition, run, sweep, personalize, report.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedmem/fedmem.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
};

fedmem::ExperimentConfig load(const Common& c) {
  auto cfg = fedmem::parse_config(c.config);
  if (c.seed) {
    cfg.master_seed = *c.seed;
    cfg.seed_list.clear();
  }
  if (c.workers) {
    if (*c.workers < 1) throw fedmem::ConfigError("'--workers' must be >= 1");
    cfg.workers = *c.workers;
  }
  if (!c.out.empty()) cfg.output = c.out;
  return cfg;
}

void add_common(CLI::App* sub, Common& c, const char* out_help) {
  sub->add_option("config", c.config, "experiment config (JSON)")->required();
  sub->add_option("--seed", c.seed, "override master_seed");
  sub->add_option("--workers", c.workers, "worker threads");
  sub->add_option("--out", c.out, out_help);
}

int cmd_partition(const Common& c) {
  const auto cfg = load(c);
  const std::uint64_t seed = cfg.seeds().front();
  const auto run = fedmem::prepare_run(cfg, seed);
  nlohmann::json doc = nlohmann::json::object();
  for (std::size_t k = 0; k < run.shards.clients(); ++k) doc[std::to_string(k)] = run.shards.rows[k];
  auto cj = fedmem::config_to_json(cfg);
  nlohmann::json spec = cj["partition"];
  spec["seed"] = fedmem::partition_seed(cfg, seed);
  doc["spec"] = {{"partition", spec}, {"dataset", cj["dataset"]}, {"test_fraction", cfg.test_fraction},
                 {"split_seed", cfg.split_seed}, {"run_seed", seed}, {"train_rows", run.split.train.size()}};
  const std::string text = doc.dump(2) + "\n";
  if (c.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(c.out);
    if (!f) throw fedmem::IoError("cannot open '" + c.out + "' for writing");
    f << text;
  }
  for (const auto& w : run.split.warnings) std::cerr << "warning: " << w << '\n';
  return 0;
}

int cmd_run(const Common& c) {
  const auto path = fedmem::run_experiment(load(c));
  std::cout << path.string() << '\n';
  return 0;
}

int cmd_sweep(const Common& c, const std::string& axis, const std::vector<std::string>& values) {
  const auto path = fedmem::sweep(load(c), axis, values);
  std::cout << path.string() << '\n';
  return 0;
}

int cmd_personalize(const Common& c) {
  auto cfg = load(c);
  if (!cfg.has(fedmem::Strategy::apfl)) cfg.strategies.push_back(fedmem::Strategy::apfl);
  const std::filesystem::path dir = c.out.empty() ? "personalized" : c.out;
  cfg.output = (dir / "metrics.csv").string();
  const std::uint64_t seed = cfg.seeds().front();
  fedmem::RunArtifacts art;
  auto records = fedmem::run_seed(cfg, seed, "", &art);
  std::filesystem::create_directories(dir);
  fedmem::write_metrics_csv(records, cfg.output);
  fedmem::save_params(art.global, dir / "global.params");
  if (art.generator) fedmem::save_params(*art.generator, dir / "generator.params");
  for (const auto& [k, p] : art.personalized) fedmem::save_params(p, dir / ("client_" + std::to_string(k) + ".params"));
  for (const auto& [k, p] : art.friends) fedmem::save_params(p, dir / ("friend_" + std::to_string(k) + ".params"));
  for (const auto& w : art.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << dir.string() << '\n';
  return 0;
}

int cmd_report(const std::vector<std::string>& csvs, const std::string& out) {
  std::vector<std::filesystem::path> paths(csvs.begin(), csvs.end());
  for (const auto& p : fedmem::write_report(paths, out)) std::cout << p.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedmem: federated learning simulator with generator-based personalization"};
  app.require_subcommand(1);

  Common part, run, sweep, pers;
  auto* p = app.add_subcommand("partition", "write client shards as JSON");
  add_common(p, part, "output file (default: stdout)");
  auto* r = app.add_subcommand("run", "run an experiment and write the metrics CSV");
  add_common(r, run, "metrics CSV path (default: config 'output')");
  auto* s = app.add_subcommand("sweep", "run one experiment per axis value");
  add_common(s, sweep, "metrics CSV path (default: config 'output')");
  std::string axis;
  std::vector<std::string> values;
  s->add_option("--axis", axis, "noise_dim, n_s, alpha, beta or embedding_table")->required();
  s->add_option("--values", values, "axis values")->required();
  auto* z = app.add_subcommand("personalize", "train and write personalized models, one file per client");
  add_common(z, pers, "output directory (default: personalized)");
  auto* rep = app.add_subcommand("report", "summarize metrics CSVs");
  std::vector<std::string> csvs;
  std::string rep_out;
  rep->add_option("csv", csvs, "metrics CSV files")->required();
  rep->add_option("--out", rep_out, "report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*p) return cmd_partition(part);
    if (*r) return cmd_run(run);
    if (*s) return cmd_sweep(sweep, axis, values);
    if (*z) return cmd_personalize(pers);
    if (*rep) return cmd_report(csvs, rep_out);
  } catch (const fedmem::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
