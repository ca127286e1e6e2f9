#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fedmem/fedmem.hpp"

using namespace fedmem;
namespace fs = std::filesystem;

namespace {

// Small enough to run in well under a second per seed.
const char* kTiny = R"({
  "dataset": {"kind": "blobs", "classes": 4, "dim": 3, "n_per_class": 30, "spread": 1.0},
  "partition": {"mode": "dirichlet", "alpha": 0.5, "clients": 3},
  "training": {"rounds": 3, "local_epochs": 1, "batch_size": 20, "learning_rate": 0.01, "hidden": [8],
               "strategies": ["local", "fedavg", "fedprox", "apfl"]},
  "generator": {"samples_per_class": 10, "batch_size": 10, "epochs": 2, "hidden": [8]},
  "personalization": {"friend": {"epochs": 1, "batch_size": 20, "learning_rate": 0.01}},
  "repeat": 2
})";

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "fedmem_harness_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_error(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::set<std::string> strategies_in(const std::vector<MetricsRecord>& rs) {
  std::set<std::string> out;
  for (const auto& r : rs) out.insert(r.strategy);
  return out;
}

}  // namespace

TEST(Config, Defaults) {
  const auto c = parse_config_text("{}");
  EXPECT_EQ(c.dataset.kind, "blobs");
  EXPECT_EQ(c.partition.clients, 5);
  EXPECT_EQ(c.training.clients_per_round, 5);
  EXPECT_EQ(c.training.batch_size, 50);
  EXPECT_DOUBLE_EQ(c.training.learning_rate, 2e-4);
  EXPECT_EQ(c.training.local_epochs, 20);
  EXPECT_EQ(c.generator.samples_per_class, 600);
  EXPECT_DOUBLE_EQ(c.generator.lambda, 0.5);
  EXPECT_DOUBLE_EQ(c.personalization.beta, 0.1);
  EXPECT_EQ(c.seeds(), (std::vector<std::uint64_t>{1}));
  const auto k = parse_config_text(R"({"partition": {"clients": 8}})");
  EXPECT_EQ(k.training.clients_per_round, 8);
}

TEST(Config, RoundTripsThroughCanonicalJson) {
  const auto c = parse_config_text(kTiny);
  const auto again = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(again).dump(), config_to_json(c).dump());
}

TEST(Config, NamesOffendingKeys) {
  EXPECT_NE(config_error(R"({"trainng": {}})").find("'trainng'"), std::string::npos);
  EXPECT_NE(config_error(R"({"training": {"epochs": 3}})").find("'training.epochs'"), std::string::npos);
  EXPECT_NE(config_error(R"({"training": {"rounds": "x"}})").find("'training.rounds'"), std::string::npos);
  EXPECT_NE(config_error(R"({"generator": {"lambda": 2}})").find("'generator.lambda'"), std::string::npos);
  EXPECT_NE(config_error(R"({"personalization": {"beta": -1}})").find("'personalization.beta'"), std::string::npos);
  EXPECT_NE(config_error(R"({"partition": {"mode": "pathological", "gamma": 2, "clients": 4}})").find("K·γ < C"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"partition": {"clients": 3}, "dropout": {"clients": [0, 1, 2]}})").find("'dropout.clients'"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"training": {"clients_per_round": 9}})").find("'training.clients_per_round'"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"training": {"strategies": ["fedsgd"]}})").find("fedsgd"), std::string::npos);
  EXPECT_NE(config_error("{not json").find("invalid JSON"), std::string::npos);
  EXPECT_THROW(parse_config("/nonexistent/config.json"), IoError);
}

TEST(RunId, StableAndSeedSpecific) {
  const auto c = parse_config_text(kTiny);
  EXPECT_EQ(run_id(c, 1), run_id(c, 1));
  EXPECT_NE(run_id(c, 1), run_id(c, 2));
  EXPECT_EQ(setting_of(run_id(c, 1)), setting_of(run_id(c, 2)));
  auto w = c;
  w.workers = 4;
  w.output = "elsewhere.csv";
  EXPECT_EQ(run_id(w, 1), run_id(c, 1));
  auto d = c;
  d.generator.lambda = 0.7;
  EXPECT_NE(setting_of(run_id(d, 1)), setting_of(run_id(c, 1)));
}

TEST(Experiment, ByteIdenticalAcrossWorkerCounts) {
  auto c = parse_config_text(kTiny);
  c.output = scratch("w1.csv").string();
  run_experiment(c);
  c.workers = 3;
  c.output = scratch("w3.csv").string();
  run_experiment(c);
  const auto a = slurp(scratch("w1.csv"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(scratch("w3.csv")));
  EXPECT_EQ(a.substr(0, a.find('\n')), kMetricsHeader);
}

TEST(Experiment, StrategyGating) {
  auto c = parse_config_text(kTiny);
  c.seed_list = {4};
  EXPECT_EQ(strategies_in(collect_experiment(c)),
            (std::set<std::string>{"local", "fedavg", "fedprox", "apfl", "apfl_friend"}));
  c.strategies = {Strategy::fedavg};
  EXPECT_EQ(strategies_in(collect_experiment(c)), (std::set<std::string>{"fedavg"}));
  c.strategies = {Strategy::apfl};
  EXPECT_EQ(strategies_in(collect_experiment(c)), (std::set<std::string>{"apfl", "apfl_friend"}));
}

TEST(Experiment, SeedsChangeResults) {
  auto c = parse_config_text(kTiny);
  c.strategies = {Strategy::fedavg};
  c.seed_list = {1};
  const auto a = collect_experiment(c);
  c.seed_list = {2};
  const auto b = collect_experiment(c);
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs = differs || a[i].value != b[i].value;
  EXPECT_TRUE(differs);
}

TEST(Experiment, DropoutRecordsMissingClasses) {
  auto c = parse_config_text(R"({
    "dataset": {"kind": "blobs", "classes": 6, "dim": 3, "n_per_class": 30},
    "partition": {"mode": "pathological", "gamma": 2, "clients": 4, "monopoly": {"client": 3, "classes": [4, 5]}},
    "dropout": {"clients": [3], "round": 0},
    "training": {"rounds": 2, "local_epochs": 1, "batch_size": 20, "learning_rate": 0.01, "hidden": [8]},
    "generator": {"samples_per_class": 10, "batch_size": 10, "epochs": 2, "hidden": [8]},
    "personalization": {"friend": {"epochs": 1, "batch_size": 20, "learning_rate": 0.01}}
  })");
  const auto rs = collect_experiment(c);
  std::set<std::string> with_missing;
  for (const auto& r : rs)
    if (r.metric == "missing_class_accuracy") {
      EXPECT_EQ(r.client_id, "3");
      with_missing.insert(r.strategy);
      if (r.strategy == "fedavg") {
        EXPECT_LE(r.value, 0.1);
      }
    }
  EXPECT_EQ(with_missing, (std::set<std::string>{"local", "fedavg", "fedavg_ft", "apfl", "apfl_friend"}));
}

TEST(Sweep, RunIdsCarryAxisValue) {
  auto c = parse_config_text(kTiny);
  c.strategies = {Strategy::apfl};
  c.seed_list = {1};
  const auto rs = collect_sweep(c, "noise_dim", {"2", "5"});
  std::set<std::string> settings;
  for (const auto& r : rs) settings.insert(setting_of(r.run_id));
  EXPECT_EQ(settings, (std::set<std::string>{"noise_dim=2", "noise_dim=5"}));
  EXPECT_THROW(collect_sweep(c, "noise_dim", {}), ConfigError);
  EXPECT_THROW(collect_sweep(c, "depth", {"1"}), ConfigError);
  EXPECT_THROW(collect_sweep(c, "noise_dim", {"2.5"}), ConfigError);
  EXPECT_THROW(collect_sweep(c, "beta", {"1.5"}), ConfigError);
  EXPECT_THROW(collect_sweep(c, "beta", {"0,5"}), ConfigError);
}

TEST(Report, DescribeMatchesHandComputation) {
  const auto s = describe({0.5, 0.7, 0.9});
  EXPECT_EQ(s.n, 3u);
  EXPECT_NEAR(s.mean, 0.7, 1e-12);
  EXPECT_NEAR(s.std, 0.2, 1e-12);
  EXPECT_TRUE(std::isnan(describe({0.4}).std));
  EXPECT_TRUE(std::isnan(describe({}).mean));
}

TEST(Report, SummaryOverSeeds) {
  std::vector<MetricsRecord> rs;
  const double acc[2][2] = {{0.6, 0.8}, {0.5, 0.9}};  // [seed][client]
  for (int s = 0; s < 2; ++s) {
    const std::string id = "abcd1234-000" + std::to_string(s);
    for (int k = 0; k < 2; ++k) {
      rs.push_back({id, static_cast<std::uint64_t>(s), 5, "fedavg", std::to_string(k), "test", "accuracy", acc[s][k]});
      rs.push_back({id, static_cast<std::uint64_t>(s), 4, "fedavg", std::to_string(k), "test", "accuracy", 0.0});
    }
    rs.push_back({id, static_cast<std::uint64_t>(s), 5, "fedavg", "global", "test", "accuracy", 0.4 + 0.2 * s});
  }
  const auto rows = summarize(rs);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].setting, "abcd1234");
  EXPECT_EQ(rows[0].client.n, 2u);
  EXPECT_NEAR(rows[0].client.mean, 0.7, 1e-12);
  EXPECT_NEAR(rows[0].client.std, 0.0, 1e-12);
  EXPECT_NEAR(rows[0].global.mean, 0.5, 1e-12);
  EXPECT_NEAR(rows[0].global.std, std::sqrt(0.02), 1e-12);
  EXPECT_EQ(rows[0].missing.n, 0u);
}

TEST(Report, WritesFilesAndRejectsBadInput) {
  auto c = parse_config_text(kTiny);
  c.strategies = {Strategy::fedavg, Strategy::local};
  c.output = scratch("rep.csv").string();
  run_experiment(c);
  const auto dir = scratch("report");
  const auto files = write_report({scratch("rep.csv")}, dir);
  EXPECT_GE(files.size(), 4u);
  for (const auto& f : files) EXPECT_TRUE(fs::exists(f)) << f;
  EXPECT_NE(slurp(dir / "summary.md").find("fedavg"), std::string::npos);
  EXPECT_THROW(write_report({}, dir), ReportError);
  {
    std::ofstream bad(scratch("bad.csv"));
    bad << "run,seed\n";
  }
  EXPECT_THROW(write_report({scratch("bad.csv")}, dir), ReportError);
  EXPECT_THROW(write_report({scratch("missing.csv")}, dir), IoError);
}

TEST(Metrics, CsvRoundTripWithAbsentValues) {
  std::vector<MetricsRecord> rs{{"r", 1, 2, "apfl", "0", "test", "per_class_accuracy:3", std::nan("")},
                                {"r", 1, 2, "apfl", "global", "test", "accuracy", 0.125}};
  write_metrics_csv(rs, scratch("m.csv"));
  const auto back = read_metrics_csv(scratch("m.csv"));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].client_id, "global");
  EXPECT_TRUE(back[1].absent());
  EXPECT_NE(slurp(scratch("m.csv")).find("absent"), std::string::npos);
  EXPECT_THROW(format_value(INFINITY), NumericError);
}
