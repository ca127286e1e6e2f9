#include <gtest/gtest.h>

#include <cmath>

#include "fedmem/fedmem.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fedmem;

namespace {

ClassProportionTable table_for(const std::vector<std::vector<std::size_t>>& counts) {
  std::map<int, LabelHistogram> h;
  for (std::size_t k = 0; k < counts.size(); ++k) h[static_cast<int>(k)] = LabelHistogram{counts[k]};
  return ClassProportionTable::from_histograms(h);
}

SemanticTable identity_table(int classes) {
  SemanticTable t;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> e(static_cast<std::size_t>(classes), 0.0);
    e[static_cast<std::size_t>(c)] = 1.0;
    t.embeddings[c] = e;
    t.seen.insert(c);
  }
  return t;
}

}  // namespace

TEST(Proportions, NormalizedOverAllClients) {
  const auto t = table_for({{3, 1, 0}, {0, 2, 2}});
  EXPECT_DOUBLE_EQ(t.at(0, 0), 3.0 / 8.0);
  EXPECT_DOUBLE_EQ(t.at(1, 1), 2.0 / 8.0);
  EXPECT_DOUBLE_EQ(t.at(0, 2), 0.0);
  EXPECT_DOUBLE_EQ(t.at(5, 0), 0.0);
  double s = 0.0;
  for (const auto& row : t.alpha)
    for (double a : row) s += a;
  EXPECT_DOUBLE_EQ(s, 1.0);
}

TEST(ClassificationLoss, MatchesOracle) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int C = 3 + static_cast<int>(rng.index(3));
    const std::size_t K = 1 + rng.index(3);
    std::vector<ParamSet> nets;
    std::vector<std::vector<std::size_t>> counts;
    for (std::size_t k = 0; k < K; ++k) {
      nets.push_back(make_mlp({4, 5, static_cast<std::size_t>(C)}, rng));
      std::vector<std::size_t> h(static_cast<std::size_t>(C));
      for (auto& x : h) x = rng.index(3) == 0 ? 0 : rng.index(20);
      h[k % h.size()] += 1;
      counts.push_back(h);
    }
    const auto props = table_for(counts);
    std::vector<ClientModel> models;
    std::vector<const ParamSet*> ptrs;
    for (std::size_t k = 0; k < K; ++k) {
      models.push_back({static_cast<int>(k), &nets[k]});
      ptrs.push_back(&nets[k]);
    }
    const std::size_t n = 2 + rng.index(8);
    Tensor x = support::random_matrix(n, 4, rng);
    auto y = support::random_labels(n, C, rng);
    const double got = classification_loss(x, y, models, props);
    const double want = oracle::eq_cls(oracle::to_matrix(x), y, ptrs, props.alpha);
    ASSERT_NEAR(got, want, 1e-10);
  }
}

TEST(DiversityLoss, MatchesOracle) {
  Rng rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(10);
    Tensor x = support::random_matrix(n, 1 + rng.index(5), rng, 2.0);
    auto y = support::random_labels(n, 3, rng);
    ASSERT_NEAR(diversity_loss(x, y), oracle::eq_div(oracle::to_matrix(x), y), 1e-10);
    ASSERT_NEAR(diversity_loss(x), oracle::eq_div_one_class(oracle::to_matrix(x)), 1e-10);
  }
}

TEST(DiversityLoss, KnownValues) {
  Tensor two({2, 2}, std::vector<double>{0, 0, 3, 0});
  EXPECT_DOUBLE_EQ(diversity_loss(two), -3.0);
  Tensor same({4, 3}, 1.5);
  EXPECT_EQ(diversity_loss(same), 0.0);
  EXPECT_THROW(diversity_loss(Tensor::matrix(1, 2)), ConfigError);
  std::vector<int> singletons{0, 1};
  EXPECT_EQ(diversity_loss(two, singletons), 0.0);
}

TEST(GeneratorLoss, Endpoints) {
  Rng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const double cls = rng.uniform(0, 5), div = rng.uniform(-5, 0), lam = rng.uniform();
    ASSERT_NEAR(generator_loss(cls, div, lam), oracle::eq_generator(cls, div, lam), 1e-12);
  }
  EXPECT_EQ(generator_loss(2.5, -7.0, 1.0), 2.5);
  EXPECT_EQ(generator_loss(2.5, -7.0, 0.0), -7.0);
  EXPECT_THROW(generator_loss(1, 1, 1.5), ConfigError);
}

TEST(GeneratorInput, ConcatenatesNoiseAndEmbedding) {
  const auto table = identity_table(3);
  NoiseSpec ns{2};
  const Tensor z = sample_noise(2, ns, 5);
  EXPECT_EQ(z, sample_noise(2, ns, 5));
  std::vector<int> y{2, 0};
  const auto u = generator_input(z, y, table);
  ASSERT_EQ(u.cols(), 5u);
  EXPECT_EQ(u(0, 0), z(0, 0));
  EXPECT_EQ(u(0, 4), 1.0);
  EXPECT_EQ(u(1, 2), 1.0);
  std::vector<int> bad{7, 0};
  EXPECT_THROW(generator_input(z, bad, table), SemanticError);
  EXPECT_THROW(sample_noise(2, NoiseSpec{0}, 1), ConfigError);
}

TEST(SemanticTable, JsonRoundTripAndValidation) {
  auto t = identity_table(3);
  t.seen = {0, 1};
  t.unseen = {2};
  const auto back = semantic_table_from_json(semantic_table_to_json(t));
  EXPECT_EQ(back.embeddings, t.embeddings);
  EXPECT_EQ(back.unseen, t.unseen);
  nlohmann::json j = {{"0", {1.0, 2.0}}, {"1", {1.0}}};
  EXPECT_THROW(semantic_table_from_json(j), SemanticError);
  nlohmann::json k = {{"zero", {1.0}}};
  EXPECT_THROW(semantic_table_from_json(k), ParseError);
  nlohmann::json both = {{"0", {1.0}}, {"seen", {0}}, {"unseen", {0}}};
  EXPECT_THROW(semantic_table_from_json(both), SemanticError);
}

TEST(SemanticTable, ProjectedMeans) {
  Tensor means({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const auto raw = semantic_table_from_means(means, {0}, {1});
  EXPECT_EQ(raw.at(1), (std::vector<double>{4, 5, 6}));
  const auto p = semantic_table_from_means(means, {0}, {1}, 5, 9);
  EXPECT_EQ(p.dim(), 5u);
  EXPECT_EQ(p.at(0), semantic_table_from_means(means, {0}, {1}, 5, 9).at(0));
}

TEST(TrainGenerator, TeachersStayFrozen) {
  Rng rng(40);
  const auto table = identity_table(3);
  ParamSet t0 = make_mlp({2, 6, 3}, rng), t1 = make_mlp({2, 6, 3}, rng);
  const auto keep0 = t0, keep1 = t1;
  const auto props = table_for({{5, 5, 0}, {0, 5, 5}});
  GeneratorConfig cfg;
  cfg.samples_per_class = 20;
  cfg.batch_size = 10;
  cfg.epochs = 5;
  cfg.learning_rate = 0.01;
  NoiseSpec ns{2};
  const ParamSet omega0 = make_generator(2, table.dim(), 2, {8}, rng);
  const auto omega = train_generator(omega0, {{0, &t0}, {1, &t1}}, props, table, cfg, ns, 3);
  EXPECT_EQ(t0, keep0);
  EXPECT_EQ(t1, keep1);
  EXPECT_NE(omega, omega0);
  EXPECT_EQ(omega, train_generator(omega0, {{1, &t1}, {0, &t0}}, props, table, cfg, ns, 3));
}

TEST(TrainGenerator, ClassificationOnlyObjectiveFitsTeacher) {
  // One teacher that separates three classes by their coordinates; with
  // lambda = 1 the generator must learn to emit rows it labels correctly.
  const auto ds = support::toy_dataset(3, 40, 3, 8);
  Rng rng(41);
  const auto teacher = fit_classifier(make_mlp({3, 16, 3}, rng), ds, {30, 10, 0.01, 0.0}, 1);
  ASSERT_GT(evaluate(teacher, ds).accuracy, 0.95);
  const auto table = identity_table(3);
  const auto props = table_for({{40, 40, 40}});
  GeneratorConfig cfg;
  cfg.lambda = 1.0;
  cfg.samples_per_class = 30;
  cfg.batch_size = 30;
  cfg.epochs = 200;
  cfg.learning_rate = 0.01;
  NoiseSpec ns{4};
  GeneratorState st{make_generator(4, 3, 3, {16}, rng), {}};
  st.adam = AdamState::for_params(st.omega);
  const auto stats = train_generator(st, {{0, &teacher}}, props, table, cfg, ns, 2);
  ASSERT_EQ(stats.size(), 200u);
  EXPECT_LT(stats.back().cls, stats.front().cls);
  std::vector<int> y;
  for (int c = 0; c < 3; ++c) y.insert(y.end(), 50, c);
  Dataset synth;
  synth.class_count = 3;
  synth.features = generate(st.omega, sample_noise(y.size(), ns, 99), y, table);
  synth.labels = y;
  EXPECT_GT(evaluate(teacher, synth).accuracy, 0.9);
}

TEST(TrainGenerator, RejectsBadSettings) {
  Rng rng(42);
  const auto table = identity_table(2);
  ParamSet t0 = make_mlp({2, 2}, rng);
  const auto props = table_for({{1, 1}});
  const ParamSet omega = make_generator(2, 2, 2, {4}, rng);
  GeneratorConfig cfg;
  cfg.samples_per_class = 1;
  EXPECT_THROW(train_generator(omega, {{0, &t0}}, props, table, cfg, NoiseSpec{2}, 1), ConfigError);
  cfg.samples_per_class = 10;
  cfg.lambda = -0.1;
  EXPECT_THROW(train_generator(omega, {{0, &t0}}, props, table, cfg, NoiseSpec{2}, 1), ConfigError);
  cfg.lambda = 0.5;
  EXPECT_THROW(train_generator(omega, {}, props, table, cfg, NoiseSpec{2}, 1), ConfigError);
}
