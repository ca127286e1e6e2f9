#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fedmem/fedmem.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fedmem;

namespace {

ParamSet small_net(Rng& rng, std::initializer_list<std::size_t> widths) { return make_mlp(widths, rng); }

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), InputError);
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(ParamSet, RejectsInconsistentLayers) {
  Layer a{"a", Tensor::matrix(3, 2), Tensor::vector(3), Activation::relu};
  Layer b{"b", Tensor::matrix(2, 4), Tensor::vector(2), Activation::identity};
  EXPECT_THROW(ParamSet({a, b}), ConfigError);
  Layer bad{"bad", Tensor::matrix(3, 2), Tensor::vector(2), Activation::identity};
  EXPECT_THROW(ParamSet({bad}), ConfigError);
}

TEST(Forward, MatchesScalarOracle) {
  Rng rng(5);
  auto p = small_net(rng, {4, 7, 5, 3});
  Tensor x = support::random_matrix(6, 4, rng);
  const auto got = oracle::to_matrix(forward(p, x));
  const auto want = oracle::mlp_forward(p, oracle::to_matrix(x));
  for (std::size_t r = 0; r < want.size(); ++r)
    for (std::size_t c = 0; c < want[r].size(); ++c) EXPECT_NEAR(got[r][c], want[r][c], 1e-12);
}

TEST(Forward, RejectsWrongWidth) {
  Rng rng(1);
  auto p = small_net(rng, {4, 3});
  EXPECT_THROW(forward(p, Tensor::matrix(2, 5)), ConfigError);
}

TEST(CrossEntropy, MatchesOracle) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = support::random_matrix(7, 4, rng, 3.0);
    auto y = support::random_labels(7, 4, rng);
    EXPECT_NEAR(softmax_cross_entropy(z, y).loss, oracle::mean_cross_entropy(oracle::to_matrix(z), y), 1e-12);
  }
}

TEST(CrossEntropy, StableForHugeLogits) {
  Tensor z({1, 3}, std::vector<double>{1000.0, 0.0, -1000.0});
  std::vector<int> y{0};
  const auto ce = softmax_cross_entropy(z, y);
  EXPECT_TRUE(std::isfinite(ce.loss));
  EXPECT_NEAR(ce.loss, 0.0, 1e-12);
  y = {2};
  EXPECT_NEAR(softmax_cross_entropy(z, y).loss, 2000.0, 1e-9);
}

TEST(CrossEntropy, RejectsBadLabels) {
  Tensor z = Tensor::matrix(2, 3);
  std::vector<int> y{0, 3};
  EXPECT_THROW(softmax_cross_entropy(z, y), InputError);
  std::vector<int> short_y{0};
  EXPECT_THROW(softmax_cross_entropy(z, short_y), InputError);
}

TEST(Gradients, ClassifierMatchesFiniteDifferences) {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = small_net(rng, {5, 8, 4});
    Tensor x = support::random_matrix(9, 5, rng);
    auto y = support::random_labels(9, 4, rng);
    EXPECT_LT(support::max_relative_gradient_error(p, x, y, CrossEntropyLoss{}), 1e-4);
  }
}

TEST(Gradients, ProximalTermMatchesFiniteDifferences) {
  Rng rng(22);
  auto p = small_net(rng, {3, 6, 3});
  auto anchor = small_net(rng, {3, 6, 3});
  Tensor x = support::random_matrix(5, 3, rng);
  auto y = support::random_labels(5, 3, rng);
  EXPECT_LT(support::max_relative_gradient_error(p, x, y, ProximalCrossEntropyLoss{0.7, &anchor}), 1e-4);
}

TEST(Gradients, GeneratorObjectiveMatchesFiniteDifferences) {
  Rng rng(23);
  auto gen = small_net(rng, {4, 6, 3});
  auto t0 = small_net(rng, {3, 5, 4});
  auto t1 = small_net(rng, {3, 5, 4});
  GeneratorCompositeLoss loss{{{0, &t0, {0.2, 0.1, 0.0, 0.3}}, {1, &t1, {0.1, 0.0, 0.2, 0.1}}}, 0.4};
  Tensor u = support::random_matrix(10, 4, rng);
  std::vector<int> y{0, 0, 1, 1, 2, 2, 3, 3, 0, 1};
  EXPECT_LT(support::max_relative_gradient_error(gen, u, y, loss), 1e-4);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Layer l{"w", Tensor({1, 1}, std::vector<double>{1.0}), Tensor({1}, std::vector<double>{0.0}), Activation::identity};
  ParamSet p({l});
  ParamSet g = p;
  g.flat(0) = 3.0;  // any positive gradient
  g.flat(1) = 0.0;
  auto st = AdamState::for_params(p);
  adam_step(p, g, st, 0.1);
  EXPECT_NEAR(p.flat(0), 0.9, 1e-7);
  EXPECT_EQ(p.flat(1), 0.0);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, RefusesNonFiniteGradient) {
  Rng rng(3);
  auto p = small_net(rng, {2, 2});
  const auto before = p;
  auto g = zeros_like(p);
  g.flat(1) = std::nan("");
  auto st = AdamState::for_params(p);
  EXPECT_THROW(adam_step(p, g, st, 0.1), NumericError);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 0);
}

TEST(Serialize, RoundTripIsBitExact) {
  Rng rng(77);
  auto p = small_net(rng, {6, 9, 4});
  p.flat(0) = -0.0;
  p.flat(1) = 1e-310;  // subnormal
  const auto bytes = encode_params(p);
  const auto q = decode_params(bytes);
  ASSERT_EQ(q.parameter_count(), p.parameter_count());
  const auto a = p.flatten();
  const auto b = q.flatten();
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
  EXPECT_TRUE(layout_equal(p, q));
  EXPECT_EQ(encode_params(q), bytes);
}

TEST(Serialize, FileRoundTripAndCorruption) {
  Rng rng(78);
  auto p = small_net(rng, {3, 2});
  const auto path = std::filesystem::temp_directory_path() / "fedmem_test_params.bin";
  save_params(p, path);
  EXPECT_EQ(load_params(path), p);
  auto bytes = encode_params(p);
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_params(bytes), Error);
  EXPECT_THROW(load_params("/nonexistent/dir/params.bin"), IoError);
  std::filesystem::remove(path);
}

TEST(Rng, DeriveSeedSeparatesStreams) {
  EXPECT_EQ(derive_seed(1, "a", {2, 3}), derive_seed(1, "a", {2, 3}));
  EXPECT_NE(derive_seed(1, "a", {2, 3}), derive_seed(1, "a", {3, 2}));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(2, "a"));
}

TEST(Apportion, LargestRemainder) {
  std::vector<double> s{3.0, 1.0};
  EXPECT_EQ(apportion(s, 100), (std::vector<std::size_t>{75, 25}));
  std::vector<double> t{1.0, 1.0, 1.0};
  EXPECT_EQ(apportion(t, 10), (std::vector<std::size_t>{4, 3, 3}));
  std::vector<double> z{0.0, 2.0, 0.0};
  EXPECT_EQ(apportion(z, 7), (std::vector<std::size_t>{0, 7, 0}));
}

TEST(Parallel, LowestIndexErrorWins) {
  for (int workers : {1, 4}) {
    try {
      parallel_for(10, workers, [](std::size_t i) {
        if (i == 3 || i == 7) throw std::runtime_error(std::to_string(i));
      });
      FAIL();
    } catch (const std::runtime_error& e) {
      EXPECT_STREQ(e.what(), "3");
    }
  }
}
