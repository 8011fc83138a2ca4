#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "saliencytune/losses.hpp"

using namespace saliencytune;

namespace {

ExplanationMask row(std::vector<std::uint8_t> bits) { return oracle::mask_from_bits(1, bits.size(), bits); }

SoftMask soft_of(std::size_t h, std::size_t w, std::vector<double> v) { return {RealGrid(h, w, std::move(v)), 0.5, 0.05}; }

std::vector<double> random_simplex(oracle::Rng& rng, std::size_t k) {
  std::vector<double> p(k);
  double s = 0.0;
  for (auto& v : p) s += v = oracle::uniform(rng, 1e-3, 1.0);
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

TEST(ClassificationLoss, LnTwoExample) {
  const std::vector<double> p{0.25, 0.5, 0.25}, y{0, 1, 0};
  EXPECT_NEAR(classification_loss(p, y), std::log(2.0), 1e-12);
  EXPECT_NEAR(classification_loss(p, std::size_t{1}), 0.6931, 1e-4);
}

TEST(ClassificationLoss, PerfectPredictionIsZero) {
  const std::vector<double> p{0, 1, 0}, y{0, 1, 0};
  EXPECT_EQ(classification_loss(p, y), 0.0);
}

TEST(ClassificationLoss, ClampsZeroProbability) {
  const std::vector<double> p{1, 0, 0};
  EXPECT_NEAR(classification_loss(p, std::size_t{2}), -std::log(1e-12), 1e-9);
}

TEST(ClassificationLoss, MatchesDirectOracle) {
  oracle::Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_simplex(rng, 3);
    const auto label = oracle::index(rng, 3);
    EXPECT_NEAR(classification_loss(p, one_hot(label, 3)), oracle::cross_entropy(p, label), 1e-9);
    EXPECT_GE(classification_loss(p, label), 0.0);
  }
}

TEST(ClassificationLoss, NonOneHotLabelIsInputError) {
  const std::vector<double> p{0.2, 0.3, 0.5};
  EXPECT_THROW(classification_loss(p, std::vector<double>{0, 0, 0}), InputError);
  EXPECT_THROW(classification_loss(p, std::vector<double>{1, 1, 0}), InputError);
  EXPECT_THROW(classification_loss(p, std::vector<double>{0.5, 0.5, 0}), InputError);
  EXPECT_THROW(classification_loss(p, std::vector<double>{1, 0}), InputError);
  EXPECT_THROW(classification_loss(p, std::size_t{3}), InputError);
}

TEST(ClassificationLoss, LogitGradientMatchesFiniteDifferences) {
  oracle::Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> z(3);
    for (auto& v : z) v = oracle::uniform(rng, -3, 3);
    const auto label = oracle::index(rng, 3);
    const auto g = classification_loss_logit_gradient(softmax(z), label);
    const std::vector<std::size_t> all{0, 1, 2};
    const auto fd = oracle::central_difference(
        [&](std::span<const double> l) { return classification_loss(softmax(l), label); }, z, all, 1e-6);
    EXPECT_LT(oracle::relative_error(g, fd), 1e-6);
  }
}

TEST(Jaccard, IdenticalNonEmptyIsOne) {
  const auto a = row({1, 0, 1, 1});
  EXPECT_EQ(jaccard_index(a, a), 1.0);
}

TEST(Jaccard, DisjointIsZero) { EXPECT_EQ(jaccard_index(row({1, 1, 0, 0}), row({0, 0, 1, 1})), 0.0); }

TEST(Jaccard, OneThird) { EXPECT_DOUBLE_EQ(jaccard_index(row({1, 1, 0}), row({0, 1, 1})), 1.0 / 3.0); }

TEST(Jaccard, BothEmptyIsOne) { EXPECT_EQ(jaccard_index(row({0, 0, 0}), row({0, 0, 0})), 1.0); }

TEST(Jaccard, ResolutionMismatchIsInputError) {
  EXPECT_THROW(jaccard_index(row({1, 0}), row({1, 0, 0})), InputError);
  EXPECT_THROW(soft_jaccard(soft_of(1, 2, {0.5, 0.5}), row({1, 0, 0})), InputError);
}

TEST(Jaccard, SymmetricBoundedAndMatchesCountingOracle) {
  oracle::Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto h = 1 + oracle::index(rng, 8), w = 1 + oracle::index(rng, 8);
    const auto a = oracle::random_bits(rng, h * w, oracle::uniform(rng)), b = oracle::random_bits(rng, h * w, oracle::uniform(rng));
    const auto ma = oracle::mask_from_bits(h, w, a), mb = oracle::mask_from_bits(h, w, b);
    const double j = jaccard_index(ma, mb);
    EXPECT_EQ(j, jaccard_index(mb, ma));
    EXPECT_NEAR(j, oracle::jaccard(a, b), 1e-9);
    EXPECT_GE(j, 0.0);
    EXPECT_LE(j, 1.0);
  }
}

TEST(SoftJaccard, BinaryPredictionEqualToTruthIsOne) {
  const auto truth = oracle::mask_from_bits(2, 2, {1, 0, 0, 1});
  EXPECT_NEAR(soft_jaccard(soft_of(2, 2, {1, 0, 0, 1}), truth), 1.0, 1e-5);
  EXPECT_NEAR(explanation_loss(soft_of(2, 2, {1, 0, 0, 1}), truth), 0.0, 1e-5);
}

TEST(SoftJaccard, UniformHalfAgainstAllOnes) {
  const std::size_t n = 64;
  const auto truth = oracle::mask_from_bits(8, 8, std::vector<std::uint8_t>(n, 1));
  const double s = kJaccardSmoothing;
  EXPECT_NEAR(soft_jaccard(soft_of(8, 8, std::vector<double>(n, 0.5)), truth), (0.5 * n + s) / (n + s), 1e-15);
}

TEST(SoftJaccard, CompleteDisagreementIsNearOne) {
  const auto truth = oracle::mask_from_bits(2, 2, {1, 0, 0, 1});
  EXPECT_NEAR(explanation_loss(soft_of(2, 2, {1e-9, 1 - 1e-9, 1 - 1e-9, 1e-9}), truth), 1.0, 1e-6);
}

TEST(SoftJaccard, NearHardJaccardAtLowTemperature) {
  oracle::Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(64);
    for (auto& x : v) x = oracle::uniform(rng);
    const SaliencyMap map{RealGrid(8, 8, v), 0};
    const auto truth_bits = oracle::random_bits(rng, 64, oracle::uniform(rng, 0.1, 0.9));
    const auto truth = oracle::mask_from_bits(8, 8, truth_bits);
    std::vector<std::uint8_t> hard(64);
    for (std::size_t i = 0; i < 64; ++i) hard[i] = v[i] > 0.5 ? 1 : 0;
    EXPECT_NEAR(soft_jaccard(soft_threshold(map, 0.5, 0.001), truth), oracle::jaccard(hard, truth_bits), 0.02);
  }
}

TEST(SoftJaccard, LossAndSimilaritySumToOneAndStayBounded) {
  oracle::Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(16);
    for (auto& x : v) x = oracle::uniform(rng);
    const auto pred = soft_of(4, 4, v);
    const auto truth = oracle::random_mask(rng, 4, 4);
    const double j = soft_jaccard(pred, truth);
    EXPECT_EQ(explanation_loss(pred, truth) + j, 1.0);
    EXPECT_GE(j, 0.0);
    EXPECT_LE(j, 1.0);
  }
}

TEST(SoftJaccard, GradientMatchesFiniteDifferences) {
  oracle::Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(64);
    for (auto& x : v) x = oracle::uniform(rng, 0.01, 0.99);
    const auto truth = oracle::random_mask(rng, 8, 8);
    const auto g = soft_jaccard_gradient(soft_of(8, 8, v), truth);
    std::vector<std::size_t> all(64);
    std::iota(all.begin(), all.end(), 0);
    const auto fd = oracle::central_difference(
        [&](std::span<const double> p) { return soft_jaccard(soft_of(8, 8, {p.begin(), p.end()}), truth); }, v, all,
        1e-7);
    EXPECT_LT(oracle::relative_error(g.values(), fd), 1e-6);
  }
}

TEST(CombinedLoss, Examples) {
  EXPECT_DOUBLE_EQ(combined_loss(0.7, 0.9, 0.0).l_total, 0.7);
  EXPECT_DOUBLE_EQ(combined_loss(0.7, 0.9, 1.0).l_total, 0.9);
  EXPECT_NEAR(combined_loss(1.0, 0.5, 0.3).l_total, 0.85, 1e-12);
  const auto b = combined_loss(1.0, 0.5, 0.3);
  EXPECT_EQ(b.l_cls, 1.0);
  EXPECT_EQ(b.l_exp, 0.5);
  EXPECT_EQ(b.lambda, 0.3);
}

TEST(CombinedLoss, LinearInLambda) {
  oracle::Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const double lc = oracle::uniform(rng, 0, 5), le = oracle::uniform(rng);
    const double t0 = combined_loss(lc, le, 0.0).l_total, t1 = combined_loss(lc, le, 1.0).l_total;
    for (double lam : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const auto b = combined_loss(lc, le, lam);
      EXPECT_NEAR(b.l_total, (1 - lam) * t0 + lam * t1, 1e-9);
      EXPECT_NEAR(b.l_total, (1 - lam) * lc + lam * le, 1e-9);
    }
  }
}

TEST(CombinedLoss, LambdaOutsideUnitIntervalIsConfigError) {
  EXPECT_THROW(combined_loss(1, 1, -0.01), ConfigError);
  EXPECT_THROW(combined_loss(1, 1, 1.01), ConfigError);
  EXPECT_THROW(combined_loss(1, 1, std::nan("")), ConfigError);
}
