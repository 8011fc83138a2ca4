#include <gtest/gtest.h>

#include "oracles.hpp"
#include "saliencytune/gradcam.hpp"
#include "saliencytune/metrics.hpp"

using namespace saliencytune;

namespace {

const std::vector<std::string> kNames{"MEL", "NV", "BKL"};

}  // namespace

TEST(Metrics, PerfectClassifierAndMasks) {
  const std::vector<std::size_t> y{0, 1, 2, 0, 1, 2};
  const std::vector<std::optional<double>> j(6, 1.0);
  const auto r = compute_metrics(y, y, j, kNames, 0.5);
  EXPECT_EQ(r.accuracy, 1.0);
  for (const auto& s : r.per_class_sensitivity) EXPECT_EQ(s, 1.0);
  EXPECT_EQ(r.avg_sensitivity, 1.0);
  EXPECT_EQ(r.avg_jaccard, 1.0);
  EXPECT_EQ(r.jaccard_sd, 0.0);
  EXPECT_EQ(r.n_samples, 6u);
}

TEST(Metrics, SingleClassPredictions) {
  const std::vector<std::size_t> y{0, 1, 2, 0, 1, 2, 0, 1, 2}, p(9, 1);
  const std::vector<std::optional<double>> j(9);
  const auto r = compute_metrics(p, y, j, kNames, 0.5);
  EXPECT_EQ(r.per_class_sensitivity[0], 0.0);
  EXPECT_EQ(r.per_class_sensitivity[1], 1.0);
  EXPECT_EQ(r.per_class_sensitivity[2], 0.0);
  EXPECT_DOUBLE_EQ(r.avg_sensitivity, 1.0 / 3.0);
  EXPECT_EQ(r.n_jaccard, 0u);
}

TEST(Metrics, AbsentClassHasNoSensitivity) {
  const std::vector<std::size_t> y{0, 0, 1}, p{0, 1, 1};
  const std::vector<std::optional<double>> j(3);
  const auto r = compute_metrics(p, y, j, kNames, 0.5);
  EXPECT_FALSE(r.per_class_sensitivity[2]);
  EXPECT_DOUBLE_EQ(r.avg_sensitivity, (0.5 + 1.0) / 2.0);
  EXPECT_TRUE(r.to_json()["per_class_sensitivity"]["BKL"].is_null());
}

TEST(Metrics, EmptyInputIsInputError) {
  EXPECT_THROW(compute_metrics({}, {}, {}, kNames, 0.5), InputError);
  const auto m = make_reference_cnn(1);
  EXPECT_THROW(evaluate(m, std::span<const ImageSample>(), 0.5), InputError);
}

TEST(Metrics, MatchConfusionMatrixOracle) {
  oracle::Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + oracle::index(rng, 60);
    std::vector<std::size_t> p(n), y(n);
    std::vector<std::optional<double>> j(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = oracle::index(rng, 3);
      y[i] = oracle::index(rng, 3);
      if (oracle::uniform(rng) < 0.8) {
        const auto a = oracle::random_bits(rng, 64), b = oracle::random_bits(rng, 64);
        j[i] = oracle::jaccard(a, b);
      }
    }
    const auto r = compute_metrics(p, y, j, kNames, 0.5);
    const auto o = oracle::confusion(p, y, j, 3);
    EXPECT_NEAR(r.accuracy, o.accuracy, 1e-9);
    EXPECT_NEAR(r.avg_sensitivity, o.avg_sensitivity, 1e-9);
    EXPECT_NEAR(r.avg_jaccard, o.avg_jaccard, 1e-9);
    EXPECT_NEAR(r.jaccard_sd, o.jaccard_sd, 1e-9);
    for (std::size_t c = 0; c < 3; ++c) {
      ASSERT_EQ(r.per_class_sensitivity[c].has_value(), o.sensitivity[c].has_value());
      if (o.sensitivity[c]) {
        EXPECT_NEAR(*r.per_class_sensitivity[c], *o.sensitivity[c], 1e-9);
      }
    }

    // Accuracy is the prevalence-weighted mean of the sensitivities.
    double weighted = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const auto members = static_cast<double>(std::count(y.begin(), y.end(), c));
      if (r.per_class_sensitivity[c]) weighted += members / static_cast<double>(n) * *r.per_class_sensitivity[c];
    }
    EXPECT_NEAR(r.accuracy, weighted, 1e-9);

    // Invariant to sample order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> p2, y2;
    std::vector<std::optional<double>> j2;
    for (auto i : order) {
      p2.push_back(p[i]);
      y2.push_back(y[i]);
      j2.push_back(j[i]);
    }
    const auto r2 = compute_metrics(p2, y2, j2, kNames, 0.5);
    EXPECT_EQ(r2.accuracy, r.accuracy);
    EXPECT_EQ(r2.per_class_sensitivity, r.per_class_sensitivity);
    EXPECT_NEAR(r2.avg_jaccard, r.avg_jaccard, 1e-12);
    EXPECT_NEAR(r2.jaccard_sd, r.jaccard_sd, 1e-12);
  }
}

TEST(Evaluate, JaccardRecomputedPerThresholdFromHardMasks) {
  const auto model = make_reference_cnn(3);
  const auto samples = generate_synthetic_dataset(30, 3);
  for (double t : {0.3, 0.5, 0.7}) {
    const auto r = evaluate(model, samples, t);
    EXPECT_EQ(r.threshold_used, t);
    EXPECT_EQ(r.n_samples, samples.size());
    std::vector<std::size_t> p, y;
    std::vector<std::optional<double>> j;
    for (const auto& s : samples) {
      const auto e = explain(model, s.image);
      p.push_back(e.predicted_class);
      y.push_back(s.label);
      const auto& map = e.path.normalized().values;
      std::vector<std::uint8_t> hard;
      for (double v : map) hard.push_back(v > t ? 1 : 0);
      const auto truth = oracle::block_majority(oracle::bits_of(*s.gt_mask), 32, 32, 8, 8);
      j.push_back(oracle::jaccard(hard, truth));
    }
    const auto o = oracle::confusion(p, y, j, 3);
    EXPECT_NEAR(r.accuracy, o.accuracy, 1e-9);
    EXPECT_NEAR(r.avg_jaccard, o.avg_jaccard, 1e-9) << "t=" << t;
    EXPECT_NEAR(r.jaccard_sd, o.jaccard_sd, 1e-9);
  }
}

TEST(Evaluate, SamplesWithoutMasksSkipJaccard) {
  const auto model = make_reference_cnn(3);
  auto samples = generate_synthetic_dataset(30, 3);
  for (std::size_t i = 0; i < samples.size(); i += 2) samples[i].gt_mask.reset();
  const auto r = evaluate(model, samples, 0.5);
  EXPECT_EQ(r.n_jaccard, 15u);
  EXPECT_EQ(r.to_json()["jaccard_sd_kind"], "population");
}
