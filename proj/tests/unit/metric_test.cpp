#include <gtest/gtest.h>

#include <cmath>

#include "../support/backends.hpp"
#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "fewshot/errors.hpp"
#include "fewshot/metric.hpp"
#include "fewshot/ops.hpp"

namespace fewshot {
namespace {

using testing::random_tensor;

TEST(EuclideanDistance, IdenticalRowsAreZero) {
  Rng rng(1);
  Tensor u = random_tensor({3, 128}, rng);
  const Tensor d = euclidean_distance(u, u.clone());
  for (const float v : d.data()) EXPECT_EQ(v, 0.0f);
}

TEST(EuclideanDistance, UnitBasisVectors) {
  std::vector<float> e1(128, 0.0f), e2(128, 0.0f);
  e1[0] = 1.0f;
  e2[1] = 1.0f;
  const Tensor d = euclidean_distance(Tensor::from_data({1, 128}, e1), Tensor::from_data({1, 128}, e2));
  EXPECT_FLOAT_EQ(d.item(), std::sqrt(2.0f));
}

TEST(EuclideanDistance, MatchesLoopOracle) {
  testing::for_each_backend([](kernels::Backend) {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t rows = 1 + rng.below(6), width = 1 + rng.below(140);
      const Tensor u = random_tensor({rows, width}, rng, -1, 1, false);
      const Tensor v = random_tensor({rows, width}, rng, -1, 1, false);
      const Tensor d = euclidean_distance(u, v);
      for (std::size_t i = 0; i < rows; ++i) {
        const double ref = oracle::euclidean(u.data().data() + i * width, v.data().data() + i * width, width);
        ASSERT_NEAR(d.at(i), ref, 1e-6 * std::max(1.0, ref));
      }
    }
  });
}

TEST(EuclideanDistance, GradientIsZeroAtCoincidentPoints) {
  Tensor u = Tensor::from_data({1, 3}, {1, 2, 3}, true);
  Tensor v = Tensor::from_data({1, 3}, {1, 2, 3}, true);
  backward(ops::sum(euclidean_distance(u, v)));
  for (const float g : u.grad()) EXPECT_EQ(g, 0.0f);
  for (const float g : v.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(EuclideanDistance, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Tensor u = random_tensor({4, 16}, rng);
    Tensor v = random_tensor({4, 16}, rng);
    const auto r = testing::check_gradients([&] { return euclidean_distance(u, v); }, {u, v});
    EXPECT_LT(r.max_relative_error, 1e-2) << r.worst;
  }
}

TEST(EuclideanDistance, SymmetryAndTriangleInequality) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor a = random_tensor({1, 8}, rng, -2, 2, false);
    const Tensor b = random_tensor({1, 8}, rng, -2, 2, false);
    const Tensor c = random_tensor({1, 8}, rng, -2, 2, false);
    const float ab = euclidean_distance(a, b).item();
    EXPECT_EQ(ab, euclidean_distance(b, a).item());
    EXPECT_LE(euclidean_distance(a, c).item(), ab + euclidean_distance(b, c).item() + 1e-5f);
  }
}

TEST(EuclideanDistance, ShapeMismatch) {
  EXPECT_THROW(euclidean_distance(Tensor::zeros({2, 3}), Tensor::zeros({2, 4})), ShapeError);
}

float loss_of(std::vector<float> d, std::vector<float> y, float margin) {
  const std::size_t n = d.size();
  return contrastive_loss(Tensor::from_data({n}, std::move(d)), Tensor::from_data({n}, std::move(y)), margin)
      .item();
}

TEST(ContrastiveLoss, Identities) {
  EXPECT_EQ(loss_of({0.0f}, {1.0f}, 1.0f), 0.0f);
  EXPECT_EQ(loss_of({0.0f}, {0.0f}, 1.0f), 1.0f);
  EXPECT_EQ(loss_of({2.0f}, {0.0f}, 1.0f), 0.0f);
  EXPECT_FLOAT_EQ(loss_of({0.5f, 0.25f}, {1.0f, 0.0f}, 1.0f), (0.25f + 0.5625f) / 2.0f);
}

TEST(ContrastiveLoss, RejectsNonBinaryLabelsAndBadMargin) {
  EXPECT_THROW(loss_of({0.5f}, {0.5f}, 1.0f), std::invalid_argument);
  EXPECT_THROW(loss_of({0.5f}, {1.0f}, 0.0f), std::invalid_argument);
}

TEST(ContrastiveLoss, GradientMatchesFiniteDifferencesAwayFromMargin) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    std::vector<float> d(32), y(32);
    for (std::size_t i = 0; i < d.size(); ++i) {
      do {
        d[i] = static_cast<float>(rng.uniform(0.0, 2.0));
      } while (std::fabs(d[i] - 1.0f) < 1e-2f);
      y[i] = static_cast<float>(rng.below(2));
    }
    Tensor dt = Tensor::from_data({32}, d, true);
    const Tensor yt = Tensor::from_data({32}, y);
    const auto r = testing::check_gradients([&] { return contrastive_loss(dt, yt, 1.0f); }, {dt});
    EXPECT_LT(r.max_relative_error, 1e-2) << r.worst;
  }
}

TEST(ContrastiveLoss, NonNegativeAndPermutationInvariant) {
  Rng rng(12);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    std::vector<float> d(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = static_cast<float>(rng.uniform(0.0, 3.0));
      y[i] = static_cast<float>(rng.below(2));
    }
    const float margin = static_cast<float>(rng.uniform(0.1, 2.0));
    const float loss = loss_of(d, y, margin);
    ASSERT_GE(loss, 0.0f);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<float> dp(n), yp(n);
    for (std::size_t i = 0; i < n; ++i) {
      dp[i] = d[perm[i]];
      yp[i] = y[perm[i]];
    }
    ASSERT_NEAR(loss_of(dp, yp, margin), loss, 1e-6f * std::max(1.0f, loss));
  }
}

TEST(ContrastiveLoss, ZeroIffPerfectSeparation) {
  EXPECT_EQ(loss_of({0.0f, 0.0f, 1.0f, 1.5f}, {1, 1, 0, 0}, 1.0f), 0.0f);
  EXPECT_GT(loss_of({0.0f, 0.1f, 1.0f, 1.5f}, {1, 1, 0, 0}, 1.0f), 0.0f);
  EXPECT_GT(loss_of({0.0f, 0.0f, 0.99f, 1.5f}, {1, 1, 0, 0}, 1.0f), 0.0f);
}

TEST(Decide, StrictInequality) {
  EXPECT_EQ(decide(0.0f, 0.5f), 1);
  EXPECT_EQ(decide(0.5f, 0.5f), 0);
  EXPECT_EQ(decide(0.7f, 0.5f), 0);
  const VerificationDecision v = make_decision(0.2f, 0.3f);
  EXPECT_EQ(v.label_pred, 1);
}

TEST(Decide, MonotoneInThreshold) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const float d = static_cast<float>(rng.uniform(0, 2));
    int previous = 0;
    for (float t = 0.0f; t < 3.0f; t += 0.01f) {
      const int now = decide(d, t);
      ASSERT_GE(now, previous);
      previous = now;
    }
  }
}

std::vector<ScoredPair> scored(const std::vector<std::pair<float, int>>& items) {
  std::vector<ScoredPair> out;
  for (const auto& [d, y] : items) out.push_back({d, y});
  return out;
}

TEST(CalibrateThreshold, SeparatedClustersPickFirstOptimalMidpoint) {
  std::vector<std::pair<float, int>> items;
  for (int i = 0; i < 5; ++i) items.push_back({0.1f, 1});
  for (int i = 0; i < 5; ++i) items.push_back({0.9f, 0});
  const Calibration c = calibrate_threshold(scored(items));
  EXPECT_FLOAT_EQ(c.threshold, 0.5f);
  EXPECT_EQ(c.accuracy, 1.0);
}

TEST(CalibrateThreshold, ConstantDistanceGivesMajorityAccuracy) {
  const Calibration c = calibrate_threshold(scored({{0.4f, 1}, {0.4f, 0}, {0.4f, 0}}));
  EXPECT_DOUBLE_EQ(c.accuracy, 2.0 / 3.0);
}

TEST(CalibrateThreshold, InvertedDistancesPredictAllZero) {
  const Calibration c = calibrate_threshold(scored({{0.9f, 1}, {0.9f, 1}, {0.1f, 0}, {0.1f, 0}}));
  EXPECT_EQ(c.threshold, 0.0f);
  EXPECT_DOUBLE_EQ(c.accuracy, 0.5);
}

TEST(CalibrateThreshold, SingleLabelIsAnError) {
  EXPECT_THROW(calibrate_threshold(scored({{0.1f, 1}, {0.2f, 1}})), std::invalid_argument);
}

TEST(CalibrateThreshold, AgreesWithExhaustiveSweep) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<std::pair<double, int>> items;
    std::vector<ScoredPair> pairs;
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid so ties happen.
      const float d = static_cast<float>(rng.below(12)) / 8.0f;
      const int y = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.below(2));
      items.push_back({d, y});
      pairs.push_back({d, y});
    }
    std::vector<double> distinct;
    for (const auto& it : items) distinct.push_back(it.first);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::vector<double> candidates{0.0};
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
      candidates.push_back(static_cast<float>(distinct[i] + (distinct[i + 1] - distinct[i]) / 2.0));
    }
    candidates.push_back(distinct.back() + 1e-6);
    const auto [best_acc, best_t] = oracle::exhaustive_threshold(items, candidates);
    const Calibration c = calibrate_threshold(pairs);
    ASSERT_DOUBLE_EQ(c.accuracy, best_acc);
    ASSERT_NEAR(c.threshold, best_t, 1e-6);
    ASSERT_DOUBLE_EQ(verification_accuracy(pairs, c.threshold), c.accuracy);
    // Never worse than the majority vote.
    std::size_t pos = 0;
    for (const auto& p : pairs) pos += p.label == 1;
    const double majority = static_cast<double>(std::max(pos, n - pos)) / static_cast<double>(n);
    ASSERT_GE(c.accuracy, majority);
  }
}

}  // namespace
}  // namespace fewshot
