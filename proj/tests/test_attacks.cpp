#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mapr/attacks.hpp"
#include "mapr/error.hpp"
#include "mapr/knn.hpp"
#include "mapr/model.hpp"
#include "support.hpp"

using namespace mapr;
using mapr::testing::random_cloud;
using mapr::testing::sphere_cloud;

namespace {

ModelConfig cfg(std::size_t in) {
  ModelConfig c;
  c.in_channels = in;
  c.point_widths = {16, 32};
  c.head_widths = {16};
  c.num_classes = 4;
  return c;
}

struct Fixture : ::testing::Test {
  PointNetLite raw_model{cfg(3), 1};
  PointNetLite aug_model{cfg(20), 2};
  Classifier raw{raw_model, 8};
  Classifier aug{aug_model, 8};
  PointCloud cloud = sphere_cloud(160, 3);
  int label = 1;
};

bool same_bits(const PointCloud& a, const PointCloud& b) { return a.xyz == b.xyz; }

}  // namespace

using Attacks = Fixture;

TEST_F(Attacks, NormBoundsHold) {
  Rng rng(4);
  for (const Classifier* m : {&raw, &aug}) {
    const auto l2 = pgd(*m, cloud, label, Norm::kL2, 1.25, 10, 0.125, true, rng);
    EXPECT_LE(l2_distance(l2.adv_cloud, cloud), 1.25 + 1e-9);
    const auto linf = pgd(*m, cloud, label, Norm::kLinf, 0.05, 10, 0.01, true, rng);
    EXPECT_LE(linf_distance(linf.adv_cloud, cloud), 0.05 + 1e-9);
    EXPECT_LE(linf_distance(fgsm(*m, cloud, label, 0.05).adv_cloud, cloud), 0.05 + 1e-9);
    EXPECT_LE(linf_distance(bim(*m, cloud, label, 0.05, 10, 0.01).adv_cloud, cloud), 0.05 + 1e-9);
    const auto si = sipgd(*m, cloud, label, 0.05, 10, 0.01, 1.0, 10, false, rng);
    EXPECT_LE(linf_distance(si.adv_cloud, cloud), 0.05 + 1e-9);
  }
}

TEST_F(Attacks, StepsMoveToTheBoundary) {
  // Sign steps of 0.01 for 10 iterations reach the 0.05 box on most coordinates.
  const auto r = bim(raw, cloud, label, 0.05, 10, 0.01);
  EXPECT_NEAR(linf_distance(r.adv_cloud, cloud), 0.05, 1e-12);
  EXPECT_NEAR(r.perturbation_norm, 0.05, 1e-12);
}

TEST_F(Attacks, ZeroBudgetsAreIdentity) {
  Rng rng(5);
  EXPECT_TRUE(same_bits(fgsm(raw, cloud, label, 0.0).adv_cloud, cloud));
  EXPECT_TRUE(same_bits(pgd(raw, cloud, label, Norm::kLinf, 0.05, 0, 0.01, false, rng).adv_cloud, cloud));
  EXPECT_TRUE(same_bits(pgd(raw, cloud, label, Norm::kL2, 1.25, 0, 0.1, false, rng).adv_cloud, cloud));
}

TEST_F(Attacks, SingleStepBimEqualsFgsm) {
  const auto a = bim(aug, cloud, label, 0.05, 1, 0.05);
  const auto b = fgsm(aug, cloud, label, 0.05);
  EXPECT_TRUE(same_bits(a.adv_cloud, b.adv_cloud));
}

TEST_F(Attacks, SipgdWithZeroWeightIsPgdLinfBitwise) {
  for (bool random_start : {false, true}) {
    Rng r1(6), r2(6);
    const auto a = sipgd(aug, cloud, label, 0.05, 8, 0.01, 0.0, 10, random_start, r1);
    const auto b = pgd(aug, cloud, label, Norm::kLinf, 0.05, 8, 0.01, random_start, r2);
    EXPECT_TRUE(same_bits(a.adv_cloud, b.adv_cloud));
  }
}

TEST_F(Attacks, SipgdPreservesShapeBetterThanPgd) {
  Rng r1(7), r2(7);
  const KnnTable nbrs = knn_search(cloud, 10);
  const auto a = sipgd(raw, cloud, label, 0.05, 20, 0.005, 50.0, 10, false, r1);
  const auto b = pgd(raw, cloud, label, Norm::kLinf, 0.05, 20, 0.005, false, r2);
  EXPECT_LE(shape_penalty(cloud, nbrs, a.adv_cloud), shape_penalty(cloud, nbrs, b.adv_cloud));
  EXPECT_LT(neighbor_distortion(cloud, nbrs, a.adv_cloud), neighbor_distortion(cloud, nbrs, b.adv_cloud));
}

TEST(ShapePenalty, ZeroForUnchangedCloud) {
  const PointCloud c = random_cloud(50, 8);
  const KnnTable nbrs = knn_search(c, 5);
  EXPECT_EQ(shape_penalty(c, nbrs, c), 0.0);
  EXPECT_EQ(neighbor_distortion(c, nbrs, c), 0.0);
  // A translation preserves all pairwise distances.
  const PointCloud t = translate(c, {0.25, 0.25, 0.25});
  EXPECT_NEAR(shape_penalty(c, nbrs, t), 0.0, 1e-24);
}

TEST_F(Attacks, SmaDropRemovesExactlyTopSalient) {
  const auto s = sma_saliency(raw, cloud, label);
  const auto r = sma_drop(raw, cloud, label, 100);
  ASSERT_EQ(r.adv_cloud.size(), cloud.size() - 100);
  EXPECT_EQ(r.perturbation_norm, 100.0);
  std::vector<std::size_t> order(cloud.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s[a] > s[b]; });
  std::vector<double> kept;
  std::vector<bool> dropped(cloud.size(), false);
  for (std::size_t j = 0; j < 100; ++j) dropped[order[j]] = true;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (!dropped[i]) kept.insert(kept.end(), cloud.xyz.begin() + 3 * i, cloud.xyz.begin() + 3 * i + 3);
  EXPECT_EQ(r.adv_cloud.xyz, kept);
}

TEST_F(Attacks, SmaDropZeroIsIdentity) {
  const auto r = sma_drop(raw, cloud, label, 0);
  EXPECT_TRUE(same_bits(r.adv_cloud, cloud));
  EXPECT_FALSE(r.success);
}

TEST_F(Attacks, SmaDropNeedsEnoughPoints) {
  EXPECT_THROW((void)sma_drop(raw, random_cloud(100, 9), label, 100), ConfigError);
}

TEST_F(Attacks, AddKAppendsAndKeepsOriginalsBitwise) {
  Rng rng(10);
  const auto r = add_k(aug, cloud, label, 100, 0, 0.01, 0.01, 0.02, rng);
  ASSERT_EQ(r.adv_cloud.size(), cloud.size() + 100);
  EXPECT_TRUE(std::equal(cloud.xyz.begin(), cloud.xyz.end(), r.adv_cloud.xyz.begin()));
  // Without optimisation steps each new point lies within the init radius
  // (per coordinate) of some original point.
  for (std::size_t j = cloud.size(); j < r.adv_cloud.size(); ++j) {
    double best = 1e9;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      double m = 0;
      for (int d = 0; d < 3; ++d) m = std::max(m, std::abs(r.adv_cloud.xyz[3 * j + d] - cloud.xyz[3 * i + d]));
      best = std::min(best, m);
    }
    EXPECT_LE(best, 0.02 + 1e-15);
  }
  Rng rng2(11);
  const auto moved = add_k(raw, cloud, label, 100, 5, 0.01, 0.01, 0.02, rng2);
  EXPECT_TRUE(std::equal(cloud.xyz.begin(), cloud.xyz.end(), moved.adv_cloud.xyz.begin()));
}

TEST_F(Attacks, TransferNeedsTwoSurrogatesUnlessDebug) {
  const std::vector<Classifier> one = {raw};
  EXPECT_THROW((void)tpgd(one, aug, cloud, label, 0.05, 2, 0.01, 0.9), ConfigError);
  const auto r = tpgd(one, aug, cloud, label, 0.05, 2, 0.01, 0.9, true);
  EXPECT_LE(linf_distance(r.adv_cloud, cloud), 0.05 + 1e-9);
  AttackConfig c = AttackConfig::defaults(AttackKind::kTpgd);
  c.surrogate_count = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST_F(Attacks, SurrogateGradientIsElementwiseMean) {
  const PointNetLite other_model(cfg(3), 12);
  const std::vector<Classifier> s = {raw, Classifier(other_model, 8)};
  const auto mean = surrogate_gradient_mean(s, cloud, label);
  const auto g0 = s[0].loss_gradient(cloud, label).grad, g1 = s[1].loss_gradient(cloud, label).grad;
  for (std::size_t i = 0; i < mean.size(); ++i) EXPECT_NEAR(mean[i], 0.5 * (g0[i] + g1[i]), 1e-15);
  const auto r = tpgd(s, aug, cloud, label, 0.05, 5, 0.01, 0.9);
  EXPECT_LE(linf_distance(r.adv_cloud, cloud), 0.05 + 1e-9);
}

TEST_F(Attacks, InputIsNotMutatedAndRunsAreDeterministic) {
  const PointCloud keep = cloud;
  const std::vector<Classifier> s = {raw, raw};
  for (AttackKind k : kAllAttacks) {
    AttackConfig c = AttackConfig::defaults(k);
    c.steps = std::min(c.steps, 3);
    c.seed = 13;
    c.random_start = true;
    const auto a = run_attack(c, aug, s, cloud, label);
    const auto b = run_attack(c, aug, s, cloud, label);
    EXPECT_TRUE(same_bits(cloud, keep)) << attack_name(k);
    EXPECT_TRUE(same_bits(a.adv_cloud, b.adv_cloud)) << attack_name(k);
    EXPECT_EQ(a.success, a.adv_prediction != a.clean_prediction);
  }
}

TEST(AttackConfigTest, DefaultBudgets) {
  EXPECT_EQ(AttackConfig::defaults(AttackKind::kPgdL2).epsilon, 1.25);
  for (AttackKind k : {AttackKind::kPgdLinf, AttackKind::kFgsm, AttackKind::kBim, AttackKind::kTpgd,
                       AttackKind::kSipgd})
    EXPECT_EQ(AttackConfig::defaults(k).epsilon, 0.05) << attack_name(k);
  EXPECT_EQ(AttackConfig::defaults(AttackKind::kSmaDrop).k_points, 100u);
  EXPECT_EQ(AttackConfig::defaults(AttackKind::kAddK).k_points, 100u);
  for (AttackKind k : kAllAttacks) EXPECT_EQ(parse_attack(attack_name(k)), k);
  EXPECT_THROW((void)parse_attack("cw"), ConfigError);
}
