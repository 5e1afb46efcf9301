#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "mapr/error.hpp"
#include "mapr/perturb.hpp"
#include "support.hpp"

using namespace mapr;
using mapr::testing::random_cloud;

TEST(Perturb, IdentityConfigReturnsInputBitwise) {
  PointCloud c = random_cloud(100, 1);
  c.label = 4;
  PerturbConfig cfg;
  cfg.max_rotation_deg = 0;
  cfg.jitter_sigma = 0;
  Rng rng(1);
  const PointCloud out = perturb(c, cfg, rng);
  EXPECT_EQ(out.xyz, c.xyz);
  EXPECT_EQ(out.label, 4);
}

TEST(Perturb, DeterministicGivenGeneratorState) {
  const PointCloud c = random_cloud(100, 2);
  Rng a(77), b(77);
  EXPECT_EQ(perturb(c, {}, a).xyz, perturb(c, {}, b).xyz);
}

TEST(Perturb, PairwiseDistancesMoveWithinJitterBound) {
  const PointCloud c = random_cloud(120, 3);
  PerturbConfig cfg;
  cfg.jitter_sigma = 0.05;  // exercise the clip
  Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const PointCloud p = perturb(c, cfg, rng);
    ASSERT_EQ(p.size(), c.size());
    const double bound = 2 * cfg.jitter_clip * std::sqrt(3.0) + 1e-12;
    for (std::size_t i = 0; i < c.size(); i += 3)
      for (std::size_t j = i + 1; j < c.size(); j += 5) {
        const double d0 = std::sqrt(squared_distance(c[i], c[j]));
        const double d1 = std::sqrt(squared_distance(p[i], p[j]));
        ASSERT_LE(std::abs(d1 - d0), bound);
      }
  }
}

TEST(Perturb, RotationIsAboutGravityWithinBound) {
  const PointCloud c = random_cloud(50, 4);
  PerturbConfig cfg;
  cfg.jitter_sigma = 0;
  Rng rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    const PointCloud p = perturb(c, cfg, rng);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_DOUBLE_EQ(p.xyz[3 * i + 2], c.xyz[3 * i + 2]);
    // Recover the angle from one point with a sizeable xy radius.
    const double a0 = std::atan2(c.xyz[1], c.xyz[0]);
    const double a1 = std::atan2(p.xyz[1], p.xyz[0]);
    double diff = std::remainder(a1 - a0, 2 * M_PI);
    EXPECT_LE(std::abs(diff), 15.0 * M_PI / 180.0 + 1e-12);
  }
}

TEST(Perturb, ConfigValidation) {
  PerturbConfig cfg;
  cfg.max_rotation_deg = 181;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.max_rotation_deg = 10;
  cfg.jitter_sigma = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.jitter_sigma = 0.01;
  cfg.jitter_clip = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Sor, DefaultsMatchProtocol) {
  const SorConfig cfg;
  EXPECT_EQ(cfg.k, 2u);
  EXPECT_DOUBLE_EQ(cfg.alpha, 1.1);
}

TEST(Sor, RemovesFarOutlierKeepsGrid) {
  std::vector<double> xyz;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) xyz.insert(xyz.end(), {0.1 * i, 0.1 * j, 0.0});
  xyz.insert(xyz.end(), {5.0, 5.0, 5.0});
  const SorResult r = sor_filter(PointCloud(xyz), {});
  EXPECT_EQ(r.removed, 1u);
  EXPECT_EQ(r.cloud.size(), 100u);
  EXPECT_EQ(std::vector<double>(xyz.begin(), xyz.end() - 3), r.cloud.xyz);
}

TEST(Sor, EqualStatisticsRemoveNothing) {
  // Regular polygon: every point has the same two nearest-neighbour distances.
  std::vector<double> xyz;
  for (int i = 0; i < 12; ++i) xyz.insert(xyz.end(), {std::cos(2 * M_PI * i / 12), std::sin(2 * M_PI * i / 12), 0.0});
  const SorResult r = sor_filter(PointCloud(xyz), {});
  EXPECT_EQ(r.removed, 0u);
  EXPECT_FALSE(r.fallback);
}

TEST(Sor, DegenerateSizeFallsBack) {
  const PointCloud c = random_cloud(2, 7);
  const SorResult r = sor_filter(c, {});
  EXPECT_TRUE(r.fallback);
  EXPECT_EQ(r.cloud.xyz, c.xyz);
}

TEST(Sor, OutputIsSubsetAndRepeatedFilteringShrinks) {
  const PointCloud c = random_cloud(300, 8);
  const PointCloud once = sor_defense(c);
  const PointCloud twice = sor_defense(once);
  EXPECT_LE(once.size(), c.size());
  EXPECT_LE(twice.size(), once.size());
  std::set<std::array<double, 3>> source;
  for (std::size_t i = 0; i < c.size(); ++i) source.insert(c.point(i));
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_TRUE(source.contains(once.point(i)));
}

TEST(Sor, RetainedSetIsPermutationInvariant) {
  const PointCloud c = random_cloud(250, 9);
  auto as_set = [](const PointCloud& p) {
    std::set<std::array<double, 3>> s;
    for (std::size_t i = 0; i < p.size(); ++i) s.insert(p.point(i));
    return s;
  };
  const auto base = as_set(sor_defense(c));
  Rng rng(10);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<std::size_t> order(250);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    EXPECT_EQ(as_set(sor_defense(permute(c, order))), base);
  }
}
