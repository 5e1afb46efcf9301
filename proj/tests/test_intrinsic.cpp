#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>

#include "mapr/error.hpp"
#include "mapr/intrinsic.hpp"
#include "mapr/knn.hpp"
#include "support.hpp"

using namespace mapr;
using mapr::testing::random_cloud;
using mapr::testing::sphere_cloud;

namespace {

Eigen::MatrixXd dense(const DiffusionOperator& op) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<long>(op.n), static_cast<long>(op.n));
  for (std::size_t i = 0; i < op.n; ++i)
    for (std::size_t e = op.row_ptr[i]; e < op.row_ptr[i + 1]; ++e)
      a(static_cast<long>(i), static_cast<long>(op.col[e])) += op.weight[e];
  return a;
}

Eigen::MatrixXd coords(const PointCloud& c) {
  Eigen::MatrixXd x(static_cast<long>(c.size()), 3);
  for (std::size_t i = 0; i < c.size(); ++i)
    for (int d = 0; d < 3; ++d) x(static_cast<long>(i), d) = c.xyz[3 * i + d];
  return x;
}

PointCloud plane_cloud(std::size_t side, double spacing) {
  std::vector<double> xyz;
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j) {
      xyz.push_back(spacing * static_cast<double>(i) + 1e-4 * std::sin(static_cast<double>(7 * i + 3 * j)));
      xyz.push_back(spacing * static_cast<double>(j) + 1e-4 * std::cos(static_cast<double>(5 * i + 11 * j)));
      xyz.push_back(0.0);
    }
  return PointCloud(std::move(xyz));
}

}  // namespace

TEST(Knn, GridSearchMatchesBruteForce) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (std::size_t n : {64u, 150u, 700u}) {
      const PointCloud c = random_cloud(n, seed);
      const KnnTable fast = knn_search(c, 20);
      const KnnTable slow = knn_search_brute_force(c, 20);
      EXPECT_EQ(fast.index, slow.index) << "n=" << n << " seed=" << seed;
      EXPECT_EQ(fast.sq_dist, slow.sq_dist);
    }
  }
}

TEST(Knn, TiesBreakByLowerIndexAndNoSelfLoops) {
  // Four corners of a square plus its center: the center sees four ties.
  const PointCloud c({0, 0, 0, 1, 1, 0, -1, 1, 0, -1, -1, 0, 1, -1, 0});
  const KnnTable t = knn_search(c, 2);
  EXPECT_EQ(t.neighbor(0, 0), 1u);
  EXPECT_EQ(t.neighbor(0, 1), 2u);
  for (std::size_t i = 0; i < t.n; ++i)
    for (std::size_t j = 0; j < t.k; ++j) EXPECT_NE(t.neighbor(i, j), i);
}

TEST(Knn, TooFewPointsIsConfigError) {
  EXPECT_THROW((void)knn_search(random_cloud(20, 1), 20), ConfigError);
  EXPECT_THROW((void)build_knn_graph(random_cloud(5, 1), 20), ConfigError);
}

TEST(Graph, CollinearMiddlePointHasEqualWeights) {
  const PointCloud c({-1, 0, 0, 0, 0, 0, 1, 0, 0});
  const DiffusionOperator op = build_knn_graph(c, 2);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(op.row_sum(i), 1.0, 1e-12);
  const Eigen::MatrixXd a = dense(op);
  EXPECT_NEAR(a(1, 0), 0.5, 1e-12);
  EXPECT_NEAR(a(1, 2), 0.5, 1e-12);
}

TEST(Graph, RowStochasticNonNegativeAndBandwidths) {
  const PointCloud c = sphere_cloud(2048, 3);
  const DiffusionOperator op = build_knn_graph(c, 20);
  for (std::size_t i = 0; i < op.n; ++i) {
    EXPECT_NEAR(op.row_sum(i), 1.0, 1e-12);
    EXPECT_GT(op.bandwidths[i], 0.0);
    EXPECT_DOUBLE_EQ(op.bandwidths[i], std::sqrt(op.knn.sq_distance(i, 19)));
    for (std::size_t e = op.row_ptr[i]; e < op.row_ptr[i + 1]; ++e) {
      EXPECT_GE(op.weight[e], 0.0);
      EXPECT_NE(op.col[e], i);
    }
  }
}

TEST(Graph, RowStochasticProperty) {
  for (std::uint64_t seed = 10; seed < 30; ++seed) {
    const PointCloud c = random_cloud(40 + seed * 7, seed);
    const DiffusionOperator op = build_knn_graph(c, 10);
    for (std::size_t i = 0; i < op.n; ++i) ASSERT_NEAR(op.row_sum(i), 1.0, 1e-12);
  }
}

TEST(Graph, SymmetrizedBeforeNormalization) {
  const PointCloud c = random_cloud(50, 4);
  const DiffusionOperator op = build_knn_graph(c, 6);
  // Unnormalized symmetric weights, rebuilt from the definition.
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(50, 50);
  for (std::size_t i = 0; i < 50; ++i)
    for (std::size_t m = 0; m < 6; ++m) {
      const auto j = op.knn.neighbor(i, m);
      w(static_cast<long>(i), static_cast<long>(j)) =
          std::exp(-op.knn.sq_distance(i, m) / (op.bandwidths[i] * op.bandwidths[i]));
    }
  const Eigen::MatrixXd sym = 0.5 * (w + w.transpose());
  const Eigen::MatrixXd expect = sym.array().colwise() / sym.rowwise().sum().array();
  EXPECT_LT((dense(op) - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Graph, DuplicateNeighbourhoodUsesMedianBandwidth) {
  PointCloud c = random_cloud(30, 5);
  // Point 0 gets three exact copies, so with k = 3 its bandwidth is zero.
  for (int rep = 0; rep < 3; ++rep) c.xyz.insert(c.xyz.end(), c.xyz.begin(), c.xyz.begin() + 3);
  const DiffusionOperator op = build_knn_graph(c, 3);
  std::vector<double> positive;
  for (std::size_t i = 0; i < op.n; ++i) {
    const double raw = std::sqrt(op.knn.sq_distance(i, 2));
    if (raw > 0) positive.push_back(raw);
  }
  std::sort(positive.begin(), positive.end());
  const std::size_t m = positive.size();
  const double median = m % 2 ? positive[m / 2] : 0.5 * (positive[m / 2 - 1] + positive[m / 2]);
  EXPECT_DOUBLE_EQ(op.bandwidths[0], median);
  for (std::size_t i = 0; i < op.n; ++i) EXPECT_NEAR(op.row_sum(i), 1.0, 1e-12);
}

TEST(Graph, AllDuplicateCloudIsDegenerate) {
  std::vector<double> xyz;
  for (int i = 0; i < 10; ++i) xyz.insert(xyz.end(), {0.3, 0.2, 0.1});
  EXPECT_THROW((void)build_knn_graph(PointCloud(xyz), 3), DataError);
}

TEST(Curvature, HarmonicRingCenterIsFlat) {
  // Center plus a symmetric ring of 6 neighbours; with k = 6 the center's row
  // averages the ring uniformly.
  std::vector<double> xyz = {0, 0, 0};
  for (int i = 0; i < 6; ++i) {
    const double t = 2 * M_PI * i / 6;
    xyz.insert(xyz.end(), {std::cos(t), std::sin(t), 0});
  }
  // Far companions mirrored above and below the plane keep the whole
  // configuration symmetric about the center.
  for (double z : {0.5, -0.5})
    for (int i = 0; i < 6; ++i) {
      const double t = 2 * M_PI * i / 6;
      xyz.insert(xyz.end(), {3 * std::cos(t), 3 * std::sin(t), z});
    }
  const PointCloud c(xyz);
  const DiffusionOperator op = build_knn_graph(c, 6);
  const auto kappa = curvature(op, c);
  EXPECT_NEAR(kappa[0], 0.0, 1e-12);
  for (double k : kappa) EXPECT_GE(k, 0.0);
}

TEST(Curvature, PlaneIsFlatterThanSphereAtEveryQuantile) {
  const std::size_t side = 45;
  const PointCloud plane = plane_cloud(side, 2.0 / static_cast<double>(side));
  const PointCloud sphere = sphere_cloud(side * side, 8);
  auto interior_quantiles = [](const PointCloud& c, bool plane_interior) {
    const auto kappa = curvature(build_knn_graph(c, 20), c);
    std::vector<double> vals;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (plane_interior) {
        const double x = c.xyz[3 * i], y = c.xyz[3 * i + 1];
        if (x < 0.3 || x > 1.65 || y < 0.3 || y > 1.65) continue;
      }
      vals.push_back(kappa[i]);
    }
    std::sort(vals.begin(), vals.end());
    std::vector<double> q;
    for (double p : {0.1, 0.25, 0.5, 0.75, 0.9}) q.push_back(vals[static_cast<std::size_t>(p * (vals.size() - 1))]);
    return q;
  };
  const auto qp = interior_quantiles(plane, true);
  const auto qs = interior_quantiles(sphere, false);
  for (std::size_t i = 0; i < qp.size(); ++i) EXPECT_LT(qp[i], qs[i]) << "quantile " << i;
}

TEST(Diffusion, LayoutAndDensityChannels) {
  const PointCloud c = sphere_cloud(300, 9);
  const IntrinsicFeatures phi = intrinsic_map(c, 20);
  ASSERT_EQ(phi.values.size(), 300u * 17);
  EXPECT_EQ(IntrinsicFeatures::channels(), 17u);
  for (std::size_t i = 0; i < 300; ++i) {
    for (std::size_t s = 0; s < 4; ++s) EXPECT_NEAR(phi.at(i, 4 * s + 3), 1.0, 1e-12);
    EXPECT_GE(phi.at(i, 16), 0.0);
  }
}

TEST(Diffusion, ConstantSignalIsAFixedPoint) {
  const PointCloud c = random_cloud(80, 11);
  const DiffusionOperator op = build_knn_graph(c, 10);
  std::vector<double> in(80, 2.5), out(80);
  std::vector<double> cur = in;
  for (int t = 0; t < 8; ++t) {
    op.apply(cur, out, 1);
    cur = out;
  }
  for (double v : cur) EXPECT_NEAR(v, 2.5, 1e-12);
}

TEST(Diffusion, MatchesDenseMatrixPowers) {
  const PointCloud c = random_cloud(32, 12);
  const DiffusionOperator op = build_knn_graph(c, 20);
  const auto feats = diffusion_features(op, c);
  const Eigen::MatrixXd a = dense(op);
  const Eigen::MatrixXd x = coords(c);
  for (std::size_t s = 0; s < 4; ++s) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(32, 32);
    for (int t = 0; t < kDiffusionSteps[s]; ++t) p = p * a;
    const Eigen::MatrixXd ax = p * x;
    const Eigen::VectorXd a1 = p * Eigen::VectorXd::Ones(32);
    for (long i = 0; i < 32; ++i) {
      for (long d = 0; d < 3; ++d) EXPECT_NEAR(feats[static_cast<std::size_t>(i) * 16 + 4 * s + d], ax(i, d), 1e-10);
      EXPECT_NEAR(feats[static_cast<std::size_t>(i) * 16 + 4 * s + 3], a1(i), 1e-10);
    }
  }
}

TEST(Diffusion, RejectsUnsortedSteps) {
  const PointCloud c = random_cloud(40, 13);
  const DiffusionOperator op = build_knn_graph(c, 5);
  const std::vector<int> bad = {2, 1};
  EXPECT_THROW((void)diffusion_features(op, c, bad), ConfigError);
}

TEST(Diffusion, SmoothingContractsOnSpheres) {
  // Flag rather than fail: count violations and require a clear majority.
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PointCloud c = sphere_cloud(256, 100 + seed);
    const auto f = diffusion_features(build_knn_graph(c, 20), c);
    // Successive smoothing steps move the cloud less: |P^2 X - P X| <= |P X - X|.
    double first = 0, second = 0;
    for (std::size_t i = 0; i < 256; ++i)
      for (std::size_t d = 0; d < 3; ++d) {
        const double a = f[i * 16 + d] - c.xyz[3 * i + d];
        const double b = f[i * 16 + 4 + d] - f[i * 16 + d];
        first += a * a;
        second += b * b;
      }
    if (second <= first) ++ok;
  }
  EXPECT_GE(ok, 15);
}

TEST(Intrinsic, RigidMotionBehaviour) {
  const PointCloud c = sphere_cloud(200, 14);
  const Mat3 r = rotation_axis_angle({0.3, -0.5, 0.8}, 0.7);
  const Vec3 shift{0.2, -0.1, 0.05};
  const PointCloud moved = translate(rotate(c, r), shift);
  const IntrinsicFeatures a = intrinsic_map(c, 20);
  const IntrinsicFeatures b = intrinsic_map(moved, 20);
  for (std::size_t i = 0; i < 200; ++i) {
    EXPECT_NEAR(a.at(i, 16), b.at(i, 16), 1e-9);
    for (std::size_t s = 0; s < 4; ++s) {
      EXPECT_NEAR(a.at(i, 4 * s + 3), b.at(i, 4 * s + 3), 1e-9);
      for (int d = 0; d < 3; ++d) {
        double expect = shift[d];
        for (int e = 0; e < 3; ++e) expect += r[d][e] * a.at(i, 4 * s + e);
        EXPECT_NEAR(b.at(i, 4 * s + d), expect, 1e-9);
      }
    }
  }
}

TEST(Intrinsic, PermutationEquivariantExactly) {
  const PointCloud c = random_cloud(180, 15);
  const IntrinsicFeatures base = intrinsic_map(c, 20);
  Rng rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<std::size_t> order(180);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const IntrinsicFeatures p = intrinsic_map(permute(c, order), 20);
    for (std::size_t i = 0; i < 180; ++i)
      for (std::size_t ch = 0; ch < 17; ++ch) ASSERT_EQ(p.at(i, ch), base.at(order[i], ch));
  }
}

TEST(Augment, WidthAndCoordinateColumns) {
  const PointCloud c = random_cloud(64, 16);
  const AugmentedCloud aug = augment(c, 20);
  EXPECT_EQ(AugmentedCloud::channels(), 20u);
  ASSERT_EQ(aug.values.size(), 64u * 20);
  for (std::size_t i = 0; i < 64; ++i)
    for (int d = 0; d < 3; ++d) EXPECT_EQ(aug.values[i * 20 + d], c.xyz[3 * i + d]);
  const PointCloud r = rotate(c, rotation_z(0.4));
  const AugmentedCloud ar = augment(r, 20);
  for (std::size_t i = 0; i < 64; ++i)
    for (int d = 0; d < 3; ++d) EXPECT_EQ(ar.values[i * 20 + d], r.xyz[3 * i + d]);
}

TEST(Intrinsic, GapIsSquaredFrobenius) {
  const PointCloud c = random_cloud(40, 17);
  const IntrinsicFeatures a = intrinsic_map(c, 8);
  IntrinsicFeatures b = a;
  b.values[5] += 0.5;
  b.values[100] -= 2.0;
  EXPECT_DOUBLE_EQ(intrinsic_gap(a, b), 0.25 + 4.0);
  EXPECT_EQ(intrinsic_gap(a, a), 0.0);
}

TEST(Intrinsic, PullbackMatchesFiniteDifferencesWithFrozenGraph) {
  const PointCloud c = random_cloud(40, 18);
  const DiffusionOperator op = build_knn_graph(c, 8);
  const auto weights = mapr::testing::random_values(40 * 17, 19);
  auto objective = [&](const std::vector<double>& xyz) {
    const IntrinsicFeatures phi = intrinsic_map(op, PointCloud(xyz));
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * phi.values[i];
    return s;
  };
  const auto analytic = intrinsic_pullback(op, c, weights);
  const auto numeric = mapr::testing::numeric_gradient(objective, c.xyz, 1e-6);
  for (std::size_t i = 0; i < analytic.size(); ++i)
    EXPECT_LT(mapr::testing::relative_error(analytic[i], numeric[i], 1e-6), 1e-6) << i;
}
