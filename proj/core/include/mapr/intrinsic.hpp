#pragma once

// Intrinsic geometric descriptors of a point cloud: a k-NN diffusion operator,
// Laplacian curvature and multi-scale diffusion features.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "mapr/knn.hpp"
#include "mapr/point_cloud.hpp"

namespace mapr {

inline constexpr std::size_t kDefaultGraphNeighbors = 20;
inline constexpr std::array<int, 4> kDiffusionSteps = {1, 2, 4, 8};
inline constexpr std::size_t kIntrinsicChannels = 4 * kDiffusionSteps.size() + 1;  // 17
inline constexpr std::size_t kAugmentedChannels = 3 + kIntrinsicChannels;           // 20

// Symmetrized, row-stochastic Gaussian k-NN operator A stored as CSR.
//
// Each row lists its entries by ascending distance from the row's point, so
// applying A sums in an order that does not depend on how points are indexed.
struct DiffusionOperator {
  std::size_t n = 0;
  KnnTable knn;                   // directed neighbour sets
  std::vector<double> bandwidths;  // sigma_i, distance to the k-th neighbour
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col;
  std::vector<double> weight;

  // out = A * in for row-major [n, channels] signals.
  void apply(std::span<const double> in, std::span<double> out, std::size_t channels) const;
  // out = A^T * in.
  void apply_transpose(std::span<const double> in, std::span<double> out, std::size_t channels) const;
  double row_sum(std::size_t i) const;
};

// Throws ConfigError when the cloud has k or fewer points and DataError when
// every point coincides (no positive bandwidth exists).
DiffusionOperator build_knn_graph(const PointCloud& cloud, std::size_t k = kDefaultGraphNeighbors);

// kappa_i = || x_i - (A X)_i ||.
std::vector<double> curvature(const DiffusionOperator& op, const PointCloud& cloud);

// Row-major [n, 4 * steps.size()]; for each t ascending: A^t x, A^t y, A^t z, A^t 1.
std::vector<double> diffusion_features(const DiffusionOperator& op, const PointCloud& cloud,
                                       std::span<const int> steps = kDiffusionSteps);

struct IntrinsicFeatures {
  std::size_t n = 0;
  std::vector<double> values;  // [n, 17]: 16 diffusion channels then curvature

  static constexpr std::size_t channels() { return kIntrinsicChannels; }
  double at(std::size_t i, std::size_t c) const { return values[i * kIntrinsicChannels + c]; }
};

IntrinsicFeatures intrinsic_map(const DiffusionOperator& op, const PointCloud& cloud);
IntrinsicFeatures intrinsic_map(const PointCloud& cloud, std::size_t k = kDefaultGraphNeighbors);

struct AugmentedCloud {
  std::size_t n = 0;
  std::vector<double> values;  // [n, 20] = [x y z | phi]

  static constexpr std::size_t channels() { return kAugmentedChannels; }
};

AugmentedCloud augment(const PointCloud& cloud, const IntrinsicFeatures& phi);
AugmentedCloud augment(const PointCloud& cloud, std::size_t k = kDefaultGraphNeighbors);

// Squared Frobenius distance between two feature maps of equal size.
double intrinsic_gap(const IntrinsicFeatures& a, const IntrinsicFeatures& b);

// Vector-Jacobian product of intrinsic_map with the operator held fixed:
// given dL/dPhi ([n, 17]) returns dL/dX ([n, 3]). Neighbour sets and edge
// weights are treated as constants.
std::vector<double> intrinsic_pullback(const DiffusionOperator& op, const PointCloud& cloud,
                                       std::span<const double> grad_features);

}  // namespace mapr
