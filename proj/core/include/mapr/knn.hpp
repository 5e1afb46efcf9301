#pragma once

#include <cstddef>
#include <vector>

#include "mapr/point_cloud.hpp"

namespace mapr {

// Exact k nearest neighbours of every point, excluding the point itself.
// Row i holds neighbours ordered by (squared distance, index) ascending, so
// equal distances resolve to the lower point index.
struct KnnTable {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::size_t> index;  // n * k
  std::vector<double> sq_dist;     // n * k

  std::size_t neighbor(std::size_t i, std::size_t j) const { return index[i * k + j]; }
  double sq_distance(std::size_t i, std::size_t j) const { return sq_dist[i * k + j]; }
};

// Uses a uniform grid for larger clouds and a direct scan otherwise.
// Throws ConfigError when the cloud has k or fewer points.
KnnTable knn_search(const PointCloud& cloud, std::size_t k);

KnnTable knn_search_brute_force(const PointCloud& cloud, std::size_t k);

}  // namespace mapr
