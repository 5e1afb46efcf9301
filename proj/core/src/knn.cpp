#include "mapr/knn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <utility>

#include "mapr/error.hpp"

namespace mapr {

namespace {

using Candidate = std::pair<double, std::size_t>;  // (squared distance, index)

constexpr std::size_t kBruteForceLimit = 96;

void check_size(const PointCloud& cloud, std::size_t k) {
  if (k == 0) throw ConfigError("knn: k must be at least 1");
  if (cloud.size() <= k) {
    throw ConfigError("knn: need more than k=" + std::to_string(k) + " points, got " +
                      std::to_string(cloud.size()));
  }
}

class UniformGrid {
 public:
  UniformGrid(const PointCloud& cloud, std::size_t k) : cloud_(cloud) {
    const std::size_t n = cloud.size();
    lo_ = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
           std::numeric_limits<double>::infinity()};
    Vec3 hi = {-lo_[0], -lo_[1], -lo_[2]};
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 3; ++d) {
        lo_[d] = std::min(lo_[d], cloud.xyz[3 * i + d]);
        hi[d] = std::max(hi[d], cloud.xyz[3 * i + d]);
      }
    }
    double extent = 0.0;
    for (int d = 0; d < 3; ++d) extent = std::max(extent, hi[d] - lo_[d]);
    if (!(extent > 0.0)) extent = 1.0;
    // Roughly k points per occupied cell for surface-like samples.
    const double cells_per_axis = std::max(1.0, std::sqrt(static_cast<double>(n) / static_cast<double>(k)));
    cell_ = extent / cells_per_axis * (1.0 + 1e-9);
    for (int d = 0; d < 3; ++d) {
      dims_[d] = static_cast<long>(std::floor((hi[d] - lo_[d]) / cell_)) + 1;
    }
    cell_start_.assign(static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]) + 1, 0);
    std::vector<std::size_t> cell_of(n);
    for (std::size_t i = 0; i < n; ++i) {
      cell_of[i] = flat(coord(cloud[i]));
      ++cell_start_[cell_of[i] + 1];
    }
    for (std::size_t c = 1; c < cell_start_.size(); ++c) cell_start_[c] += cell_start_[c - 1];
    items_.resize(n);
    std::vector<std::size_t> fill(cell_start_.begin(), cell_start_.end() - 1);
    for (std::size_t i = 0; i < n; ++i) items_[fill[cell_of[i]]++] = i;
  }

  void query(std::size_t i, std::size_t k, Candidate* out) const {
    const auto p = cloud_[i];
    const std::array<long, 3> c = coord(p);
    std::priority_queue<Candidate> heap;  // max-heap on (d2, index)
    const long max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    for (long ring = 0; ring <= max_ring; ++ring) {
      visit_shell(c, ring, [&](std::size_t j) {
        if (j == i) return;
        const Candidate cand{squared_distance(p, cloud_[j]), j};
        if (heap.size() < k) {
          heap.push(cand);
        } else if (cand < heap.top()) {
          heap.pop();
          heap.push(cand);
        }
      });
      if (heap.size() == k) {
        // Distance from p to the boundary of the searched block of cells.
        double margin = std::numeric_limits<double>::infinity();
        bool covers_all = true;
        for (int d = 0; d < 3; ++d) {
          const long lo_cell = c[d] - ring;
          const long hi_cell = c[d] + ring;
          if (lo_cell > 0) {
            margin = std::min(margin, p[d] - (lo_[d] + static_cast<double>(lo_cell) * cell_));
            covers_all = false;
          }
          if (hi_cell < dims_[d] - 1) {
            margin = std::min(margin, (lo_[d] + static_cast<double>(hi_cell + 1) * cell_) - p[d]);
            covers_all = false;
          }
        }
        const double safe = std::max(0.0, margin) * (1.0 - 1e-9);
        if (covers_all || heap.top().first < safe * safe) break;
      }
    }
    for (std::size_t j = k; j-- > 0;) {
      out[j] = heap.top();
      heap.pop();
    }
  }

 private:
  std::array<long, 3> coord(std::span<const double, 3> p) const {
    std::array<long, 3> c{};
    for (int d = 0; d < 3; ++d) {
      c[d] = std::clamp(static_cast<long>(std::floor((p[d] - lo_[d]) / cell_)), 0L, dims_[d] - 1);
    }
    return c;
  }

  std::size_t flat(const std::array<long, 3>& c) const {
    return static_cast<std::size_t>((c[0] * dims_[1] + c[1]) * dims_[2] + c[2]);
  }

  template <typename Fn>
  void visit_cell(long x, long y, long z, Fn&& fn) const {
    if (x < 0 || y < 0 || z < 0 || x >= dims_[0] || y >= dims_[1] || z >= dims_[2]) return;
    const std::size_t f = flat({x, y, z});
    for (std::size_t s = cell_start_[f]; s < cell_start_[f + 1]; ++s) fn(items_[s]);
  }

  // Visits cells at Chebyshev distance exactly `ring` from c.
  template <typename Fn>
  void visit_shell(const std::array<long, 3>& c, long ring, Fn&& fn) const {
    if (ring == 0) {
      visit_cell(c[0], c[1], c[2], fn);
      return;
    }
    for (long dx = -ring; dx <= ring; ++dx) {
      for (long dy = -ring; dy <= ring; ++dy) {
        const bool edge = std::abs(dx) == ring || std::abs(dy) == ring;
        if (edge) {
          for (long dz = -ring; dz <= ring; ++dz) visit_cell(c[0] + dx, c[1] + dy, c[2] + dz, fn);
        } else {
          visit_cell(c[0] + dx, c[1] + dy, c[2] - ring, fn);
          visit_cell(c[0] + dx, c[1] + dy, c[2] + ring, fn);
        }
      }
    }
  }

  const PointCloud& cloud_;
  Vec3 lo_{};
  double cell_ = 1.0;
  std::array<long, 3> dims_{1, 1, 1};
  std::vector<std::size_t> cell_start_;
  std::vector<std::size_t> items_;
};

KnnTable make_table(std::size_t n, std::size_t k) {
  KnnTable t;
  t.n = n;
  t.k = k;
  t.index.resize(n * k);
  t.sq_dist.resize(n * k);
  return t;
}

}  // namespace

KnnTable knn_search_brute_force(const PointCloud& cloud, std::size_t k) {
  check_size(cloud, k);
  const std::size_t n = cloud.size();
  KnnTable t = make_table(n, k);
  std::vector<Candidate> cands(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cands[m++] = {squared_distance(cloud[i], cloud[j]), j};
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(k), cands.end());
    for (std::size_t j = 0; j < k; ++j) {
      t.sq_dist[i * k + j] = cands[j].first;
      t.index[i * k + j] = cands[j].second;
    }
  }
  return t;
}

KnnTable knn_search(const PointCloud& cloud, std::size_t k) {
  check_size(cloud, k);
  const std::size_t n = cloud.size();
  if (n <= kBruteForceLimit) return knn_search_brute_force(cloud, k);
  KnnTable t = make_table(n, k);
  const UniformGrid grid(cloud, k);
  std::vector<Candidate> row(k);
  for (std::size_t i = 0; i < n; ++i) {
    grid.query(i, k, row.data());
    for (std::size_t j = 0; j < k; ++j) {
      t.sq_dist[i * k + j] = row[j].first;
      t.index[i * k + j] = row[j].second;
    }
  }
  return t;
}

}  // namespace mapr
