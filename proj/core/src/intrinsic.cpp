#include "mapr/intrinsic.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

#include "mapr/error.hpp"

namespace mapr {

namespace {

struct Entry {
  double sq_dist;
  std::size_t col;
  double weight;
};

bool contains_neighbor(const KnnTable& knn, std::size_t row, std::size_t target) {
  for (std::size_t j = 0; j < knn.k; ++j)
    if (knn.neighbor(row, j) == target) return true;
  return false;
}

double directed_weight(const KnnTable& knn, const std::vector<double>& sigma, std::size_t i, std::size_t j) {
  for (std::size_t m = 0; m < knn.k; ++m) {
    if (knn.neighbor(i, m) == j) return std::exp(-knn.sq_distance(i, m) / (sigma[i] * sigma[i]));
  }
  return 0.0;
}

void validate_steps(std::span<const int> steps) {
  if (steps.empty()) throw ConfigError("diffusion steps must not be empty");
  for (std::size_t s = 0; s < steps.size(); ++s) {
    if (steps[s] < 1 || (s > 0 && steps[s] <= steps[s - 1])) {
      throw ConfigError("diffusion steps must be positive and strictly ascending");
    }
  }
}

}  // namespace

void DiffusionOperator::apply(std::span<const double> in, std::span<double> out, std::size_t channels) const {
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data() + i * channels;
    std::fill(o, o + channels, 0.0);
    for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e) {
      const double w = weight[e];
      const double* src = in.data() + col[e] * channels;
      for (std::size_t c = 0; c < channels; ++c) o[c] += w * src[c];
    }
  }
}

void DiffusionOperator::apply_transpose(std::span<const double> in, std::span<double> out,
                                        std::size_t channels) const {
  std::fill(out.begin(), out.begin() + static_cast<long>(n * channels), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = in.data() + i * channels;
    for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e) {
      double* o = out.data() + col[e] * channels;
      for (std::size_t c = 0; c < channels; ++c) o[c] += weight[e] * src[c];
    }
  }
}

double DiffusionOperator::row_sum(std::size_t i) const {
  double s = 0.0;
  for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e) s += weight[e];
  return s;
}

DiffusionOperator build_knn_graph(const PointCloud& cloud, std::size_t k) {
  DiffusionOperator op;
  op.n = cloud.size();
  op.knn = knn_search(cloud, k);
  const std::size_t n = op.n;

  op.bandwidths.resize(n);
  std::vector<double> positive;
  for (std::size_t i = 0; i < n; ++i) {
    op.bandwidths[i] = std::sqrt(op.knn.sq_distance(i, k - 1));
    if (op.bandwidths[i] > 0.0) positive.push_back(op.bandwidths[i]);
  }
  if (positive.size() < n) {
    if (positive.empty()) throw DataError("degenerate bandwidth: every point coincides with its neighbours");
    const auto mid = positive.begin() + static_cast<long>(positive.size() / 2);
    std::nth_element(positive.begin(), mid, positive.end());
    double median = *mid;
    if (positive.size() % 2 == 0) {
      median = 0.5 * (median + *std::max_element(positive.begin(), mid));
    }
    for (double& s : op.bandwidths)
      if (!(s > 0.0)) s = median;
  }

  // Union support of the directed graph, weight (w_ij + w_ji) / 2.
  std::vector<std::vector<Entry>> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t j = op.knn.neighbor(i, m);
      const double d2 = op.knn.sq_distance(i, m);
      const double w_ij = std::exp(-d2 / (op.bandwidths[i] * op.bandwidths[i]));
      const double w_ji = directed_weight(op.knn, op.bandwidths, j, i);
      const double sym = 0.5 * (w_ij + w_ji);
      rows[i].push_back({d2, j, sym});
      if (!contains_neighbor(op.knn, j, i)) rows[j].push_back({d2, i, sym});
    }
  }

  op.row_ptr.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = rows[i];
    std::sort(r.begin(), r.end(), [](const Entry& a, const Entry& b) {
      return std::tie(a.sq_dist, a.col) < std::tie(b.sq_dist, b.col);
    });
    double total = 0.0;
    for (const auto& e : r) total += e.weight;
    for (const auto& e : r) {
      op.col.push_back(e.col);
      op.weight.push_back(e.weight / total);
    }
    op.row_ptr[i + 1] = op.col.size();
  }
  return op;
}

std::vector<double> curvature(const DiffusionOperator& op, const PointCloud& cloud) {
  if (cloud.size() != op.n) throw ConfigError("curvature: operator built for a different cloud");
  std::vector<double> smoothed(cloud.xyz.size());
  op.apply(cloud.xyz, smoothed, 3);
  std::vector<double> kappa(op.n);
  for (std::size_t i = 0; i < op.n; ++i) {
    double s = 0.0;
    for (int d = 0; d < 3; ++d) {
      const double r = cloud.xyz[3 * i + d] - smoothed[3 * i + d];
      s += r * r;
    }
    kappa[i] = std::sqrt(s);
  }
  return kappa;
}

std::vector<double> diffusion_features(const DiffusionOperator& op, const PointCloud& cloud,
                                       std::span<const int> steps) {
  validate_steps(steps);
  if (cloud.size() != op.n) throw ConfigError("diffusion_features: operator built for a different cloud");
  const std::size_t n = op.n;
  const std::size_t width = 4 * steps.size();
  std::vector<double> signal(n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < 3; ++d) signal[4 * i + d] = cloud.xyz[3 * i + d];
    signal[4 * i + 3] = 1.0;
  }
  std::vector<double> next(n * 4);
  std::vector<double> out(n * width);
  std::size_t s = 0;
  for (int t = 1; t <= steps.back(); ++t) {
    op.apply(signal, next, 4);
    signal.swap(next);
    if (t == steps[s]) {
      for (std::size_t i = 0; i < n; ++i)
        std::copy_n(signal.begin() + static_cast<long>(4 * i), 4, out.begin() + static_cast<long>(i * width + 4 * s));
      ++s;
    }
  }
  return out;
}

IntrinsicFeatures intrinsic_map(const DiffusionOperator& op, const PointCloud& cloud) {
  const std::vector<double> diffusion = diffusion_features(op, cloud);
  const std::vector<double> kappa = curvature(op, cloud);
  constexpr std::size_t kDiff = kIntrinsicChannels - 1;
  IntrinsicFeatures phi;
  phi.n = op.n;
  phi.values.resize(op.n * kIntrinsicChannels);
  for (std::size_t i = 0; i < op.n; ++i) {
    std::copy_n(diffusion.begin() + static_cast<long>(i * kDiff), kDiff,
                phi.values.begin() + static_cast<long>(i * kIntrinsicChannels));
    phi.values[i * kIntrinsicChannels + kDiff] = kappa[i];
  }
  return phi;
}

IntrinsicFeatures intrinsic_map(const PointCloud& cloud, std::size_t k) {
  return intrinsic_map(build_knn_graph(cloud, k), cloud);
}

AugmentedCloud augment(const PointCloud& cloud, const IntrinsicFeatures& phi) {
  if (phi.n != cloud.size()) throw ConfigError("augment: feature rows do not match cloud size");
  AugmentedCloud out;
  out.n = cloud.size();
  out.values.resize(out.n * kAugmentedChannels);
  for (std::size_t i = 0; i < out.n; ++i) {
    double* row = out.values.data() + i * kAugmentedChannels;
    std::copy_n(cloud.xyz.data() + 3 * i, 3, row);
    std::copy_n(phi.values.data() + i * kIntrinsicChannels, kIntrinsicChannels, row + 3);
  }
  return out;
}

AugmentedCloud augment(const PointCloud& cloud, std::size_t k) { return augment(cloud, intrinsic_map(cloud, k)); }

double intrinsic_gap(const IntrinsicFeatures& a, const IntrinsicFeatures& b) {
  if (a.values.size() != b.values.size()) {
    throw ShapeError("intrinsic_gap: feature maps have " + std::to_string(a.n) + " and " +
                     std::to_string(b.n) + " rows");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return s;
}

std::vector<double> intrinsic_pullback(const DiffusionOperator& op, const PointCloud& cloud,
                                       std::span<const double> grad_features) {
  const std::size_t n = op.n;
  if (cloud.size() != n || grad_features.size() != n * kIntrinsicChannels) {
    throw ShapeError("intrinsic_pullback: gradient shape does not match the operator");
  }
  constexpr std::size_t kCurv = kIntrinsicChannels - 1;

  // Diffusion channels: accumulate from the largest step down.
  std::vector<double> acc(n * 3, 0.0);
  std::vector<double> tmp(n * 3);
  std::size_t s = kDiffusionSteps.size();
  for (int t = kDiffusionSteps.back(); t >= 1; --t) {
    if (s > 0 && kDiffusionSteps[s - 1] == t) {
      --s;
      for (std::size_t i = 0; i < n; ++i)
        for (int d = 0; d < 3; ++d) acc[3 * i + d] += grad_features[i * kIntrinsicChannels + 4 * s + d];
    }
    op.apply_transpose(acc, tmp, 3);
    acc.swap(tmp);
  }

  // Curvature channel: kappa_i = |r_i|, r = (I - A) X.
  std::vector<double> smoothed(n * 3);
  op.apply(cloud.xyz, smoothed, 3);
  std::vector<double> grad_r(n * 3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double r[3];
    double norm2 = 0.0;
    for (int d = 0; d < 3; ++d) {
      r[d] = cloud.xyz[3 * i + d] - smoothed[3 * i + d];
      norm2 += r[d] * r[d];
    }
    const double g = grad_features[i * kIntrinsicChannels + kCurv];
    if (norm2 > 0.0 && g != 0.0) {
      const double inv = g / std::sqrt(norm2);
      for (int d = 0; d < 3; ++d) grad_r[3 * i + d] = inv * r[d];
    }
  }
  op.apply_transpose(grad_r, tmp, 3);
  for (std::size_t i = 0; i < n * 3; ++i) acc[i] += grad_r[i] - tmp[i];
  return acc;
}

}  // namespace mapr
