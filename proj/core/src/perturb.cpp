#include "mapr/perturb.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mapr/error.hpp"
#include "mapr/knn.hpp"

namespace mapr {

void PerturbConfig::validate() const {
  if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 180.0)) {
    throw ConfigError("perturb: max_rotation_deg must lie in [0, 180]");
  }
  if (!(jitter_sigma >= 0.0)) throw ConfigError("perturb: jitter_sigma must be >= 0");
  if (!(jitter_clip >= 0.0)) throw ConfigError("perturb: jitter_clip must be >= 0");
}

void SorConfig::validate() const {
  if (k < 1) throw ConfigError("sor: k must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("sor: alpha must be > 0");
}

PointCloud perturb(const PointCloud& cloud, const PerturbConfig& cfg, Rng& rng) {
  cfg.validate();
  PointCloud out = cloud;
  const double max_rad = cfg.max_rotation_deg * std::numbers::pi / 180.0;
  std::uniform_real_distribution<double> angle_dist(-max_rad, max_rad);
  const double angle = max_rad > 0.0 ? angle_dist(rng) : 0.0;
  if (angle != 0.0) {
    Mat3 rot;
    if (cfg.axis == RotationAxis::kGravity) {
      rot = rotation_z(angle);
    } else {
      std::normal_distribution<double> axis_dist(0.0, 1.0);
      Vec3 axis{axis_dist(rng), axis_dist(rng), axis_dist(rng)};
      if (axis[0] == 0.0 && axis[1] == 0.0 && axis[2] == 0.0) axis[2] = 1.0;
      rot = rotation_axis_angle(axis, angle);
    }
    out = rotate(cloud, rot);
  }
  if (cfg.jitter_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.jitter_sigma);
    for (double& v : out.xyz) v += std::clamp(noise(rng), -cfg.jitter_clip, cfg.jitter_clip);
  }
  return out;
}

SorResult sor_filter(const PointCloud& cloud, const SorConfig& cfg) {
  cfg.validate();
  const std::size_t n = cloud.size();
  if (n <= cfg.k) {
    spdlog::warn("sor: cloud has {} points, need more than k={}; returning input", n, cfg.k);
    return {cloud, 0, true};
  }
  const KnnTable knn = knn_search(cloud, cfg.k);
  std::vector<double> mean_dist(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cfg.k; ++j) s += std::sqrt(knn.sq_distance(i, j));
    mean_dist[i] = s / static_cast<double>(cfg.k);
    total += mean_dist[i];
  }
  const double mu = total / static_cast<double>(n);
  double var = 0.0;
  for (double d : mean_dist) var += (d - mu) * (d - mu);
  // Relative slack so a cloud with identical statistics keeps every point
  // despite rounding in the mean.
  const double threshold = (mu + cfg.alpha * std::sqrt(var / static_cast<double>(n))) * (1.0 + 1e-12);

  PointCloud out;
  out.label = cloud.label;
  out.xyz.reserve(cloud.xyz.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (mean_dist[i] <= threshold) out.xyz.insert(out.xyz.end(), cloud.xyz.begin() + 3 * i, cloud.xyz.begin() + 3 * i + 3);
  }
  if (out.empty()) {
    spdlog::warn("sor: filter would remove every point; returning input");
    return {cloud, 0, true};
  }
  const std::size_t removed = n - out.size();
  return {std::move(out), removed, false};
}

PointCloud sor_defense(const PointCloud& cloud, const SorConfig& cfg) { return sor_filter(cloud, cfg).cloud; }

}  // namespace mapr
