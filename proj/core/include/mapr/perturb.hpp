#pragma once

#include <cstdint>

#include "mapr/point_cloud.hpp"
#include "mapr/rng.hpp"

namespace mapr {

enum class RotationAxis { kGravity, kAny };

// Geometry-preserving training perturbation: a small rotation followed by
// clipped Gaussian jitter.
struct PerturbConfig {
  double max_rotation_deg = 15.0;
  double jitter_sigma = 0.01;
  double jitter_clip = 0.05;
  RotationAxis axis = RotationAxis::kGravity;
  std::uint64_t seed = 0;

  void validate() const;
};

// X' = R X + eta. Deterministic given the generator state; label preserved.
PointCloud perturb(const PointCloud& cloud, const PerturbConfig& cfg, Rng& rng);

// Statistical outlier removal.
struct SorConfig {
  std::size_t k = 2;
  double alpha = 1.1;

  void validate() const;
};

struct SorResult {
  PointCloud cloud;
  std::size_t removed = 0;
  bool fallback = false;  // input returned unchanged (degenerate size or full removal)
};

// Drops points whose mean distance to their k nearest neighbours exceeds
// mean + alpha * std (population std) of that statistic over the cloud.
SorResult sor_filter(const PointCloud& cloud, const SorConfig& cfg);
PointCloud sor_defense(const PointCloud& cloud, const SorConfig& cfg = {});

}  // namespace mapr
