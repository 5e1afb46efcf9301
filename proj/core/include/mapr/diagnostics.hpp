#pragma once

// Jacobian anisotropy and the empirical intrinsic-Lipschitz ratio.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "mapr/classifier.hpp"
#include "mapr/perturb.hpp"
#include "mapr/point_cloud.hpp"

namespace mapr {

// A linear map known only through vector-Jacobian products.
struct JacobianOperator {
  std::size_t outputs = 0;
  std::size_t inputs = 0;
  std::function<std::vector<double>(std::span<const double> cotangent)> vjp;
};

inline constexpr double kSingularFloor = 1e-12;
inline constexpr double kInfiniteAnisotropy = std::numeric_limits<double>::infinity();

// sigma_max / sigma_min over the nonzero-rank side of J, or infinity when the
// smallest singular value falls below kSingularFloor. Builds the outputs x
// outputs Gram matrix J J^T from one VJP per output, then runs `iterations`
// rounds of power iteration for the top eigenvalue and shifted power
// iteration for the bottom one.
double anisotropy(const JacobianOperator& jac, int iterations = 2000, std::uint64_t seed = 0);

// d logits / d coordinates of a classifier at one cloud.
JacobianOperator model_jacobian(const Classifier& model, const PointCloud& cloud);

double diagnostics_mu(const Classifier& model, const PointCloud& cloud, int probes = 2000);

struct LipschitzStats {
  std::size_t pairs = 0;
  double max = 0.0;
  double mean = 0.0;
  double p50 = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
  std::vector<double> ratios;
};

// Ratio |softmax f(X) - softmax f(X')|_2 / (|phi(X) - phi(X')|_F + epsilon)
// over pairs (X, perturb(X)); pair p uses cloud p mod |clouds|.
LipschitzStats diagnostics_lipschitz(const Classifier& model, std::span<const PointCloud> clouds, std::size_t pairs,
                                     const PerturbConfig& perturb_cfg, std::uint64_t seed, double epsilon = 1e-6);

// Summary of explicit ratios (used by the sampler and by tests).
LipschitzStats summarize_ratios(std::vector<double> ratios);

}  // namespace mapr
