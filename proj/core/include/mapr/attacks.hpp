#pragma once

// Gradient-based and point-count adversarial attacks on raw coordinates.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mapr/classifier.hpp"
#include "mapr/knn.hpp"
#include "mapr/perturb.hpp"
#include "mapr/point_cloud.hpp"

namespace mapr {

enum class AttackKind { kSmaDrop, kPgdL2, kPgdLinf, kFgsm, kBim, kAddK, kTpgd, kSipgd };
enum class Norm { kL2, kLinf };

// Report column order.
inline constexpr std::array<AttackKind, 8> kAllAttacks = {
    AttackKind::kSmaDrop, AttackKind::kPgdL2, AttackKind::kPgdLinf, AttackKind::kFgsm,
    AttackKind::kBim,     AttackKind::kAddK,  AttackKind::kTpgd,    AttackKind::kSipgd};

std::string attack_name(AttackKind kind);
AttackKind parse_attack(const std::string& name);

struct AttackConfig {
  AttackKind kind = AttackKind::kPgdLinf;
  double epsilon = 0.05;
  int steps = 20;
  double step_size = 0.01;
  std::size_t k_points = 100;
  std::size_t surrogate_count = 2;
  double momentum = 0.9;
  double si_weight = 1.0;
  std::size_t si_neighbors = 10;
  bool random_start = false;
  double add_init_sigma = 0.01;
  double add_init_radius = 0.02;
  bool allow_single_surrogate = false;  // debug: white-box momentum PGD
  std::uint64_t seed = 0;

  static AttackConfig defaults(AttackKind kind);
  void validate() const;
};

struct AdversarialResult {
  PointCloud adv_cloud;
  bool success = false;  // prediction differs from the clean prediction
  // Norm of the coordinate change for norm-bounded attacks (l2 for pgd_l2,
  // l-infinity otherwise); number of removed or added points for
  // sma_drop and add_k.
  double perturbation_norm = 0.0;
  int iterations_used = 0;
  int clean_prediction = -1;
  int adv_prediction = -1;
};

// Distances between equal-size clouds, treating coordinates as one vector.
double linf_distance(const PointCloud& a, const PointCloud& b);
double l2_distance(const PointCloud& a, const PointCloud& b);

AdversarialResult fgsm(const Classifier& model, const PointCloud& cloud, int label, double epsilon);

AdversarialResult bim(const Classifier& model, const PointCloud& cloud, int label, double epsilon, int steps,
                      double step_size);

AdversarialResult pgd(const Classifier& model, const PointCloud& cloud, int label, Norm norm, double epsilon,
                      int steps, double step_size, bool random_start, Rng& rng);

// Batched PGD over equal-size clouds; used by adversarial training.
std::vector<PointCloud> pgd_batch(const Classifier& model, std::span<const PointCloud> clouds,
                                  std::span<const int> labels, Norm norm, double epsilon, int steps,
                                  double step_size, bool random_start, Rng& rng);

// s_i = -<dL/dx_i, x_i - centroid>.
std::vector<double> sma_saliency(const Classifier& model, const PointCloud& cloud, int label);
AdversarialResult sma_drop(const Classifier& model, const PointCloud& cloud, int label, std::size_t k_points);

AdversarialResult add_k(const Classifier& model, const PointCloud& cloud, int label, std::size_t k_points, int steps,
                        double step_size, double init_sigma, double init_radius, Rng& rng);

// Elementwise mean of the surrogates' coordinate gradients.
std::vector<double> surrogate_gradient_mean(std::span<const Classifier> surrogates, const PointCloud& cloud,
                                            int label);

AdversarialResult tpgd(std::span<const Classifier> surrogates, const Classifier& target, const PointCloud& cloud,
                       int label, double epsilon, int steps, double step_size, double momentum,
                       bool allow_single_surrogate = false);

// sum_i sum_{j in N(i)} (|x'_i - x'_j| - |x_i - x_j|)^2 over frozen neighbours.
double shape_penalty(const PointCloud& clean, const KnnTable& neighbors, const PointCloud& adv);
// Mean absolute change of clean-neighbour distances.
double neighbor_distortion(const PointCloud& clean, const KnnTable& neighbors, const PointCloud& adv);

AdversarialResult sipgd(const Classifier& model, const PointCloud& cloud, int label, double epsilon, int steps,
                        double step_size, double si_weight, std::size_t si_neighbors, bool random_start, Rng& rng);

// Runs the configured attack with a generator seeded from cfg.seed.
AdversarialResult run_attack(const AttackConfig& cfg, const Classifier& target, std::span<const Classifier> surrogates,
                             const PointCloud& cloud, int label);

}  // namespace mapr
