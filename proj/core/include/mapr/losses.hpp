#pragma once

#include <span>
#include <vector>

#include "mapr/intrinsic.hpp"
#include "mapr/tensor.hpp"

namespace mapr {

inline constexpr double kProbabilityFloor = 1e-12;

struct LossConfig {
  double lambda_max = 1.0;
  int ramp_epochs = 15;
  double epsilon = 1e-6;  // added to the intrinsic-gap denominator
  double at_alpha = 0.5;  // weight of the clean term in adversarial training

  void validate() const;
};

// Mean over the batch of -log softmax(logits)[label]. logits: [B, C].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// 0.5 * (KL(p||q) + KL(q||p)) with entries floored at kProbabilityFloor.
double symmetric_kl(std::span<const double> p, std::span<const double> q);

// Row-wise symmetric KL between softmax(logits_p) and softmax(logits_q): [B].
Tensor symmetric_kl_rows(const Tensor& logits_p, const Tensor& logits_q);

// (1/B) sum_i D_SKL(p_i, q_i) / (gap_i + epsilon). The gaps are constants.
Tensor consistency_loss(const Tensor& logits_p, const Tensor& logits_q, std::span<const double> intrinsic_gaps,
                        double epsilon);

// Value form over explicit distributions and feature maps.
double consistency_loss(std::span<const std::vector<double>> p_batch, std::span<const std::vector<double>> q_batch,
                        std::span<const IntrinsicFeatures> phi, std::span<const IntrinsicFeatures> phi_prime,
                        double epsilon);

// lambda_max * min(epoch / ramp_epochs, 1), epochs counted from 1.
double lambda_schedule(int epoch, const LossConfig& cfg);

// alpha * CE(clean) + (1 - alpha) * CE(adversarial).
Tensor adversarial_training_loss(const Tensor& clean_logits, const Tensor& adv_logits, std::span<const int> labels,
                                 double alpha);

}  // namespace mapr
