#include "mapr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mapr/error.hpp"

namespace mapr {

void LossConfig::validate() const {
  if (!(lambda_max >= 0.0)) throw ConfigError("loss: lambda_max must be >= 0");
  if (ramp_epochs < 1) throw ConfigError("loss: ramp_epochs must be >= 1");
  if (!(epsilon > 0.0)) throw ConfigError("loss: epsilon must be > 0");
  if (!(at_alpha >= 0.0 && at_alpha <= 1.0)) throw ConfigError("loss: at_alpha must lie in [0, 1]");
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1)) {
      throw ConfigError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(logits.dim(1)) + ")");
    }
  }
  return scale(mean(gather_rows(log_softmax(logits), labels)), -1.0);
}

double symmetric_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("symmetric_kl: distributions differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = std::max(p[i], kProbabilityFloor);
    const double b = std::max(q[i], kProbabilityFloor);
    total += (a - b) * (std::log(a) - std::log(b));
  }
  return 0.5 * total;
}

Tensor symmetric_kl_rows(const Tensor& logits_p, const Tensor& logits_q) {
  if (logits_p.shape() != logits_q.shape() || logits_p.rank() != 2) {
    throw ShapeError("symmetric_kl_rows: shapes " + shape_str(logits_p.shape()) + " and " +
                     shape_str(logits_q.shape()));
  }
  const double log_floor = std::log(kProbabilityFloor);
  const Tensor log_p = clamp_min(log_softmax(logits_p), log_floor);
  const Tensor log_q = clamp_min(log_softmax(logits_q), log_floor);
  const Tensor diff = sub(exp(log_p), exp(log_q));
  return scale(sum_over_axis(mul(diff, sub(log_p, log_q)), 1), 0.5);
}

Tensor consistency_loss(const Tensor& logits_p, const Tensor& logits_q, std::span<const double> intrinsic_gaps,
                        double epsilon) {
  if (logits_p.rank() != 2 || intrinsic_gaps.size() != logits_p.dim(0)) {
    throw ShapeError("consistency_loss: " + std::to_string(intrinsic_gaps.size()) + " gaps for logits " +
                     shape_str(logits_p.shape()));
  }
  std::vector<double> inv(intrinsic_gaps.size());
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / (intrinsic_gaps[i] + epsilon);
  const std::size_t b = inv.size();
  const Tensor weights = Tensor::from({b}, std::move(inv));
  return mean(mul(symmetric_kl_rows(logits_p, logits_q), weights));
}

double consistency_loss(std::span<const std::vector<double>> p_batch, std::span<const std::vector<double>> q_batch,
                        std::span<const IntrinsicFeatures> phi, std::span<const IntrinsicFeatures> phi_prime,
                        double epsilon) {
  const std::size_t b = p_batch.size();
  if (b == 0 || q_batch.size() != b || phi.size() != b || phi_prime.size() != b) {
    throw ShapeError("consistency_loss: batch sizes differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    total += symmetric_kl(p_batch[i], q_batch[i]) / (intrinsic_gap(phi[i], phi_prime[i]) + epsilon);
  }
  return total / static_cast<double>(b);
}

double lambda_schedule(int epoch, const LossConfig& cfg) {
  if (epoch < 1) throw ConfigError("lambda_schedule: epochs are counted from 1");
  return cfg.lambda_max * std::min(static_cast<double>(epoch) / static_cast<double>(cfg.ramp_epochs), 1.0);
}

Tensor adversarial_training_loss(const Tensor& clean_logits, const Tensor& adv_logits, std::span<const int> labels,
                                 double alpha) {
  return add(scale(cross_entropy(clean_logits, labels), alpha),
             scale(cross_entropy(adv_logits, labels), 1.0 - alpha));
}

}  // namespace mapr
