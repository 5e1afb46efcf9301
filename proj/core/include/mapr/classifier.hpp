#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mapr/model.hpp"
#include "mapr/point_cloud.hpp"

namespace mapr {

// How input-coordinate gradients treat the intrinsic channels of an
// augmented model.
enum class FeatureGradient {
  kThroughFeatures,  // chain rule through phi with the k-NN operator held fixed
  kCoordinatesOnly,  // phi treated as a constant
};

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad;    // [N, 3], d loss / d coordinates
  std::vector<double> logits;  // [C]
};

// Read-only view of a trained model as a function of raw coordinates. Models
// with 20 input channels get intrinsic features recomputed from whatever
// coordinates they are given; 3-channel models see coordinates only.
class Classifier {
 public:
  explicit Classifier(const PointNetLite& model, std::size_t graph_k = kDefaultGraphNeighbors,
                      FeatureGradient feature_gradient = FeatureGradient::kThroughFeatures);

  bool augmented() const { return model_.in_channels() == kAugmentedChannels; }
  std::size_t num_classes() const { return model_.num_classes(); }
  std::size_t graph_k() const { return graph_k_; }
  const PointNetLite& model() const { return model_; }

  Tensor encode(std::span<const PointCloud> clouds) const;
  std::vector<double> logits(const PointCloud& cloud) const;
  int predict(const PointCloud& cloud) const;
  std::vector<int> predict_batch(std::span<const PointCloud> clouds) const;

  // Cross-entropy of one cloud and its gradient w.r.t. the coordinates.
  LossGradient loss_gradient(const PointCloud& cloud, int label) const;
  // Per-cloud losses and gradients for equal-size clouds in one pass.
  std::vector<LossGradient> loss_gradient_batch(std::span<const PointCloud> clouds, std::span<const int> labels) const;

  // Gradient of <cotangent, logits> w.r.t. the coordinates of one cloud.
  std::vector<double> logits_vjp(const PointCloud& cloud, std::span<const double> cotangent) const;

 private:
  struct Backprop {
    Tensor logits;                          // [B, C], detached
    std::vector<std::vector<double>> grad;  // per cloud [N, 3]
  };
  // Differentiates a scalar objective of the logits back to coordinates.
  Backprop backprop(std::span<const PointCloud> clouds, const std::function<Tensor(const Tensor&)>& objective) const;

  PointNetLite model_;  // frozen copy
  std::size_t graph_k_;
  FeatureGradient feature_gradient_;
};

}  // namespace mapr
