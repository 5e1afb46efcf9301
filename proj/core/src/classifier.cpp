#include "mapr/classifier.hpp"

#include <algorithm>

#include "mapr/error.hpp"
#include "mapr/losses.hpp"

namespace mapr {

Classifier::Classifier(const PointNetLite& model, std::size_t graph_k, FeatureGradient feature_gradient)
    : model_(model.frozen()), graph_k_(graph_k), feature_gradient_(feature_gradient) {
  if (model_.in_channels() != 3 && model_.in_channels() != kAugmentedChannels) {
    throw ConfigError("classifier: model input width must be 3 or 20");
  }
}

Tensor Classifier::encode(std::span<const PointCloud> clouds) const {
  if (!augmented()) return encode_raw(clouds);
  std::vector<IntrinsicFeatures> phi;
  phi.reserve(clouds.size());
  for (const auto& c : clouds) phi.push_back(intrinsic_map(c, graph_k_));
  return encode_augmented(clouds, phi);
}

std::vector<double> Classifier::logits(const PointCloud& cloud) const {
  const Tensor out = model_.forward(encode(std::span(&cloud, 1)));
  return {out.data().begin(), out.data().end()};
}

int Classifier::predict(const PointCloud& cloud) const { return predict_batch(std::span(&cloud, 1)).front(); }

std::vector<int> Classifier::predict_batch(std::span<const PointCloud> clouds) const {
  return model_.predict(encode(clouds)).labels;
}

LossGradient Classifier::loss_gradient(const PointCloud& cloud, int label) const {
  return loss_gradient_batch(std::span(&cloud, 1), std::span(&label, 1)).front();
}

Classifier::Backprop Classifier::backprop(std::span<const PointCloud> clouds,
                                         const std::function<Tensor(const Tensor&)>& objective) const {
  if (clouds.empty()) throw ShapeError("classifier backprop: empty batch");
  const std::size_t b = clouds.size();
  const std::size_t n = clouds.front().size();

  std::vector<DiffusionOperator> ops;
  std::vector<IntrinsicFeatures> phi;
  Tensor input;
  if (augmented()) {
    for (const auto& c : clouds) {
      ops.push_back(build_knn_graph(c, graph_k_));
      phi.push_back(intrinsic_map(ops.back(), c));
    }
    input = encode_augmented(clouds, phi);
  } else {
    input = encode_raw(clouds);
  }
  input.set_requires_grad(true);

  Tape tape;
  Tensor logits;
  Tensor value;
  {
    Tape::Scope scope(tape);
    logits = model_.forward(input);
    value = objective(logits);
  }
  tape.backward(value);

  Backprop out;
  out.logits = logits.detach();
  out.grad.resize(b);
  const std::size_t c = input.dim(2);
  const auto g = input.grad();
  for (std::size_t s = 0; s < b; ++s) {
    auto& r = out.grad[s];
    r.resize(n * 3);
    const double* gs = g.data() + s * n * c;
    for (std::size_t i = 0; i < n; ++i)
      for (int d = 0; d < 3; ++d) r[3 * i + d] = gs[i * c + d];
    if (augmented() && feature_gradient_ == FeatureGradient::kThroughFeatures) {
      std::vector<double> g_phi(n * kIntrinsicChannels);
      for (std::size_t i = 0; i < n; ++i)
        std::copy_n(gs + i * c + 3, kIntrinsicChannels, g_phi.begin() + static_cast<long>(i * kIntrinsicChannels));
      const std::vector<double> g_x = intrinsic_pullback(ops[s], clouds[s], g_phi);
      for (std::size_t i = 0; i < n * 3; ++i) r[i] += g_x[i];
    }
  }
  return out;
}

std::vector<LossGradient> Classifier::loss_gradient_batch(std::span<const PointCloud> clouds,
                                                          std::span<const int> labels) const {
  if (clouds.size() != labels.size() || clouds.empty()) throw ShapeError("loss_gradient_batch: batch mismatch");
  const double b = static_cast<double>(clouds.size());
  // Summed so each cloud receives the gradient of its own cross-entropy.
  Backprop bp = backprop(clouds, [&](const Tensor& logits) { return scale(cross_entropy(logits, labels), b); });

  const Tensor log_probs = log_softmax(bp.logits);
  const std::size_t classes = bp.logits.dim(1);
  std::vector<LossGradient> out(clouds.size());
  for (std::size_t s = 0; s < clouds.size(); ++s) {
    LossGradient& r = out[s];
    r.loss = -log_probs.at(s * classes + static_cast<std::size_t>(labels[s]));
    r.logits.assign(bp.logits.data().begin() + static_cast<long>(s * classes),
                    bp.logits.data().begin() + static_cast<long>((s + 1) * classes));
    r.grad = std::move(bp.grad[s]);
  }
  return out;
}

std::vector<double> Classifier::logits_vjp(const PointCloud& cloud, std::span<const double> cotangent) const {
  if (cotangent.size() != num_classes()) throw ShapeError("logits_vjp: cotangent length must equal the class count");
  const Tensor weights = Tensor::from({1, cotangent.size()}, {cotangent.begin(), cotangent.end()});
  Backprop bp = backprop(std::span(&cloud, 1), [&](const Tensor& logits) { return sum(mul(logits, weights)); });
  return std::move(bp.grad.front());
}

}  // namespace mapr
