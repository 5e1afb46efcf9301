#pragma once

// PointNet-lite: shared per-point MLP, global max-pool, MLP head.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mapr/intrinsic.hpp"
#include "mapr/point_cloud.hpp"
#include "mapr/tensor.hpp"

namespace mapr {

struct ModelConfig {
  std::size_t in_channels = kAugmentedChannels;
  std::vector<std::size_t> point_widths = {64, 128, 256};
  std::vector<std::size_t> head_widths = {128};
  std::size_t num_classes = 8;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct Prediction {
  std::vector<int> labels;
  std::vector<double> probabilities;  // [B, C]
  std::size_t num_classes = 0;

  double probability(std::size_t row, std::size_t cls) const { return probabilities[row * num_classes + cls]; }
};

class PointNetLite {
 public:
  PointNetLite() = default;
  PointNetLite(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t in_channels() const { return config_.in_channels; }
  std::size_t num_classes() const { return config_.num_classes; }

  // [B, N, in_channels] -> [B, num_classes] logits.
  Tensor forward(const Tensor& batch) const;
  Prediction predict(const Tensor& batch) const;

  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  // Deep copy whose parameters do not require gradients; use for attacks and
  // evaluation so concurrent tapes never touch shared gradient buffers.
  PointNetLite frozen() const;
  PointNetLite clone() const;

 private:
  PointNetLite copy(bool requires_grad) const;
  friend void save_checkpoint(const PointNetLite&, const std::filesystem::path&);
  friend PointNetLite load_checkpoint(const std::filesystem::path&);

  ModelConfig config_;
  std::vector<Linear> point_layers_;
  std::vector<Linear> head_layers_;
};

// Binary layout: "MAPRCKPT1", u32 point-layer count, u32 tensor count, then per
// tensor a u32 rank, u64 dims and little-endian f64 values.
void save_checkpoint(const PointNetLite& model, const std::filesystem::path& path);
PointNetLite load_checkpoint(const std::filesystem::path& path);
// Rejects checkpoints whose layer shapes differ from `expected`.
PointNetLite load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

// [B, N, 3] tensor of raw coordinates. All clouds must have equal size.
Tensor encode_raw(std::span<const PointCloud> clouds);
// [B, N, 20] tensor of augmented clouds.
Tensor encode_augmented(std::span<const PointCloud> clouds, std::span<const IntrinsicFeatures> phi);

}  // namespace mapr
