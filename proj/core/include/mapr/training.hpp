#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mapr/intrinsic.hpp"
#include "mapr/losses.hpp"
#include "mapr/model.hpp"
#include "mapr/optim.hpp"
#include "mapr/perturb.hpp"
#include "mapr/point_cloud.hpp"
#include "mapr/rng.hpp"

namespace mapr {

enum class TrainMode { kVanilla, kAt, kMapr, kIntrinsicOnly, kLipOnly };

std::string mode_name(TrainMode mode);
TrainMode parse_mode(const std::string& name);
// 20 for modes fed [X | phi], 3 otherwise.
std::size_t input_channels(TrainMode mode);
bool uses_consistency(TrainMode mode);

// Inner PGD-l2 attack used by adversarial training.
struct AtConfig {
  double epsilon = 0.05;
  int steps = 20;
  double step_size = 0.005;

  void validate() const;
};

struct TrainConfig {
  int epochs = 100;
  std::size_t batch_size = 12;
  double lr = 2e-3;
  double lr_decay = 0.7;
  int decay_every = 20;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kMapr;
  std::size_t graph_k = kDefaultGraphNeighbors;

  void validate() const;
  double lr_at(int epoch) const;
};

struct EpochMetrics {
  int epoch = 0;
  double loss_cls = 0.0;
  double loss_cons = 0.0;
  double lambda = 0.0;
  double train_acc = 0.0;
  double wall_ms = 0.0;

  std::string to_json() const;
};

// Labelled training clouds with the clean-view features cached when needed.
struct TrainingSet {
  std::vector<PointCloud> clouds;
  std::vector<int> labels;
  std::vector<IntrinsicFeatures> phi;  // empty for modes that never read phi

  static TrainingSet build(std::vector<PointCloud> clouds, TrainMode mode, std::size_t graph_k);
  std::size_t size() const { return clouds.size(); }
};

class Trainer {
 public:
  Trainer(PointNetLite& model, TrainConfig train, LossConfig loss = {}, PerturbConfig perturb = {}, AtConfig at = {});

  // One pass over the shuffled set. Epochs are counted from 1.
  EpochMetrics train_epoch(const TrainingSet& data, int epoch);

  // Runs every epoch; each metrics record is also appended to `metrics_path`
  // as one JSON line when given.
  std::vector<EpochMetrics> fit(const TrainingSet& data,
                                const std::optional<std::filesystem::path>& metrics_path = std::nullopt,
                                const std::function<void(const EpochMetrics&)>& on_epoch = {});

 private:
  struct BatchResult {
    double loss_cls = 0.0;
    double loss_cons = 0.0;
    std::size_t correct = 0;
  };
  BatchResult train_batch(const TrainingSet& data, std::span<const std::size_t> index, double lambda, int epoch,
                          std::size_t batch_no);

  PointNetLite& model_;
  TrainConfig train_;
  LossConfig loss_;
  PerturbConfig perturb_;
  AtConfig at_;
  Adam optimizer_;
  Rng shuffle_rng_;
  Rng perturb_rng_;
  Rng at_rng_;
};

}  // namespace mapr
