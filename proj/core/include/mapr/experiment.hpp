#pragma once

// JSON-configured training and evaluation runs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mapr/attacks.hpp"
#include "mapr/classifier.hpp"
#include "mapr/dataset.hpp"
#include "mapr/losses.hpp"
#include "mapr/model.hpp"
#include "mapr/perturb.hpp"
#include "mapr/report.hpp"
#include "mapr/training.hpp"

namespace mapr {

inline const std::vector<double> kLambdaGrid = {0.1, 0.25, 0.5, 1.0, 1.5, 2.0};

struct EvalSettings {
  std::vector<TrainMode> modes = {TrainMode::kVanilla, TrainMode::kAt, TrainMode::kMapr};
  std::vector<std::string> defenses = {"none", "sor"};
  std::vector<AttackKind> attacks = {kAllAttacks.begin(), kAllAttacks.end()};
  std::size_t test_limit = 0;  // 0 = whole test split
  std::size_t surrogates = 2;  // vanilla models trained for T-PGD
  std::size_t threads = 0;     // 0 = hardware concurrency
  FeatureGradient feature_gradient = FeatureGradient::kThroughFeatures;
  std::size_t lip_pairs = 64;
  std::size_t mu_clouds = 8;
  bool lambda_from_sweep = false;
};

struct SweepSettings {
  std::vector<double> lambdas = kLambdaGrid;
  std::vector<TrainMode> modes = {TrainMode::kMapr};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> data_dir;
  DatasetConfig dataset;
  ModelConfig model;  // in_channels and num_classes are filled per run
  std::size_t graph_k = kDefaultGraphNeighbors;
  TrainConfig train;  // mode and seed are filled per run
  LossConfig loss;
  AtConfig at;
  PerturbConfig perturb;
  SorConfig sor;
  std::map<AttackKind, AttackConfig> attacks;  // every kind present
  EvalSettings eval;
  SweepSettings sweep;
  std::vector<TrainMode> ablation_modes = {TrainMode::kVanilla, TrainMode::kIntrinsicOnly, TrainMode::kLipOnly,
                                           TrainMode::kMapr};

  ExperimentConfig();
  void validate() const;
};

// Parses JSON text on top of the defaults. Unknown keys are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Effective configuration as JSON, for run snapshots.
std::string config_to_json(const ExperimentConfig& cfg);

// Loads cfg.data_dir when set, otherwise generates the synthetic set.
Dataset prepare_dataset(const ExperimentConfig& cfg);

struct TrainRequest {
  TrainMode mode = TrainMode::kMapr;
  std::uint64_t init_seed = 0;
  std::uint64_t train_seed = 0;
  std::optional<double> lambda_max;
  std::optional<std::filesystem::path> metrics_path;
};

// Standard seeds: every mode shares one initialization and one batch order.
TrainRequest default_request(const ExperimentConfig& cfg, TrainMode mode);
TrainRequest surrogate_request(const ExperimentConfig& cfg, std::size_t index);

PointNetLite train_model(const ExperimentConfig& cfg, const Dataset& data, const TrainRequest& request);

struct NamedModel {
  std::string name;
  PointNetLite model;
};

// Clean and adversarial accuracy of every model against every configured
// attack, with and without each defense, plus diagnostics.
EvalReport evaluate_models(const ExperimentConfig& cfg, const Dataset& data, const std::vector<NamedModel>& models,
                           const std::vector<PointNetLite>& surrogates);

double clean_accuracy(const Classifier& model, std::span<const PointCloud> clouds);

// Trains cfg.eval.modes (or loads <checkpoint_dir>/<mode>.ckpt), evaluates,
// and writes report.csv, report.json, attack_bars.csv, checkpoints and
// metrics under out_dir.
EvalReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                          const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt);

// Clean accuracy per (lambda, mode); writes sweep.json and plot CSVs.
SweepResult run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

// run_experiment over the ablation modes without defenses.
EvalReport run_ablation(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

// Writes <stem>.csv and <stem>_best.csv for a sweep, attack_bars.csv for a report.
void write_sweep_plots(const SweepResult& sweep, const std::filesystem::path& out_dir,
                       const std::string& stem = "sweep_plot");

}  // namespace mapr
