#include "mapr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mapr/attacks.hpp"
#include "mapr/classifier.hpp"
#include "mapr/error.hpp"

namespace mapr {

namespace {

struct ModeName {
  TrainMode mode;
  const char* name;
};

constexpr ModeName kModeNames[] = {{TrainMode::kVanilla, "vanilla"},
                                   {TrainMode::kAt, "at"},
                                   {TrainMode::kMapr, "mapr"},
                                   {TrainMode::kIntrinsicOnly, "intrinsic_only"},
                                   {TrainMode::kLipOnly, "lip_only"}};

std::vector<PointCloud> gather(const std::vector<PointCloud>& all, std::span<const std::size_t> index) {
  std::vector<PointCloud> out;
  out.reserve(index.size());
  for (auto i : index) out.push_back(all[i]);
  return out;
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t c = logits.dim(1);
  const auto d = logits.data();
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto row = d.subspan(r * c, c);
    if (std::max_element(row.begin(), row.end()) - row.begin() == labels[r]) ++correct;
  }
  return correct;
}

}  // namespace

std::string mode_name(TrainMode mode) {
  for (const auto& m : kModeNames)
    if (m.mode == mode) return m.name;
  throw ConfigError("unknown training mode");
}

TrainMode parse_mode(const std::string& name) {
  for (const auto& m : kModeNames)
    if (name == m.name) return m.mode;
  throw ConfigError("unknown training mode '" + name + "' (expected vanilla, at, mapr, intrinsic_only or lip_only)");
}

std::size_t input_channels(TrainMode mode) {
  return mode == TrainMode::kMapr || mode == TrainMode::kIntrinsicOnly ? kAugmentedChannels : 3;
}

bool uses_consistency(TrainMode mode) { return mode == TrainMode::kMapr || mode == TrainMode::kLipOnly; }

void AtConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("at: epsilon must be > 0");
  if (steps < 1) throw ConfigError("at: steps must be >= 1");
  if (!(step_size > 0.0)) throw ConfigError("at: step_size must be > 0");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train: lr_decay must lie in (0, 1]");
  if (decay_every < 1) throw ConfigError("train: decay_every must be >= 1");
  if (graph_k == 0) throw ConfigError("train: graph_k must be >= 1");
}

double TrainConfig::lr_at(int epoch) const { return lr * std::pow(lr_decay, (epoch - 1) / decay_every); }

std::string EpochMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["loss_cls"] = loss_cls;
  j["loss_cons"] = loss_cons;
  j["lambda"] = lambda;
  j["train_acc"] = train_acc;
  j["wall_ms"] = wall_ms;
  return j.dump();
}

TrainingSet TrainingSet::build(std::vector<PointCloud> clouds, TrainMode mode, std::size_t graph_k) {
  if (clouds.empty()) throw DataError("training set is empty");
  TrainingSet set;
  const std::size_t n = clouds.front().size();
  for (const auto& c : clouds) {
    if (!c.label) throw DataError("training cloud without a label");
    if (c.size() != n) throw DataError("training clouds must share one point count");
    set.labels.push_back(*c.label);
  }
  if (input_channels(mode) == kAugmentedChannels || uses_consistency(mode)) {
    set.phi.reserve(clouds.size());
    for (const auto& c : clouds) set.phi.push_back(intrinsic_map(c, graph_k));
  }
  set.clouds = std::move(clouds);
  return set;
}

Trainer::Trainer(PointNetLite& model, TrainConfig train, LossConfig loss, PerturbConfig perturb, AtConfig at)
    : model_(model),
      train_(train),
      loss_(loss),
      perturb_(perturb),
      at_(at),
      optimizer_(model.parameters(), AdamConfig{train.lr}),
      shuffle_rng_(derive_seed(train.seed, "shuffle")),
      perturb_rng_(derive_seed(train.seed, "perturb")),
      at_rng_(derive_seed(train.seed, "at")) {
  train_.validate();
  loss_.validate();
  perturb_.validate();
  at_.validate();
  if (model.in_channels() != input_channels(train_.mode)) {
    throw ConfigError("mode " + mode_name(train_.mode) + " needs a model with " +
                      std::to_string(input_channels(train_.mode)) + " input channels, got " +
                      std::to_string(model.in_channels()));
  }
}

Trainer::BatchResult Trainer::train_batch(const TrainingSet& data, std::span<const std::size_t> index, double lambda,
                                          int epoch, std::size_t batch_no) {
  const TrainMode mode = train_.mode;
  const bool augmented = input_channels(mode) == kAugmentedChannels;
  const std::vector<PointCloud> clouds = gather(data.clouds, index);
  std::vector<int> labels;
  std::vector<IntrinsicFeatures> phi;
  for (auto i : index) {
    labels.push_back(data.labels[i]);
    if (!data.phi.empty()) phi.push_back(data.phi[i]);
  }
  const Tensor x = augmented ? encode_augmented(clouds, phi) : encode_raw(clouds);

  // Perturbed view, only when the consistency term is live.
  const bool consistency = uses_consistency(mode) && lambda > 0.0;
  Tensor x_prime;
  std::vector<double> gaps;
  if (consistency) {
    std::vector<PointCloud> views;
    std::vector<IntrinsicFeatures> phi_prime;
    for (std::size_t b = 0; b < clouds.size(); ++b) {
      views.push_back(perturb(clouds[b], perturb_, perturb_rng_));
      phi_prime.push_back(intrinsic_map(views.back(), train_.graph_k));
      gaps.push_back(intrinsic_gap(phi[b], phi_prime.back()));
    }
    x_prime = augmented ? encode_augmented(views, phi_prime) : encode_raw(views);
  }

  Tensor x_adv;
  if (mode == TrainMode::kAt) {
    const Classifier frozen(model_, train_.graph_k);
    const auto adv = pgd_batch(frozen, clouds, labels, Norm::kL2, at_.epsilon, at_.steps, at_.step_size, false, at_rng_);
    x_adv = encode_raw(adv);
  }

  auto diverge = [&](double loss_cls, double loss_cons, double value) {
    spdlog::error("divergence: mode={} epoch={} batch={} loss_cls={} loss_cons={} lambda={} lr={}", mode_name(mode),
                  epoch, batch_no, loss_cls, loss_cons, lambda, optimizer_.lr());
    throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batch_no) + " (loss " + std::to_string(value) + ")");
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto finite = [](const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
  };

  model_.zero_grad();
  Tape tape;
  Tensor logits;
  Tensor ce;
  Tensor cons;
  Tensor total;
  {
    Tape::Scope scope(tape);
    // Non-finite logits would trip the softmax guards; report them as divergence.
    logits = model_.forward(x);
    if (!finite(logits)) diverge(nan, nan, nan);
    ce = cross_entropy(logits, labels);
    total = ce;
    if (mode == TrainMode::kAt) {
      const Tensor adv_logits = model_.forward(x_adv);
      if (!finite(adv_logits)) diverge(ce.item(), 0.0, nan);
      total = adversarial_training_loss(logits, adv_logits, labels, loss_.at_alpha);
    } else if (consistency) {
      const Tensor view_logits = model_.forward(x_prime);
      if (!finite(view_logits)) diverge(ce.item(), nan, nan);
      cons = consistency_loss(logits, view_logits, gaps, loss_.epsilon);
      total = add(ce, scale(cons, lambda));
    }
  }
  const double value = total.item();
  if (!std::isfinite(value)) diverge(ce.item(), cons.defined() ? cons.item() : 0.0, value);
  tape.backward(total);
  optimizer_.step();

  BatchResult r;
  r.loss_cls = ce.item();
  r.loss_cons = cons.defined() ? cons.item() : 0.0;
  r.correct = count_correct(logits, labels);
  return r;
}

EpochMetrics Trainer::train_epoch(const TrainingSet& data, int epoch) {
  if (data.size() == 0) throw DataError("training set is empty");
  if (epoch < 1) throw ConfigError("epochs are counted from 1");
  if ((input_channels(train_.mode) == kAugmentedChannels || uses_consistency(train_.mode)) && data.phi.empty()) {
    throw ConfigError("training set was built without intrinsic features for mode " + mode_name(train_.mode));
  }
  const auto start = std::chrono::steady_clock::now();
  optimizer_.set_lr(train_.lr_at(epoch));
  const double lambda = uses_consistency(train_.mode) ? lambda_schedule(epoch, loss_) : 0.0;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng_);

  EpochMetrics m;
  m.epoch = epoch;
  m.lambda = lambda;
  std::size_t correct = 0;
  std::size_t batches = 0;
  for (std::size_t lo = 0; lo < order.size(); lo += train_.batch_size) {
    const std::size_t hi = std::min(order.size(), lo + train_.batch_size);
    const BatchResult r = train_batch(data, std::span(order).subspan(lo, hi - lo), lambda, epoch, batches);
    m.loss_cls += r.loss_cls;
    m.loss_cons += r.loss_cons;
    correct += r.correct;
    ++batches;
  }
  m.loss_cls /= static_cast<double>(batches);
  m.loss_cons /= static_cast<double>(batches);
  m.train_acc = static_cast<double>(correct) / static_cast<double>(data.size());
  m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return m;
}

std::vector<EpochMetrics> Trainer::fit(const TrainingSet& data,
                                       const std::optional<std::filesystem::path>& metrics_path,
                                       const std::function<void(const EpochMetrics&)>& on_epoch) {
  std::ofstream log;
  if (metrics_path) {
    log.open(*metrics_path, std::ios::trunc);
    if (!log) throw DataError("cannot open metrics log: " + metrics_path->string());
  }
  std::vector<EpochMetrics> history;
  for (int e = 1; e <= train_.epochs; ++e) {
    history.push_back(train_epoch(data, e));
    if (log.is_open()) log << history.back().to_json() << '\n' << std::flush;
    if (on_epoch) on_epoch(history.back());
  }
  return history;
}

}  // namespace mapr
