#include "mapr/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mapr/diagnostics.hpp"
#include "mapr/error.hpp"
#include "mapr/rng.hpp"

namespace mapr {

namespace fs = std::filesystem;

namespace {

using json = nlohmann::ordered_json;

// Typed access to one JSON object that rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
    }
  }
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string path(const std::string& key) const { return path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<TrainMode> parse_modes(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected a list of mode names");
  std::vector<TrainMode> out;
  for (const auto& m : j) {
    if (!m.is_string()) throw ConfigError(where + ": mode names must be strings");
    out.push_back(parse_mode(m.get<std::string>()));
  }
  return out;
}

std::vector<std::string> mode_names(const std::vector<TrainMode>& modes) {
  std::vector<std::string> out;
  for (auto m : modes) out.push_back(mode_name(m));
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::size_t worker_count(std::size_t requested, std::size_t jobs) {
  std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// Runs job(i) for i in [0, count) on `threads` workers; rethrows the first failure.
template <typename Job>
void parallel_for(std::size_t count, std::size_t threads, Job&& job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  const std::size_t n = worker_count(threads, count);
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

std::span<const PointCloud> test_subset(const ExperimentConfig& cfg, const Dataset& data) {
  std::span<const PointCloud> test(data.test);
  if (cfg.eval.test_limit > 0 && cfg.eval.test_limit < test.size()) test = test.first(cfg.eval.test_limit);
  if (test.empty()) throw DataError("test split is empty");
  return test;
}

ModelConfig model_for(const ExperimentConfig& cfg, TrainMode mode, std::size_t classes) {
  ModelConfig m = cfg.model;
  m.in_channels = input_channels(mode);
  m.num_classes = classes;
  return m;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  for (auto k : kAllAttacks) attacks[k] = AttackConfig::defaults(k);
  train.epochs = 100;
}

void ExperimentConfig::validate() const {
  dataset.validate();
  model.validate();
  if (graph_k == 0) throw ConfigError("graph_k must be >= 1");
  if (dataset.points <= graph_k) throw ConfigError("dataset.points must exceed graph_k");
  train.validate();
  loss.validate();
  at.validate();
  perturb.validate();
  sor.validate();
  for (const auto& [kind, a] : attacks) {
    AttackConfig check = a;
    check.surrogate_count = std::max(eval.surrogates, check.surrogate_count);
    if (kind == AttackKind::kTpgd && eval.surrogates < 2 && !a.allow_single_surrogate &&
        std::find(eval.attacks.begin(), eval.attacks.end(), kind) != eval.attacks.end()) {
      throw ConfigError("eval.surrogates must be >= 2 for tpgd");
    }
    if (kind != AttackKind::kTpgd) check.validate();
  }
  if (eval.modes.empty()) throw ConfigError("eval.modes must not be empty");
  for (const auto& d : eval.defenses)
    if (d != "none" && d != "sor") throw ConfigError("eval.defenses: unknown defense '" + d + "'");
  if (eval.defenses.empty()) throw ConfigError("eval.defenses must not be empty");
  if (sweep.lambdas.empty()) throw ConfigError("sweep.lambdas must not be empty");
  for (double l : sweep.lambdas)
    if (!(l >= 0.0)) throw ConfigError("sweep.lambdas must be >= 0");
  for (auto m : sweep.modes)
    if (!uses_consistency(m)) throw ConfigError("sweep.modes: " + mode_name(m) + " has no consistency term");
}

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  {
    Section top(root, "config");
    top.get("seed", cfg.seed);
    if (top.has("data_dir")) cfg.data_dir = top.raw("data_dir").get<std::string>();
    top.get("graph_k", cfg.graph_k);
    if (top.has("dataset")) {
      Section s(top.raw("dataset"), "dataset");
      s.get("classes", cfg.dataset.classes);
      s.get("train_per_class", cfg.dataset.train_per_class);
      s.get("test_per_class", cfg.dataset.test_per_class);
      s.get("points", cfg.dataset.points);
      s.get("noise", cfg.dataset.noise);
    }
    if (top.has("model")) {
      Section s(top.raw("model"), "model");
      s.get("point_widths", cfg.model.point_widths);
      s.get("head_widths", cfg.model.head_widths);
    }
    if (top.has("train")) {
      Section s(top.raw("train"), "train");
      s.get("epochs", cfg.train.epochs);
      s.get("batch_size", cfg.train.batch_size);
      s.get("lr", cfg.train.lr);
      s.get("lr_decay", cfg.train.lr_decay);
      s.get("decay_every", cfg.train.decay_every);
    }
    if (top.has("loss")) {
      Section s(top.raw("loss"), "loss");
      s.get("lambda_max", cfg.loss.lambda_max);
      s.get("ramp_epochs", cfg.loss.ramp_epochs);
      s.get("epsilon", cfg.loss.epsilon);
      s.get("at_alpha", cfg.loss.at_alpha);
    }
    if (top.has("at")) {
      Section s(top.raw("at"), "at");
      s.get("epsilon", cfg.at.epsilon);
      s.get("steps", cfg.at.steps);
      s.get("step_size", cfg.at.step_size);
    }
    if (top.has("perturb")) {
      Section s(top.raw("perturb"), "perturb");
      s.get("max_rotation_deg", cfg.perturb.max_rotation_deg);
      s.get("jitter_sigma", cfg.perturb.jitter_sigma);
      s.get("jitter_clip", cfg.perturb.jitter_clip);
      std::string axis = "gravity";
      s.get("axis", axis);
      if (axis == "gravity") {
        cfg.perturb.axis = RotationAxis::kGravity;
      } else if (axis == "any") {
        cfg.perturb.axis = RotationAxis::kAny;
      } else {
        throw ConfigError("perturb.axis must be 'gravity' or 'any'");
      }
    }
    if (top.has("sor")) {
      Section s(top.raw("sor"), "sor");
      s.get("k", cfg.sor.k);
      s.get("alpha", cfg.sor.alpha);
    }
    if (top.has("attacks")) {
      const json& all = top.raw("attacks");
      if (!all.is_object()) throw ConfigError("attacks: expected an object keyed by attack name");
      for (const auto& [name, body] : all.items()) {
        const AttackKind kind = parse_attack(name);
        AttackConfig& a = cfg.attacks[kind];
        Section s(body, "attacks." + name);
        s.get("epsilon", a.epsilon);
        s.get("steps", a.steps);
        s.get("step_size", a.step_size);
        s.get("k_points", a.k_points);
        s.get("momentum", a.momentum);
        s.get("si_weight", a.si_weight);
        s.get("si_neighbors", a.si_neighbors);
        s.get("random_start", a.random_start);
        s.get("add_init_sigma", a.add_init_sigma);
        s.get("add_init_radius", a.add_init_radius);
      }
    }
    if (top.has("eval")) {
      Section s(top.raw("eval"), "eval");
      if (s.has("modes")) cfg.eval.modes = parse_modes(s.raw("modes"), "eval.modes");
      s.get("defenses", cfg.eval.defenses);
      if (s.has("attacks")) {
        std::vector<std::string> names;
        s.get("attacks", names);
        cfg.eval.attacks.clear();
        for (const auto& n : names) cfg.eval.attacks.push_back(parse_attack(n));
      }
      s.get("test_limit", cfg.eval.test_limit);
      s.get("surrogates", cfg.eval.surrogates);
      s.get("threads", cfg.eval.threads);
      s.get("lip_pairs", cfg.eval.lip_pairs);
      s.get("mu_clouds", cfg.eval.mu_clouds);
      s.get("lambda_from_sweep", cfg.eval.lambda_from_sweep);
      std::string fg = "through_features";
      s.get("feature_gradient", fg);
      if (fg == "through_features") {
        cfg.eval.feature_gradient = FeatureGradient::kThroughFeatures;
      } else if (fg == "coordinates_only") {
        cfg.eval.feature_gradient = FeatureGradient::kCoordinatesOnly;
      } else {
        throw ConfigError("eval.feature_gradient must be 'through_features' or 'coordinates_only'");
      }
    }
    if (top.has("sweep")) {
      Section s(top.raw("sweep"), "sweep");
      s.get("lambdas", cfg.sweep.lambdas);
      if (s.has("modes")) cfg.sweep.modes = parse_modes(s.raw("modes"), "sweep.modes");
    }
    if (top.has("ablation")) {
      Section s(top.raw("ablation"), "ablation");
      if (s.has("modes")) cfg.ablation_modes = parse_modes(s.raw("modes"), "ablation.modes");
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  return parse_config(text);
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  if (cfg.data_dir) j["data_dir"] = cfg.data_dir->string();
  j["graph_k"] = cfg.graph_k;
  j["dataset"] = {{"classes", cfg.dataset.classes},
                  {"train_per_class", cfg.dataset.train_per_class},
                  {"test_per_class", cfg.dataset.test_per_class},
                  {"points", cfg.dataset.points},
                  {"noise", cfg.dataset.noise}};
  j["model"] = {{"point_widths", cfg.model.point_widths}, {"head_widths", cfg.model.head_widths}};
  j["train"] = {{"epochs", cfg.train.epochs},     {"batch_size", cfg.train.batch_size},
                {"lr", cfg.train.lr},             {"lr_decay", cfg.train.lr_decay},
                {"decay_every", cfg.train.decay_every}};
  j["loss"] = {{"lambda_max", cfg.loss.lambda_max},
               {"ramp_epochs", cfg.loss.ramp_epochs},
               {"epsilon", cfg.loss.epsilon},
               {"at_alpha", cfg.loss.at_alpha}};
  j["at"] = {{"epsilon", cfg.at.epsilon}, {"steps", cfg.at.steps}, {"step_size", cfg.at.step_size}};
  j["perturb"] = {{"max_rotation_deg", cfg.perturb.max_rotation_deg},
                  {"jitter_sigma", cfg.perturb.jitter_sigma},
                  {"jitter_clip", cfg.perturb.jitter_clip},
                  {"axis", cfg.perturb.axis == RotationAxis::kGravity ? "gravity" : "any"}};
  j["sor"] = {{"k", cfg.sor.k}, {"alpha", cfg.sor.alpha}};
  json attacks;
  for (auto k : kAllAttacks) {
    const AttackConfig& a = cfg.attacks.at(k);
    attacks[attack_name(k)] = {{"epsilon", a.epsilon},
                               {"steps", a.steps},
                               {"step_size", a.step_size},
                               {"k_points", a.k_points},
                               {"momentum", a.momentum},
                               {"si_weight", a.si_weight},
                               {"si_neighbors", a.si_neighbors},
                               {"random_start", a.random_start},
                               {"add_init_sigma", a.add_init_sigma},
                               {"add_init_radius", a.add_init_radius}};
  }
  j["attacks"] = attacks;
  std::vector<std::string> attack_names;
  for (auto k : cfg.eval.attacks) attack_names.push_back(attack_name(k));
  j["eval"] = {{"modes", mode_names(cfg.eval.modes)},
               {"defenses", cfg.eval.defenses},
               {"attacks", attack_names},
               {"test_limit", cfg.eval.test_limit},
               {"surrogates", cfg.eval.surrogates},
               {"threads", cfg.eval.threads},
               {"feature_gradient", cfg.eval.feature_gradient == FeatureGradient::kThroughFeatures
                                        ? "through_features"
                                        : "coordinates_only"},
               {"lip_pairs", cfg.eval.lip_pairs},
               {"mu_clouds", cfg.eval.mu_clouds},
               {"lambda_from_sweep", cfg.eval.lambda_from_sweep}};
  j["sweep"] = {{"lambdas", cfg.sweep.lambdas}, {"modes", mode_names(cfg.sweep.modes)}};
  j["ablation"] = {{"modes", mode_names(cfg.ablation_modes)}};
  return j.dump(2) + "\n";
}

Dataset prepare_dataset(const ExperimentConfig& cfg) {
  if (cfg.data_dir) {
    Dataset d = load_dataset(*cfg.data_dir, cfg.dataset.points, derive_seed(cfg.seed, "ingest"));
    if (d.train.empty() || d.test.empty()) throw DataError("dataset needs both train and test clouds");
    return d;
  }
  DatasetConfig dc = cfg.dataset;
  dc.seed = derive_seed(cfg.seed, "dataset");
  return generate_dataset(dc);
}

TrainRequest default_request(const ExperimentConfig& cfg, TrainMode mode) {
  TrainRequest r;
  r.mode = mode;
  r.init_seed = derive_seed(cfg.seed, "init");
  r.train_seed = derive_seed(cfg.seed, "train");
  return r;
}

TrainRequest surrogate_request(const ExperimentConfig& cfg, std::size_t index) {
  TrainRequest r;
  r.mode = TrainMode::kVanilla;
  r.init_seed = derive_seed(cfg.seed, "surrogate_init", {index});
  r.train_seed = derive_seed(cfg.seed, "surrogate_train", {index});
  return r;
}

PointNetLite train_model(const ExperimentConfig& cfg, const Dataset& data, const TrainRequest& request) {
  PointNetLite model(model_for(cfg, request.mode, data.class_names.size()), request.init_seed);
  TrainConfig tc = cfg.train;
  tc.mode = request.mode;
  tc.seed = request.train_seed;
  tc.graph_k = cfg.graph_k;
  LossConfig lc = cfg.loss;
  if (request.lambda_max) lc.lambda_max = *request.lambda_max;
  Trainer trainer(model, tc, lc, cfg.perturb, cfg.at);
  const TrainingSet set = TrainingSet::build(data.train, request.mode, cfg.graph_k);
  const std::string name = mode_name(request.mode);
  trainer.fit(set, request.metrics_path, [&](const EpochMetrics& m) {
    spdlog::debug("{} epoch {} loss_cls={:.4f} loss_cons={:.4g} lambda={:.3f} acc={:.3f} ({:.0f} ms)", name, m.epoch,
                  m.loss_cls, m.loss_cons, m.lambda, m.train_acc, m.wall_ms);
    if (m.epoch == tc.epochs) spdlog::info("{}: trained {} epochs, train acc {:.3f}", name, m.epoch, m.train_acc);
  });
  return model;
}

double clean_accuracy(const Classifier& model, std::span<const PointCloud> clouds) {
  if (clouds.empty()) throw DataError("accuracy over an empty set");
  std::size_t correct = 0;
  for (const auto& c : clouds)
    if (model.predict(c) == c.label.value_or(-1)) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(clouds.size());
}

EvalReport evaluate_models(const ExperimentConfig& cfg, const Dataset& data, const std::vector<NamedModel>& models,
                           const std::vector<PointNetLite>& surrogates) {
  const auto test = test_subset(cfg, data);
  const std::size_t n_test = test.size();
  const std::size_t n_att = cfg.eval.attacks.size();
  const std::size_t n_def = cfg.eval.defenses.size();

  std::vector<Classifier> targets;
  for (const auto& m : models) targets.emplace_back(m.model, cfg.graph_k, cfg.eval.feature_gradient);
  std::vector<Classifier> surrogate_views;
  for (const auto& s : surrogates) surrogate_views.emplace_back(s, cfg.graph_k, cfg.eval.feature_gradient);

  // Per (model, sample): [defense] clean hit, [attack][defense] adversarial hit, [attack] failure.
  struct Cell {
    std::vector<char> clean;
    std::vector<char> adv;
    std::vector<char> failed;
  };
  std::vector<Cell> cells(models.size() * n_test);

  auto defended = [&](const Classifier& clf, const PointCloud& cloud, const std::string& defense) {
    return defense == "sor" ? clf.predict(sor_defense(cloud, cfg.sor)) : clf.predict(cloud);
  };

  parallel_for(cells.size(), cfg.eval.threads, [&](std::size_t job) {
    const std::size_t m = job / n_test;
    const std::size_t s = job % n_test;
    const Classifier& clf = targets[m];
    const PointCloud& cloud = test[s];
    const int label = cloud.label.value_or(-1);
    Cell& cell = cells[job];
    cell.clean.resize(n_def);
    cell.adv.assign(n_att * n_def, 0);
    cell.failed.assign(n_att, 0);
    for (std::size_t d = 0; d < n_def; ++d)
      cell.clean[d] = defended(clf, cloud, cfg.eval.defenses[d]) == label;
    for (std::size_t a = 0; a < n_att; ++a) {
      const AttackKind kind = cfg.eval.attacks[a];
      AttackConfig ac = cfg.attacks.at(kind);
      ac.surrogate_count = surrogate_views.size();
      ac.seed = derive_seed(cfg.seed, "attack", {static_cast<std::uint64_t>(kind), s});
      try {
        const AdversarialResult r = run_attack(ac, clf, surrogate_views, cloud, label);
        for (std::size_t d = 0; d < n_def; ++d) {
          const std::string& def = cfg.eval.defenses[d];
          const int pred = def == "none" ? r.adv_prediction : defended(clf, r.adv_cloud, def);
          cell.adv[a * n_def + d] = pred == label;
        }
      } catch (const std::exception& e) {
        spdlog::warn("{} / {} / sample {}: {}", models[m].name, attack_name(kind), s, e.what());
        cell.failed[a] = 1;
      }
    }
  });

  EvalReport report;
  report.seed = cfg.seed;
  report.test_samples = n_test;
  const double scale = 100.0 / static_cast<double>(n_test);
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (std::size_t d = 0; d < n_def; ++d) {
      EvalRow row;
      row.mode = models[m].name;
      row.defense = cfg.eval.defenses[d];
      std::size_t clean = 0;
      for (std::size_t s = 0; s < n_test; ++s) clean += cells[m * n_test + s].clean[d];
      row.clean = scale * static_cast<double>(clean);
      for (std::size_t a = 0; a < n_att; ++a) {
        std::size_t hits = 0;
        bool failed = false;
        for (std::size_t s = 0; s < n_test; ++s) {
          const Cell& c = cells[m * n_test + s];
          failed = failed || c.failed[a];
          hits += c.adv[a * n_def + d];
        }
        const auto col = static_cast<std::size_t>(
            std::find(kAllAttacks.begin(), kAllAttacks.end(), cfg.eval.attacks[a]) - kAllAttacks.begin());
        if (!failed) row.attacks[col] = scale * static_cast<double>(hits);
      }
      report.rows.push_back(row);
    }
  }

  // Diagnostics on held-out clouds, sharing pairs across models.
  for (std::size_t m = 0; m < models.size(); ++m) {
    ModelDiagnostics diag;
    if (cfg.eval.lip_pairs > 0 && test.size() >= 2) {
      const LipschitzStats lip = diagnostics_lipschitz(targets[m], test, cfg.eval.lip_pairs, cfg.perturb,
                                                       derive_seed(cfg.seed, "lipschitz"), cfg.loss.epsilon);
      diag.lip_max = lip.max;
      diag.lip_mean = lip.mean;
      diag.lip_p50 = lip.p50;
      diag.lip_p90 = lip.p90;
      diag.lip_p99 = lip.p99;
      diag.pairs = lip.pairs;
    }
    std::vector<double> mu;
    for (std::size_t s = 0; s < std::min(cfg.eval.mu_clouds, test.size()); ++s)
      mu.push_back(diagnostics_mu(targets[m], test[s]));
    if (!mu.empty()) {
      std::sort(mu.begin(), mu.end());
      diag.mu_median = mu[mu.size() / 2];
    }
    report.diagnostics[models[m].name] = diag;
  }
  return report;
}

namespace {

std::vector<PointNetLite> obtain_surrogates(const ExperimentConfig& cfg, const Dataset& data, const fs::path& out_dir,
                                            const std::optional<fs::path>& checkpoint_dir) {
  std::vector<PointNetLite> out;
  if (std::find(cfg.eval.attacks.begin(), cfg.eval.attacks.end(), AttackKind::kTpgd) == cfg.eval.attacks.end())
    return out;
  for (std::size_t i = 0; i < cfg.eval.surrogates; ++i) {
    const std::string file = "surrogate_" + std::to_string(i) + ".ckpt";
    if (checkpoint_dir) {
      out.push_back(load_checkpoint(*checkpoint_dir / file, model_for(cfg, TrainMode::kVanilla, data.class_names.size())));
      continue;
    }
    TrainRequest req = surrogate_request(cfg, i);
    req.metrics_path = out_dir / ("surrogate_" + std::to_string(i) + "_metrics.ndjson");
    out.push_back(train_model(cfg, data, req));
    save_checkpoint(out.back(), out_dir / file);
  }
  return out;
}

}  // namespace

EvalReport run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                          const std::optional<fs::path>& checkpoint_dir) {
  cfg.validate();
  ensure_dir(out_dir);
  write_text(out_dir / "config.json", config_to_json(cfg));
  const Dataset data = prepare_dataset(cfg);
  spdlog::info("dataset: {} train, {} test, {} classes", data.train.size(), data.test.size(), data.class_names.size());

  std::optional<double> swept;
  if (cfg.eval.lambda_from_sweep && !checkpoint_dir) {
    const SweepResult sweep = run_sweep(cfg, out_dir);
    swept = sweep.lambdas[sweep.best_index(0)];
    spdlog::info("selected lambda_max = {} by clean accuracy", *swept);
  }

  std::vector<NamedModel> models;
  for (TrainMode mode : cfg.eval.modes) {
    const std::string name = mode_name(mode);
    const fs::path file = name + ".ckpt";
    if (checkpoint_dir) {
      models.push_back({name, load_checkpoint(*checkpoint_dir / file, model_for(cfg, mode, data.class_names.size()))});
      continue;
    }
    TrainRequest req = default_request(cfg, mode);
    if (uses_consistency(mode)) req.lambda_max = swept;
    req.metrics_path = out_dir / (name + "_metrics.ndjson");
    models.push_back({name, train_model(cfg, data, req)});
    save_checkpoint(models.back().model, out_dir / file);
  }
  const std::vector<PointNetLite> surrogates = obtain_surrogates(cfg, data, out_dir, checkpoint_dir);

  const EvalReport report = evaluate_models(cfg, data, models, surrogates);
  write_text(out_dir / "report.csv", report.to_csv());
  write_text(out_dir / "report.json", report.to_json());
  write_text(out_dir / "attack_bars.csv", attack_bar_csv(report));
  return report;
}

SweepResult run_sweep(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  ensure_dir(out_dir);
  const Dataset data = prepare_dataset(cfg);
  const auto test = test_subset(cfg, data);
  SweepResult sweep;
  sweep.modes = mode_names(cfg.sweep.modes);
  sweep.lambdas = cfg.sweep.lambdas;
  for (double lambda : cfg.sweep.lambdas) {
    std::vector<double> row;
    for (TrainMode mode : cfg.sweep.modes) {
      TrainRequest req = default_request(cfg, mode);
      req.lambda_max = lambda;
      const PointNetLite model = train_model(cfg, data, req);
      row.push_back(clean_accuracy(Classifier(model, cfg.graph_k), test));
      spdlog::info("sweep {} lambda_max={}: clean {:.2f}%", mode_name(mode), lambda, row.back());
    }
    sweep.clean_acc.push_back(std::move(row));
  }
  write_text(out_dir / "sweep.json", sweep.to_json());
  write_sweep_plots(sweep, out_dir);
  return sweep;
}

EvalReport run_ablation(const ExperimentConfig& cfg, const fs::path& out_dir) {
  ExperimentConfig ab = cfg;
  ab.eval.modes = cfg.ablation_modes;
  ab.eval.defenses = {"none"};
  return run_experiment(ab, out_dir);
}

void write_sweep_plots(const SweepResult& sweep, const fs::path& out_dir, const std::string& stem) {
  ensure_dir(out_dir);
  write_text(out_dir / (stem + ".csv"), sweep_plot_csv(sweep));
  write_text(out_dir / (stem + "_best.csv"), sweep_best_csv(sweep));
}

}  // namespace mapr
