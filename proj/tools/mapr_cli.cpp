// mapr: command-line front end for dataset generation, training, attacks and
// evaluation runs.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if __has_include(<CLI/CLI.hpp>)
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mapr/attacks.hpp"
#include "mapr/classifier.hpp"
#include "mapr/dataset.hpp"
#include "mapr/error.hpp"
#include "mapr/experiment.hpp"
#include "mapr/report.hpp"
#include "mapr/rng.hpp"

namespace fs = std::filesystem;
using namespace mapr;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string data;
  std::optional<int> epochs;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> test_limit;
  std::optional<double> lambda_max;
};

void add_common(CLI::App* cmd, Common& c, bool needs_data_flag = true) {
  cmd->add_option("--config", c.config, "experiment JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed")->required();
  if (needs_data_flag) cmd->add_option("--data", c.data, "dataset directory (default: generate in memory)");
  cmd->add_option("--epochs", c.epochs, "override train.epochs");
  cmd->add_option("--threads", c.threads, "override eval.threads");
  cmd->add_option("--test-limit", c.test_limit, "override eval.test_limit");
  cmd->add_option("--lambda-max", c.lambda_max, "override loss.lambda_max");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  cfg.seed = c.seed;
  if (!c.data.empty()) cfg.data_dir = c.data;
  if (c.epochs) cfg.train.epochs = *c.epochs;
  if (c.threads) cfg.eval.threads = *c.threads;
  if (c.test_limit) cfg.eval.test_limit = *c.test_limit;
  if (c.lambda_max) cfg.loss.lambda_max = *c.lambda_max;
  cfg.validate();
  return cfg;
}

std::vector<TrainMode> parse_mode_list(const std::vector<std::string>& names) {
  std::vector<TrainMode> out;
  for (const auto& n : names) out.push_back(parse_mode(n));
  return out;
}

void print_report(const EvalReport& report) { std::cout << report.to_csv(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Manifold-aligned point cloud recognition: training, attacks and evaluation"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset as PCX files plus a manifest");
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--config", gen_config, "experiment JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--seed", gen_seed, "master seed")->required();
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train one model and save its checkpoint");
  Common train_c;
  std::string train_mode, train_out, train_metrics;
  add_common(train, train_c);
  train->add_option("--mode", train_mode, "vanilla, at, mapr, intrinsic_only or lip_only")->required();
  train->add_option("--out", train_out, "checkpoint path")->required();
  train->add_option("--metrics", train_metrics, "NDJSON epoch log path");

  // attack
  auto* attack = app.add_subcommand("attack", "attack one cloud with a trained model");
  Common attack_c;
  std::string attack_ckpt, attack_name_s, attack_input, attack_out;
  std::vector<std::string> attack_surrogates;
  std::optional<int> attack_label;
  std::size_t attack_index = 0;
  add_common(attack, attack_c);
  attack->add_option("--checkpoint", attack_ckpt, "target model checkpoint")->required()->check(CLI::ExistingFile);
  attack->add_option("--attack", attack_name_s, "sma_drop, pgd_l2, pgd_linf, fgsm, bim, add_k, tpgd or sipgd")
      ->required();
  attack->add_option("--input", attack_input, "PCX cloud to attack (otherwise a test cloud by --index)");
  attack->add_option("--label", attack_label, "true label of --input");
  attack->add_option("--index", attack_index, "index into the test split");
  attack->add_option("--surrogate", attack_surrogates, "surrogate checkpoint for tpgd (repeatable)");
  attack->add_option("--out", attack_out, "adversarial cloud output (PCX)")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "train the configured modes and evaluate them against every attack");
  Common eval_c;
  std::string eval_out, eval_ckpts;
  std::vector<std::string> eval_modes;
  add_common(eval, eval_c);
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_option("--checkpoints", eval_ckpts, "evaluate <dir>/<mode>.ckpt instead of training");
  eval->add_option("--modes", eval_modes, "override eval.modes")->delimiter(',');

  // sweep-lambda
  auto* sweep = app.add_subcommand("sweep-lambda", "clean accuracy over the lambda_max grid");
  Common sweep_c;
  std::string sweep_out;
  add_common(sweep, sweep_c);
  sweep->add_option("--out", sweep_out, "output directory")->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "vanilla, intrinsic-only, lip-only and full models, no defense");
  Common ablate_c;
  std::string ablate_out;
  add_common(ablate, ablate_c);
  ablate->add_option("--out", ablate_out, "output directory")->required();

  // report
  auto* report = app.add_subcommand("report", "plot-ready CSVs from report.json and/or sweep.json");
  std::string report_in, report_out;
  report->add_option("--input", report_in, "run directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", report_out, "output directory (default: --input)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kConfigError);
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("mapr"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*gen) {
      ExperimentConfig cfg = load_config(gen_config);
      cfg.seed = gen_seed;
      DatasetConfig dc = cfg.dataset;
      dc.seed = derive_seed(cfg.seed, "dataset");
      const Dataset data = generate_dataset(dc);
      write_dataset(data, gen_out);
      spdlog::info("wrote {} clouds to {}", data.train.size() + data.test.size(), gen_out);
    } else if (*train) {
      const ExperimentConfig cfg = resolve(train_c);
      const Dataset data = prepare_dataset(cfg);
      TrainRequest req = default_request(cfg, parse_mode(train_mode));
      if (!train_metrics.empty()) req.metrics_path = train_metrics;
      const PointNetLite model = train_model(cfg, data, req);
      save_checkpoint(model, train_out);
      std::printf("clean_acc %.4f\n", clean_accuracy(Classifier(model, cfg.graph_k), data.test));
    } else if (*attack) {
      const ExperimentConfig cfg = resolve(attack_c);
      const AttackKind kind = parse_attack(attack_name_s);
      PointCloud cloud;
      int label = 0;
      if (!attack_input.empty()) {
        if (!attack_label) throw ConfigError("--input needs --label");
        cloud = ingest(attack_input, cfg.dataset.points, derive_seed(cfg.seed, "ingest"));
        label = *attack_label;
      } else {
        const Dataset data = prepare_dataset(cfg);
        if (attack_index >= data.test.size()) throw ConfigError("--index is outside the test split");
        cloud = data.test[attack_index];
        label = cloud.label.value_or(0);
      }
      const Classifier target(load_checkpoint(attack_ckpt), cfg.graph_k, cfg.eval.feature_gradient);
      std::vector<Classifier> surrogates;
      for (const auto& s : attack_surrogates) surrogates.emplace_back(load_checkpoint(s), cfg.graph_k);
      AttackConfig ac = cfg.attacks.at(kind);
      ac.surrogate_count = surrogates.size();
      ac.seed = derive_seed(cfg.seed, "attack", {static_cast<std::uint64_t>(kind), attack_index});
      const AdversarialResult r = run_attack(ac, target, surrogates, cloud, label);
      write_pcx(attack_out, r.adv_cloud);
      std::printf("{\"attack\":\"%s\",\"label\":%d,\"clean_prediction\":%d,\"adv_prediction\":%d,"
                  "\"success\":%s,\"perturbation_norm\":%.17g,\"points\":%zu}\n",
                  attack_name(kind).c_str(), label, r.clean_prediction, r.adv_prediction,
                  r.success ? "true" : "false", r.perturbation_norm, r.adv_cloud.size());
    } else if (*eval) {
      ExperimentConfig cfg = resolve(eval_c);
      if (!eval_modes.empty()) cfg.eval.modes = parse_mode_list(eval_modes);
      std::optional<fs::path> ckpts;
      if (!eval_ckpts.empty()) ckpts = eval_ckpts;
      print_report(run_experiment(cfg, eval_out, ckpts));
    } else if (*sweep) {
      const SweepResult s = run_sweep(resolve(sweep_c), sweep_out);
      std::cout << sweep_plot_csv(s);
    } else if (*ablate) {
      print_report(run_ablation(resolve(ablate_c), ablate_out));
    } else if (*report) {
      const fs::path in = report_in;
      const fs::path out = report_out.empty() ? in : fs::path(report_out);
      fs::create_directories(out);
      bool any = false;
      if (fs::exists(in / "report.json")) {
        const EvalReport r = EvalReport::from_json(read_text(in / "report.json"));
        write_text(out / "report.csv", r.to_csv());
        write_text(out / "attack_bars.csv", attack_bar_csv(r));
        any = true;
      }
      if (fs::exists(in / "sweep.json")) {
        write_sweep_plots(SweepResult::from_json(read_text(in / "sweep.json")), out);
        any = true;
      }
      if (!any) throw DataError("no report.json or sweep.json in " + in.string());
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return static_cast<int>(ExitCode::kSuccess);
}
