#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mapr/attacks.hpp"

namespace mapr {

// One (mode, defense) row. Accuracies are percentages; a missing attack cell
// means that attack failed and is written as ERR.
struct EvalRow {
  std::string mode;
  std::string defense;  // "none" or "sor"
  double clean = 0.0;
  std::array<std::optional<double>, kAllAttacks.size()> attacks{};

  // Mean over the attack columns that succeeded; nullopt when all failed.
  std::optional<double> average() const;
};

struct ModelDiagnostics {
  double lip_max = 0.0;
  double lip_mean = 0.0;
  double lip_p50 = 0.0;
  double lip_p90 = 0.0;
  double lip_p99 = 0.0;
  double mu_median = 0.0;
  std::size_t pairs = 0;
};

struct EvalReport {
  std::uint64_t seed = 0;
  std::size_t test_samples = 0;
  std::vector<EvalRow> rows;
  std::map<std::string, ModelDiagnostics> diagnostics;  // keyed by mode

  const EvalRow* find(const std::string& mode, const std::string& defense) const;
  const EvalRow& at(const std::string& mode, const std::string& defense) const;

  // mode,defense,clean,<attacks...>,avg
  std::string to_csv() const;
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

struct SweepResult {
  std::vector<std::string> modes;
  std::vector<double> lambdas;
  std::vector<std::vector<double>> clean_acc;  // [lambda][mode], percent

  // Index of the highest clean accuracy for a mode; ties go to the smaller lambda.
  std::size_t best_index(std::size_t mode) const;

  std::string to_json() const;
  static SweepResult from_json(const std::string& text);
};

// lambda,<mode...> with one row per lambda.
std::string sweep_plot_csv(const SweepResult& sweep);
// mode,lambda,clean_acc,best with best=true on exactly one row per mode.
std::string sweep_best_csv(const SweepResult& sweep);
// attack,<mode[+sor]...>: one row per column of the report (clean, attacks, avg).
std::string attack_bar_csv(const EvalReport& report);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace mapr
