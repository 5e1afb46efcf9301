#include "mapr/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mapr/error.hpp"

namespace mapr {

namespace {

using json = nlohmann::ordered_json;

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string cell(const std::optional<double>& v) { return v ? fixed(*v) : "ERR"; }

std::string row_label(const EvalRow& r) { return r.defense == "none" ? r.mode : r.mode + "+" + r.defense; }

json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::optional<double> EvalRow::average() const {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& a : attacks) {
    if (a) {
      total += *a;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return total / static_cast<double>(count);
}

const EvalRow* EvalReport::find(const std::string& mode, const std::string& defense) const {
  for (const auto& r : rows)
    if (r.mode == mode && r.defense == defense) return &r;
  return nullptr;
}

const EvalRow& EvalReport::at(const std::string& mode, const std::string& defense) const {
  const EvalRow* r = find(mode, defense);
  if (!r) throw DataError("report has no row for " + mode + "/" + defense);
  return *r;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "mode,defense,clean";
  for (auto k : kAllAttacks) out << ',' << attack_name(k);
  out << ",avg\n";
  for (const auto& r : rows) {
    out << r.mode << ',' << r.defense << ',' << fixed(r.clean);
    for (const auto& a : r.attacks) out << ',' << cell(a);
    out << ',' << cell(r.average()) << '\n';
  }
  return out.str();
}

std::string EvalReport::to_json() const {
  json j;
  j["seed"] = seed;
  j["test_samples"] = test_samples;
  json attacks = json::array();
  for (auto k : kAllAttacks) attacks.push_back(attack_name(k));
  j["attacks"] = attacks;
  json rows_j = json::array();
  for (const auto& r : rows) {
    json row;
    row["mode"] = r.mode;
    row["defense"] = r.defense;
    row["clean"] = r.clean;
    json cells;
    for (std::size_t a = 0; a < kAllAttacks.size(); ++a) cells[attack_name(kAllAttacks[a])] = nullable(r.attacks[a]);
    row["attacks"] = cells;
    row["avg"] = nullable(r.average());
    rows_j.push_back(row);
  }
  j["rows"] = rows_j;
  json diag = json::object();
  for (const auto& [mode, d] : diagnostics) {
    diag[mode] = {{"lip_max", d.lip_max}, {"lip_mean", d.lip_mean}, {"lip_p50", d.lip_p50},
                  {"lip_p90", d.lip_p90}, {"lip_p99", d.lip_p99},   {"mu_median", std::isfinite(d.mu_median) ? json(d.mu_median) : json(nullptr)},
                  {"pairs", d.pairs}};
  }
  j["diagnostics"] = diag;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    r.seed = j.at("seed").get<std::uint64_t>();
    r.test_samples = j.at("test_samples").get<std::size_t>();
    for (const auto& row : j.at("rows")) {
      EvalRow e;
      e.mode = row.at("mode").get<std::string>();
      e.defense = row.at("defense").get<std::string>();
      e.clean = row.at("clean").get<double>();
      for (std::size_t a = 0; a < kAllAttacks.size(); ++a) {
        const auto& v = row.at("attacks").at(attack_name(kAllAttacks[a]));
        if (!v.is_null()) e.attacks[a] = v.get<double>();
      }
      r.rows.push_back(std::move(e));
    }
    if (j.contains("diagnostics")) {
      for (const auto& [mode, d] : j.at("diagnostics").items()) {
        ModelDiagnostics m;
        m.lip_max = d.at("lip_max").get<double>();
        m.lip_mean = d.at("lip_mean").get<double>();
        m.lip_p50 = d.at("lip_p50").get<double>();
        m.lip_p90 = d.at("lip_p90").get<double>();
        m.lip_p99 = d.at("lip_p99").get<double>();
        m.mu_median = d.at("mu_median").is_null() ? INFINITY : d.at("mu_median").get<double>();
        m.pairs = d.at("pairs").get<std::size_t>();
        r.diagnostics[mode] = m;
      }
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report JSON: ") + e.what());
  }
  return r;
}

std::size_t SweepResult::best_index(std::size_t mode) const {
  if (lambdas.empty()) throw DataError("sweep has no lambda values");
  std::size_t best = 0;
  for (std::size_t i = 1; i < lambdas.size(); ++i)
    if (clean_acc[i][mode] > clean_acc[best][mode]) best = i;
  return best;
}

std::string SweepResult::to_json() const {
  json j;
  j["modes"] = modes;
  j["lambdas"] = lambdas;
  j["clean_acc"] = clean_acc;
  return j.dump(2) + "\n";
}

SweepResult SweepResult::from_json(const std::string& text) {
  SweepResult s;
  try {
    const json j = json::parse(text);
    s.modes = j.at("modes").get<std::vector<std::string>>();
    s.lambdas = j.at("lambdas").get<std::vector<double>>();
    s.clean_acc = j.at("clean_acc").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed sweep JSON: ") + e.what());
  }
  if (s.clean_acc.size() != s.lambdas.size()) throw DataError("sweep JSON: one accuracy row per lambda expected");
  for (const auto& row : s.clean_acc)
    if (row.size() != s.modes.size()) throw DataError("sweep JSON: one accuracy per mode expected");
  return s;
}

std::string sweep_plot_csv(const SweepResult& sweep) {
  if (sweep.lambdas.empty() || sweep.modes.empty()) throw DataError("cannot plot an empty sweep");
  std::ostringstream out;
  out << "lambda";
  for (const auto& m : sweep.modes) out << ',' << m;
  out << '\n';
  for (std::size_t i = 0; i < sweep.lambdas.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", sweep.lambdas[i]);
    out << buf;
    for (double v : sweep.clean_acc[i]) out << ',' << fixed(v);
    out << '\n';
  }
  return out.str();
}

std::string sweep_best_csv(const SweepResult& sweep) {
  if (sweep.lambdas.empty() || sweep.modes.empty()) throw DataError("cannot plot an empty sweep");
  std::ostringstream out;
  out << "mode,lambda,clean_acc,best\n";
  for (std::size_t m = 0; m < sweep.modes.size(); ++m) {
    const std::size_t best = sweep.best_index(m);
    for (std::size_t i = 0; i < sweep.lambdas.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", sweep.lambdas[i]);
      out << sweep.modes[m] << ',' << buf << ',' << fixed(sweep.clean_acc[i][m]) << ','
          << (i == best ? "true" : "false") << '\n';
    }
  }
  return out.str();
}

std::string attack_bar_csv(const EvalReport& report) {
  if (report.rows.empty()) throw DataError("report has no rows");
  std::ostringstream out;
  out << "attack";
  for (const auto& r : report.rows) out << ',' << row_label(r);
  out << "\nclean";
  for (const auto& r : report.rows) out << ',' << fixed(r.clean);
  out << '\n';
  for (std::size_t a = 0; a < kAllAttacks.size(); ++a) {
    out << attack_name(kAllAttacks[a]);
    for (const auto& r : report.rows) out << ',' << cell(r.attacks[a]);
    out << '\n';
  }
  out << "avg";
  for (const auto& r : report.rows) out << ',' << cell(r.average());
  out << '\n';
  return out.str();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace mapr
