#include "mapr/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mapr/error.hpp"

namespace mapr {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

using PartSampler = std::function<Vec3(Rng&)>;

struct Part {
  double area;
  PartSampler sample;
};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Vec3 unit_direction(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Vec3 v{g(rng), g(rng), g(rng)};
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (len > 1e-12) return {v[0] / len, v[1] / len, v[2] / len};
  }
}

Vec3 lerp3(const Vec3& a, const Vec3& b, const Vec3& c, double u, double v) {
  // Uniform point in a triangle.
  const double su = std::sqrt(u);
  const double wa = 1.0 - su;
  const double wb = su * (1.0 - v);
  const double wc = su * v;
  return {wa * a[0] + wb * b[0] + wc * c[0], wa * a[1] + wb * b[1] + wc * c[1], wa * a[2] + wb * b[2] + wc * c[2]};
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const Vec3 v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const Vec3 x{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
  return 0.5 * std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
}

Part triangle(const Vec3& a, const Vec3& b, const Vec3& c) {
  return {triangle_area(a, b, c), [a, b, c](Rng& rng) { return lerp3(a, b, c, uniform(rng, 0, 1), uniform(rng, 0, 1)); }};
}

Part disk(double r, double z) {
  return {kPi * r * r, [r, z](Rng& rng) {
            const double rho = r * std::sqrt(uniform(rng, 0, 1));
            const double t = uniform(rng, 0, 2 * kPi);
            return Vec3{rho * std::cos(t), rho * std::sin(t), z};
          }};
}

Part tube(double r, double z0, double z1) {
  return {2 * kPi * r * (z1 - z0), [r, z0, z1](Rng& rng) {
            const double t = uniform(rng, 0, 2 * kPi);
            return Vec3{r * std::cos(t), r * std::sin(t), uniform(rng, z0, z1)};
          }};
}

// Hemisphere of radius r centred at height z, pointing up (+1) or down (-1).
Part hemisphere(double r, double z, double side) {
  return {2 * kPi * r * r, [r, z, side](Rng& rng) {
            Vec3 d = unit_direction(rng);
            d[2] = side * std::abs(d[2]);
            return Vec3{r * d[0], r * d[1], z + r * d[2]};
          }};
}

std::vector<Part> box_parts(double sx, double sy, double sz) {
  std::vector<Part> parts;
  const double h[3] = {sx / 2, sy / 2, sz / 2};
  for (int axis = 0; axis < 3; ++axis) {
    const int a = (axis + 1) % 3;
    const int b = (axis + 2) % 3;
    for (double side : {-1.0, 1.0}) {
      parts.push_back({4 * h[a] * h[b], [=](Rng& rng) {
                         Vec3 p{};
                         p[axis] = side * h[axis];
                         p[a] = uniform(rng, -h[a], h[a]);
                         p[b] = uniform(rng, -h[b], h[b]);
                         return p;
                       }});
    }
  }
  return parts;
}

std::vector<Part> shape_parts(const std::string& shape, Rng& rng) {
  if (shape == "sphere") {
    const Vec3 s{uniform(rng, 0.95, 1.05), uniform(rng, 0.95, 1.05), uniform(rng, 0.95, 1.05)};
    return {{1.0, [s](Rng& r) {
               const Vec3 d = unit_direction(r);
               return Vec3{s[0] * d[0], s[1] * d[1], s[2] * d[2]};
             }}};
  }
  if (shape == "ellipsoid") {
    const Vec3 s{1.0, uniform(rng, 0.45, 0.75), uniform(rng, 0.3, 0.6)};
    return {{1.0, [s](Rng& r) {
               const Vec3 d = unit_direction(r);
               return Vec3{s[0] * d[0], s[1] * d[1], s[2] * d[2]};
             }}};
  }
  if (shape == "cube") return box_parts(uniform(rng, 0.85, 1.15), uniform(rng, 0.85, 1.15), uniform(rng, 0.85, 1.15));
  if (shape == "cylinder") {
    const double r = uniform(rng, 0.35, 0.6);
    const double h = uniform(rng, 1.2, 2.0);
    return {tube(r, -h / 2, h / 2), disk(r, -h / 2), disk(r, h / 2)};
  }
  if (shape == "capsule") {
    const double r = uniform(rng, 0.3, 0.45);
    const double len = uniform(rng, 0.8, 1.4);
    return {tube(r, -len / 2, len / 2), hemisphere(r, len / 2, 1.0), hemisphere(r, -len / 2, -1.0)};
  }
  if (shape == "cone") {
    const double r = uniform(rng, 0.5, 0.9);
    const double h = uniform(rng, 1.0, 1.6);
    const double slant = std::sqrt(r * r + h * h);
    Part lateral{kPi * r * slant, [r, h](Rng& g) {
                   // Density grows linearly with distance from the apex.
                   const double u = std::sqrt(uniform(g, 0, 1));
                   const double t = uniform(g, 0, 2 * kPi);
                   return Vec3{r * u * std::cos(t), r * u * std::sin(t), h / 2 - h * u};
                 }};
    return {lateral, disk(r, -h / 2)};
  }
  if (shape == "pyramid") {
    const double s = uniform(rng, 1.0, 1.6) / 2;
    const double h = uniform(rng, 0.8, 1.4);
    const Vec3 apex{0, 0, h / 2};
    const Vec3 c[4] = {{-s, -s, -h / 2}, {s, -s, -h / 2}, {s, s, -h / 2}, {-s, s, -h / 2}};
    std::vector<Part> parts;
    for (int i = 0; i < 4; ++i) parts.push_back(triangle(apex, c[i], c[(i + 1) % 4]));
    parts.push_back(triangle(c[0], c[1], c[2]));
    parts.push_back(triangle(c[0], c[2], c[3]));
    return parts;
  }
  if (shape == "torus") {
    const double big = uniform(rng, 0.7, 1.0);
    const double small = uniform(rng, 0.2, 0.35);
    return {{1.0, [big, small](Rng& g) {
               for (;;) {
                 // Rejection on the tube angle gives area-uniform samples.
                 const double phi = uniform(g, 0, 2 * kPi);
                 if (uniform(g, 0, big + small) > big + small * std::cos(phi)) continue;
                 const double theta = uniform(g, 0, 2 * kPi);
                 const double ring = big + small * std::cos(phi);
                 return Vec3{ring * std::cos(theta), ring * std::sin(theta), small * std::sin(phi)};
               }
             }}};
  }
  throw ConfigError("unknown shape class '" + shape + "'");
}

[[noreturn]] void parse_error(const fs::path& path, std::size_t line, const std::string& msg) {
  throw DataError(path.string() + ":" + std::to_string(line) + ": " + msg);
}

template <typename T>
bool parse_number(std::string_view token, T& out) {
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
  return ec == std::errc{} && ptr == token.data() + token.size();
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names = {"sphere", "cube",    "cylinder", "torus",
                                                 "cone",   "pyramid", "capsule",  "ellipsoid"};
  return names;
}

PointCloud sample_shape(const std::string& shape, std::size_t points, double noise, Rng& rng) {
  if (points == 0) throw ConfigError("sample_shape: need at least one point");
  if (!(noise >= 0.0)) throw ConfigError("sample_shape: noise must be >= 0");
  const std::vector<Part> parts = shape_parts(shape, rng);
  std::vector<double> areas;
  for (const auto& p : parts) areas.push_back(p.area);
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::normal_distribution<double> jitter(0.0, noise > 0.0 ? noise : 1.0);
  PointCloud cloud;
  cloud.xyz.reserve(points * 3);
  for (std::size_t i = 0; i < points; ++i) {
    const Vec3 p = parts[pick(rng)].sample(rng);
    for (int d = 0; d < 3; ++d) cloud.xyz.push_back(p[d] + (noise > 0.0 ? jitter(rng) : 0.0));
  }
  return normalize_unit_sphere(cloud);
}

void DatasetConfig::validate() const {
  if (classes.size() < 2) throw ConfigError("dataset: need at least two classes");
  for (const auto& c : classes) {
    if (std::find(shape_names().begin(), shape_names().end(), c) == shape_names().end())
      throw ConfigError("dataset: unknown shape class '" + c + "'");
  }
  if (train_per_class == 0 || test_per_class == 0) throw ConfigError("dataset: samples per class must be >= 1");
  if (points < 2) throw ConfigError("dataset: points must be >= 2");
  if (!(noise >= 0.0)) throw ConfigError("dataset: noise must be >= 0");
}

Dataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset data;
  data.class_names = cfg.classes;
  const std::size_t per_class = cfg.train_per_class + cfg.test_per_class;
  for (std::size_t s = 0; s < per_class; ++s) {
    for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
      Rng rng(derive_seed(cfg.seed, "sample", {c, s}));
      PointCloud cloud = sample_shape(cfg.classes[c], cfg.points, cfg.noise, rng);
      cloud.label = static_cast<int>(c);
      (s < cfg.train_per_class ? data.train : data.test).push_back(std::move(cloud));
    }
  }
  return data;
}

void write_pcx(const fs::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "pcx 1 " << cloud.size() << " 3\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    out << format_double(cloud.xyz[3 * i]) << ' ' << format_double(cloud.xyz[3 * i + 1]) << ' '
        << format_double(cloud.xyz[3 * i + 2]) << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

PointCloud read_pcx(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open point cloud: " + path.string());
  std::string line;
  if (!std::getline(in, line)) parse_error(path, 1, "missing header");
  const auto head = split_ws(line);
  std::size_t n = 0;
  std::size_t c = 0;
  int version = 0;
  if (head.size() != 4 || head[0] != "pcx" || !parse_number(head[1], version) || !parse_number(head[2], n) ||
      !parse_number(head[3], c)) {
    parse_error(path, 1, "header must read 'pcx 1 <N> <C>'");
  }
  if (version != 1) parse_error(path, 1, "unsupported version " + std::to_string(version));
  if (c < 3) parse_error(path, 1, "need at least 3 columns");

  PointCloud cloud;
  cloud.xyz.reserve(n * 3);
  for (std::size_t row = 0; row < n; ++row) {
    const std::size_t lineno = row + 2;
    if (!std::getline(in, line)) parse_error(path, lineno, "expected " + std::to_string(n) + " rows");
    const auto tok = split_ws(line);
    if (tok.size() != c) {
      parse_error(path, lineno, "expected " + std::to_string(c) + " values, got " + std::to_string(tok.size()));
    }
    for (std::size_t k = 0; k < 3; ++k) {
      double v = 0.0;
      if (!parse_number(tok[k], v) || !std::isfinite(v)) parse_error(path, lineno, "bad number '" + std::string(tok[k]) + "'");
      cloud.xyz.push_back(v);
    }
  }
  while (std::getline(in, line)) {
    if (!split_ws(line).empty()) parse_error(path, n + 2, "unexpected data after " + std::to_string(n) + " rows");
  }
  return cloud;
}

PointCloud resample(const PointCloud& cloud, std::size_t target, Rng& rng) {
  const std::size_t n = cloud.size();
  if (n == 0) throw DataError("resample: empty cloud");
  if (target == 0) throw ConfigError("resample: target must be >= 1");
  if (target == n) return cloud;
  std::vector<std::size_t> pick;
  if (target < n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    pick.assign(all.begin(), all.begin() + static_cast<long>(target));
  } else {
    std::uniform_int_distribution<std::size_t> u(0, n - 1);
    for (std::size_t i = 0; i < target; ++i) pick.push_back(u(rng));
  }
  PointCloud out;
  out.label = cloud.label;
  out.xyz.reserve(3 * target);
  for (std::size_t i : pick) out.xyz.insert(out.xyz.end(), cloud.xyz.begin() + 3 * i, cloud.xyz.begin() + 3 * i + 3);
  return out;
}

PointCloud ingest(const fs::path& path, std::size_t target, std::uint64_t seed) {
  Rng rng(seed);
  return normalize_unit_sphere(resample(read_pcx(path), target, rng));
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "path,label,split\n";
  for (const auto& e : entries) out << e.path << ',' << e.label << ',' << e.split << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "path,label,split") parse_error(path, 1, "header must be 'path,label,split'");
  std::vector<ManifestEntry> entries;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    ManifestEntry e;
    std::string label;
    if (!std::getline(ss, e.path, ',') || !std::getline(ss, label, ',') || !std::getline(ss, e.split) ||
        !parse_number(std::string_view(label), e.label) || e.label < 0) {
      parse_error(path, lineno, "expected 'path,label,split'");
    }
    if (e.split != "train" && e.split != "test") parse_error(path, lineno, "split must be train or test");
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_dataset(const Dataset& data, const fs::path& dir) {
  std::error_code ec;
  for (const char* split : {"train", "test"}) {
    fs::create_directories(dir / split, ec);
    if (ec) throw DataError("cannot create " + (dir / split).string() + ": " + ec.message());
  }
  std::vector<ManifestEntry> entries;
  std::vector<std::size_t> counter(data.class_names.size(), 0);
  auto emit = [&](const std::vector<PointCloud>& clouds, const std::string& split) {
    std::fill(counter.begin(), counter.end(), 0);
    for (const auto& c : clouds) {
      const int label = c.label.value_or(-1);
      if (label < 0 || static_cast<std::size_t>(label) >= data.class_names.size())
        throw DataError("write_dataset: cloud without a valid label");
      char name[64];
      std::snprintf(name, sizeof name, "%04zu", counter[static_cast<std::size_t>(label)]++);
      const std::string rel = split + "/" + data.class_names[static_cast<std::size_t>(label)] + "_" + name + ".pcx";
      write_pcx(dir / rel, c);
      entries.push_back({rel, label, split});
    }
  };
  emit(data.train, "train");
  emit(data.test, "test");
  write_manifest(dir / "manifest.csv", entries);

  std::ofstream classes(dir / "classes.txt", std::ios::binary | std::ios::trunc);
  if (!classes) throw DataError("cannot open for writing: " + (dir / "classes.txt").string());
  for (const auto& n : data.class_names) classes << n << '\n';
}

Dataset load_dataset(const fs::path& dir, std::size_t points, std::uint64_t seed) {
  const auto entries = read_manifest(dir / "manifest.csv");
  if (entries.empty()) throw DataError("manifest lists no clouds: " + (dir / "manifest.csv").string());
  Dataset data;
  int max_label = 0;
  for (const auto& e : entries) max_label = std::max(max_label, e.label);
  std::ifstream classes(dir / "classes.txt");
  for (std::string line; classes && std::getline(classes, line);)
    if (!line.empty()) data.class_names.push_back(line);
  if (data.class_names.empty()) {
    for (int c = 0; c <= max_label; ++c) data.class_names.push_back("class" + std::to_string(c));
  }
  if (static_cast<std::size_t>(max_label) >= data.class_names.size())
    throw DataError("manifest label " + std::to_string(max_label) + " has no entry in classes.txt");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    PointCloud c = ingest(dir / entries[i].path, points, derive_seed(seed, "ingest", {i}));
    c.label = entries[i].label;
    (entries[i].split == "train" ? data.train : data.test).push_back(std::move(c));
  }
  return data;
}

}  // namespace mapr
