#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mapr/point_cloud.hpp"
#include "mapr/rng.hpp"

namespace mapr {

// sphere, cube, cylinder, torus, cone, pyramid, capsule, ellipsoid.
const std::vector<std::string>& shape_names();

// Surface sample of a randomly parameterised primitive with Gaussian noise,
// normalized to the unit sphere.
PointCloud sample_shape(const std::string& shape, std::size_t points, double noise, Rng& rng);

struct DatasetConfig {
  std::vector<std::string> classes = shape_names();
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 30;
  std::size_t points = 512;
  double noise = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<PointCloud> train;  // labelled
  std::vector<PointCloud> test;   // labelled
};

// Deterministic per seed; each sample draws from its own derived stream.
Dataset generate_dataset(const DatasetConfig& cfg);

// PCX text format: "pcx 1 <N> <C>" then N rows of C values. Only the first
// three columns are read as coordinates.
void write_pcx(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_pcx(const std::filesystem::path& path);

// Uniform random choice of `target` points: without replacement when
// shrinking, with replacement when growing, unchanged when equal.
PointCloud resample(const PointCloud& cloud, std::size_t target, Rng& rng);

// read_pcx -> resample -> normalize_unit_sphere.
PointCloud ingest(const std::filesystem::path& path, std::size_t target, std::uint64_t seed);

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  int label = 0;
  std::string split;  // "train" or "test"
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// Writes <dir>/classes.txt, <dir>/manifest.csv and <dir>/<split>/*.pcx.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
// Loads a directory written by write_dataset (or laid out the same way),
// ingesting every cloud to `points` with per-file seeds derived from `seed`.
Dataset load_dataset(const std::filesystem::path& dir, std::size_t points, std::uint64_t seed);

}  // namespace mapr
