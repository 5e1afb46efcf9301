#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace mapr {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

// N x 3 coordinates stored row-major, plus an optional class label.
struct PointCloud {
  std::vector<double> xyz;
  std::optional<int> label;

  PointCloud() = default;
  explicit PointCloud(std::vector<double> coords, std::optional<int> lbl = std::nullopt);

  std::size_t size() const { return xyz.size() / 3; }
  bool empty() const { return xyz.empty(); }
  Vec3 point(std::size_t i) const { return {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]}; }
  std::span<double, 3> operator[](std::size_t i) { return std::span<double, 3>(xyz.data() + 3 * i, 3); }
  std::span<const double, 3> operator[](std::size_t i) const {
    return std::span<const double, 3>(xyz.data() + 3 * i, 3);
  }
};

double squared_distance(std::span<const double, 3> a, std::span<const double, 3> b);
Vec3 centroid(const PointCloud& cloud);
double max_norm(const PointCloud& cloud);

// Centers on the centroid and scales so the farthest point has norm 1.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

Mat3 rotation_z(double radians);
Mat3 rotation_axis_angle(const Vec3& axis, double radians);
PointCloud rotate(const PointCloud& cloud, const Mat3& rot);
PointCloud translate(const PointCloud& cloud, const Vec3& offset);
PointCloud permute(const PointCloud& cloud, std::span<const std::size_t> order);

}  // namespace mapr
